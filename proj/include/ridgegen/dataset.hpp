#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ridgegen/generator.hpp"
#include "ridgegen/png_io.hpp"
#include "ridgegen/recognition.hpp"

namespace ridgegen {

// Dataset plumbing: ingesting identity-labeled real images with
// person-disjoint splits, generating synthetic identities from a trained
// generator, the duplication baseline, and merging. On disk a dataset is
// `root/<identity_label>/impression_<k>.png` plus `root/manifest.jsonl`.

struct ManifestRecord {
  std::string identity_label;
  std::string person_label;
  int64_t impression_index = 0;
  std::string image_path;  // relative to the manifest root unless absolute
  std::string split = "train";

  bool operator==(const ManifestRecord& o) const {
    return identity_label == o.identity_label && person_label == o.person_label &&
           impression_index == o.impression_index && image_path == o.image_path &&
           split == o.split;
  }
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;

  std::filesystem::path resolve_path(const ManifestRecord& r) const {
    const std::filesystem::path p(r.image_path);
    return p.is_absolute() ? p : root / p;
  }

  std::set<std::string> identity_labels() const {
    std::set<std::string> out;
    for (const auto& r : records) out.insert(r.identity_label);
    return out;
  }
};

// Structural invariants: non-empty labels, valid split tags, unique
// (identity, impression) pairs, one person and one split per identity, and
// person-disjoint train/test.
inline void validate_manifest_structure(const DatasetManifest& m) {
  std::map<std::string, std::string> identity_person;
  std::map<std::string, std::string> identity_split;
  std::map<std::string, std::string> person_split;
  std::set<std::pair<std::string, int64_t>> seen;
  for (const auto& r : m.records) {
    check_integrity(!r.identity_label.empty() && !r.person_label.empty(),
                    "manifest: empty label");
    check_integrity(r.split == "train" || r.split == "test",
                    "manifest: unknown split '" + r.split + "'");
    check_integrity(seen.insert({r.identity_label, r.impression_index}).second,
                    "manifest: duplicate impression " + std::to_string(r.impression_index) +
                        " for identity " + r.identity_label);
    auto [ip, fresh_i] = identity_person.try_emplace(r.identity_label, r.person_label);
    check_integrity(fresh_i || ip->second == r.person_label,
                    "manifest: identity " + r.identity_label + " spans two persons");
    auto [is, fresh_s] = identity_split.try_emplace(r.identity_label, r.split);
    check_integrity(fresh_s || is->second == r.split,
                    "manifest: identity " + r.identity_label + " spans two splits");
    auto [ps, fresh_p] = person_split.try_emplace(r.person_label, r.split);
    check_integrity(fresh_p || ps->second == r.split,
                    "manifest: person " + r.person_label + " appears in both splits");
  }
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  check_integrity(out.good(), "manifest: cannot open " + path.string() + " for writing");
  for (const auto& r : m.records) {
    nlohmann::json j = {{"identity", r.identity_label},
                        {"person", r.person_label},
                        {"impression", r.impression_index},
                        {"path", r.image_path},
                        {"split", r.split}};
    out << j.dump() << "\n";
  }
  check_integrity(out.good(), "manifest: write failed for " + path.string());
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  check_integrity(in.good(), "manifest: cannot open " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.identity_label = j.at("identity").get<std::string>();
      r.person_label = j.at("person").get<std::string>();
      r.impression_index = j.at("impression").get<int64_t>();
      r.image_path = j.at("path").get<std::string>();
      r.split = j.at("split").get<std::string>();
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw integrity_error("manifest: bad record at " + path.string() + ":" +
                            std::to_string(lineno) + ": " + e.what());
    }
  }
  validate_manifest_structure(m);
  return m;
}

// Every referenced file must exist and decode to the expected square
// resolution (0 skips the resolution check).
inline void verify_dataset_files(const DatasetManifest& m, int64_t expected_resolution) {
  validate_manifest_structure(m);
  for (const auto& r : m.records) {
    const auto p = m.resolve_path(r);
    Tensor<double> img;
    try {
      img = read_png_gray8(p);
    } catch (const std::exception& e) {
      throw integrity_error("dataset: identity " + r.identity_label + ": " + e.what());
    }
    if (expected_resolution > 0)
      check_integrity(img.dim(0) == expected_resolution && img.dim(1) == expected_resolution,
                      "dataset: " + p.string() + " is " + shape_str(img.shape()) +
                          ", expected side " + std::to_string(expected_resolution));
  }
}

// ---- real-data ingest ----

// Directory layout: root/<person>/<finger>/<impressions>.png. Identity is
// person x finger; the split is person-disjoint and deterministic in the
// seed.
inline DatasetManifest ingest_real_dataset(const std::filesystem::path& root,
                                           double train_fraction, uint64_t seed) {
  namespace fs = std::filesystem;
  check_config(train_fraction >= 0.0 && train_fraction <= 1.0,
               "ingest: train_fraction must be in [0, 1]");
  check_integrity(fs::is_directory(root), "ingest: " + root.string() + " is not a directory");

  std::vector<std::string> persons;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) persons.push_back(e.path().filename().string());
  std::sort(persons.begin(), persons.end());
  check_integrity(!persons.empty(), "ingest: no person directories under " + root.string());

  Rng rng(seed);
  for (size_t i = persons.size() - 1; i > 0; --i)
    std::swap(persons[i], persons[rng.uniform_int(i + 1)]);
  const size_t n_train =
      static_cast<size_t>(std::llround(train_fraction * static_cast<double>(persons.size())));

  DatasetManifest m;
  m.root = root;
  for (size_t pi = 0; pi < persons.size(); ++pi) {
    const std::string& person = persons[pi];
    const std::string split = pi < n_train ? "train" : "test";
    std::vector<std::string> fingers;
    for (const auto& e : fs::directory_iterator(root / person))
      if (e.is_directory()) fingers.push_back(e.path().filename().string());
    std::sort(fingers.begin(), fingers.end());
    check_integrity(!fingers.empty(), "ingest: person " + person + " has no finger folders");
    for (const std::string& finger : fingers) {
      std::vector<std::string> files;
      for (const auto& e : fs::directory_iterator(root / person / finger))
        if (e.is_regular_file() && e.path().extension() == ".png")
          files.push_back(e.path().filename().string());
      std::sort(files.begin(), files.end());
      check_integrity(!files.empty(),
                      "ingest: identity " + person + "_" + finger + " has no images");
      for (size_t k = 0; k < files.size(); ++k) {
        ManifestRecord r;
        r.identity_label = person + "_" + finger;
        r.person_label = person;
        r.impression_index = static_cast<int64_t>(k + 1);
        r.image_path = person + "/" + finger + "/" + files[k];
        r.split = split;
        m.records.push_back(std::move(r));
      }
    }
  }
  validate_manifest_structure(m);
  return m;
}

// ---- synthetic generation ----

// One synthetic identity: a single ID latent paired with K distinct
// appearance latents.
struct SyntheticIdentitySpec {
  std::vector<double> z_id;
  std::vector<std::vector<double>> z_app_list;
  uint64_t seed = 0;

  int64_t impressions() const { return static_cast<int64_t>(z_app_list.size()); }

  void validate() const {
    check_config(!z_id.empty(), "synthetic identity: empty id latent");
    check_config(impressions() >= 1, "synthetic identity: need at least one appearance latent");
    for (const auto& a : z_app_list)
      check_config(a.size() == z_app_list[0].size(),
                   "synthetic identity: inconsistent appearance dimensions");
    for (size_t i = 0; i < z_app_list.size(); ++i)
      for (size_t j = i + 1; j < z_app_list.size(); ++j)
        check_config(z_app_list[i] != z_app_list[j],
                     "synthetic identity: appearance latents must be distinct");
  }
};

inline SyntheticIdentitySpec sample_synthetic_identity(uint64_t seed, const LatentDims& dims,
                                                       int64_t impressions) {
  dims.validate();
  check_config(impressions >= 1, "synthetic identity: need at least one impression");
  Rng rng(seed);
  SyntheticIdentitySpec spec;
  spec.seed = seed;
  spec.z_id.resize(dims.d_id);
  for (auto& v : spec.z_id) v = rng.normal();
  spec.z_app_list.resize(impressions);
  for (auto& app : spec.z_app_list) {
    app.resize(dims.d_app);
    for (auto& v : app) v = rng.normal();
  }
  spec.validate();
  return spec;
}

// K impressions of one identity: [K, 1, res, res], deterministic in the spec.
template <typename T>
Tensor<T> generate_synthetic_identity(const GanState<T>& state,
                                      const SyntheticIdentitySpec& spec) {
  spec.validate();
  const int64_t k = spec.impressions();
  const int64_t d_id = state.cfg.d_id, d_app = state.cfg.d_app;
  check_usage(static_cast<int64_t>(spec.z_id.size()) == d_id &&
                  static_cast<int64_t>(spec.z_app_list[0].size()) == d_app,
              "synthetic identity: latent dims do not match the generator");
  Tensor<T> z_id({k, d_id});
  Tensor<T> z_app({k, d_app});
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = 0; j < d_id; ++j) z_id.at2(i, j) = static_cast<T>(spec.z_id[j]);
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = 0; j < d_app; ++j)
      z_app.at2(i, j) = static_cast<T>(spec.z_app_list[i][j]);
  NoGradGuard ng;
  Var<T> style = state.g.map_latents(constant(std::move(z_id)), constant(std::move(z_app)));
  return state.g.synthesize(style, spec.seed).value();
}

namespace detail {

inline std::string zero_pad(int64_t value, int width) {
  std::string s = std::to_string(value);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

inline std::string impression_file(int64_t k) {
  return "impression_" + zero_pad(k, 2) + ".png";
}

template <typename T>
Tensor<double> nth_image(const Tensor<T>& batch, int64_t i) {
  const int64_t h = batch.dim(2), w = batch.dim(3);
  Tensor<double> out({h, w});
  const T* src = batch.data() + i * h * w;
  for (int64_t p = 0; p < h * w; ++p) out[p] = static_cast<double>(src[p]);
  return out;
}

}  // namespace detail

// Writes N identities of K impressions each under out_root and returns the
// manifest (also saved as out_root/manifest.jsonl). The dataset is a pure
// function of (generator state, seed, N, K): identity i draws its latents
// from a stream derived from (seed, i), so interrupted runs resume by
// skipping identities whose files already exist, byte-identically.
template <typename T>
DatasetManifest generate_dataset(const GanState<T>& state, const std::filesystem::path& out_root,
                                 const std::string& source_tag, int64_t num_identities,
                                 int64_t impressions_per_identity, uint64_t seed) {
  namespace fs = std::filesystem;
  check_config(num_identities >= 0, "generate_dataset: negative identity count");
  check_config(impressions_per_identity >= 1, "generate_dataset: need at least one impression");
  check_config(!source_tag.empty() && source_tag.find('/') == std::string::npos,
               "generate_dataset: source tag must be a non-empty path-free string");
  fs::create_directories(out_root);

  const LatentDims dims{state.cfg.d_id, state.cfg.d_app};
  Rng root_rng(seed);
  DatasetManifest m;
  m.root = out_root;
  for (int64_t i = 0; i < num_identities; ++i) {
    const std::string label = source_tag + "_" + detail::zero_pad(i, 6);
    const fs::path dir = out_root / label;
    bool complete = fs::is_directory(dir);
    for (int64_t k = 1; complete && k <= impressions_per_identity; ++k)
      complete = fs::is_regular_file(dir / detail::impression_file(k));
    if (!complete) {
      try {
        fs::create_directories(dir);
        const SyntheticIdentitySpec spec = sample_synthetic_identity(
            root_rng.derive(static_cast<uint64_t>(i) + 1).seed(), dims,
            impressions_per_identity);
        Tensor<T> images = generate_synthetic_identity(state, spec);
        for (int64_t k = 1; k <= impressions_per_identity; ++k)
          write_png_gray8(dir / detail::impression_file(k), detail::nth_image(images, k - 1));
      } catch (const integrity_error& e) {
        throw integrity_error("generate_dataset: identity " + std::to_string(i) + " (" + label +
                              "): " + e.what());
      }
    }
    for (int64_t k = 1; k <= impressions_per_identity; ++k) {
      ManifestRecord r;
      r.identity_label = label;
      r.person_label = label;
      r.impression_index = k;
      r.image_path = label + "/" + detail::impression_file(k);
      r.split = "train";
      m.records.push_back(std::move(r));
    }
  }
  save_manifest(m, out_root / "manifest.jsonl");
  return m;
}

// Duplication baseline: each source image becomes one identity whose K
// impressions are copies of that image.
inline DatasetManifest duplicate_baseline(const std::vector<Tensor<double>>& images,
                                          const std::filesystem::path& out_root,
                                          const std::string& source_tag, int64_t impressions) {
  namespace fs = std::filesystem;
  check_config(impressions >= 1, "duplicate_baseline: need at least one impression");
  check_config(!source_tag.empty() && source_tag.find('/') == std::string::npos,
               "duplicate_baseline: source tag must be a non-empty path-free string");
  fs::create_directories(out_root);
  DatasetManifest m;
  m.root = out_root;
  for (size_t i = 0; i < images.size(); ++i) {
    const std::string label = source_tag + "_" + detail::zero_pad(static_cast<int64_t>(i), 6);
    const fs::path dir = out_root / label;
    fs::create_directories(dir);
    for (int64_t k = 1; k <= impressions; ++k) {
      write_png_gray8(dir / detail::impression_file(k), images[i]);
      ManifestRecord r;
      r.identity_label = label;
      r.person_label = label;
      r.impression_index = k;
      r.image_path = label + "/" + detail::impression_file(k);
      r.split = "train";
      m.records.push_back(std::move(r));
    }
  }
  save_manifest(m, out_root / "manifest.jsonl");
  return m;
}

// Union of manifests with disjoint identity label sets. Record paths are
// resolved against their source roots so the merged manifest stands alone.
inline DatasetManifest merge_datasets(const std::vector<DatasetManifest>& parts) {
  DatasetManifest merged;
  std::set<std::string> labels;
  for (const auto& part : parts) {
    const auto part_labels = part.identity_labels();
    for (const auto& l : part_labels)
      check_integrity(labels.insert(l).second,
                      "merge: identity label collision on '" + l + "'");
    for (const auto& r : part.records) {
      ManifestRecord out = r;
      out.image_path = part.resolve_path(r).string();
      merged.records.push_back(std::move(out));
    }
  }
  validate_manifest_structure(merged);
  return merged;
}

// Inverse of merge for source-prefixed labels: groups records by the label
// prefix before the final underscore.
inline std::map<std::string, DatasetManifest> split_by_source(const DatasetManifest& m) {
  std::map<std::string, DatasetManifest> out;
  for (const auto& r : m.records) {
    const auto cut = r.identity_label.rfind('_');
    const std::string tag = cut == std::string::npos ? r.identity_label
                                                     : r.identity_label.substr(0, cut);
    auto& part = out[tag];
    part.root = m.root;
    part.records.push_back(r);
  }
  return out;
}

// Loads manifest images into memory for recognizer training. Labels are
// indexed by sorted identity name; an empty split selects every record.
inline LabeledImageSet manifest_to_image_set(const DatasetManifest& m, int64_t resolution,
                                             const std::string& split = "") {
  std::vector<const ManifestRecord*> chosen;
  std::set<std::string> labels;
  for (const auto& r : m.records)
    if (split.empty() || r.split == split) {
      chosen.push_back(&r);
      labels.insert(r.identity_label);
    }
  check_config(!chosen.empty(), "image set: no records match split '" + split + "'");

  LabeledImageSet data;
  data.label_names.assign(labels.begin(), labels.end());
  std::map<std::string, int64_t> index;
  for (size_t i = 0; i < data.label_names.size(); ++i)
    index[data.label_names[i]] = static_cast<int64_t>(i);

  const int64_t n = static_cast<int64_t>(chosen.size());
  data.images = Tensor<float>({n, 1, resolution, resolution});
  for (int64_t i = 0; i < n; ++i) {
    Tensor<double> img = read_png_gray8(m.resolve_path(*chosen[i]));
    check_integrity(img.dim(0) == resolution && img.dim(1) == resolution,
                    "image set: " + chosen[i]->image_path + " is " + shape_str(img.shape()) +
                        ", expected side " + std::to_string(resolution));
    float* dst = data.images.data() + i * resolution * resolution;
    for (int64_t p = 0; p < resolution * resolution; ++p) dst[p] = static_cast<float>(img[p]);
    data.labels.push_back(index[chosen[i]->identity_label]);
  }
  return data;
}

// ---- toy real data ----

// Synthetic stand-in for a real fingerprint corpus: each identity is a
// curved oriented ridge pattern; impressions vary by small affine jitter,
// contrast, brightness, and pixel noise. Layout matches ingest_real_dataset.
inline void make_toy_real_dataset(const std::filesystem::path& root, int64_t persons,
                                  int64_t fingers, int64_t impressions, int64_t resolution,
                                  uint64_t seed) {
  namespace fs = std::filesystem;
  check_config(persons >= 1 && fingers >= 1 && impressions >= 1,
               "toy dataset: counts must be positive");
  check_config(resolution >= 8, "toy dataset: resolution must be >= 8");
  Rng root_rng(seed);
  const double res = static_cast<double>(resolution);
  for (int64_t p = 0; p < persons; ++p)
    for (int64_t f = 0; f < fingers; ++f) {
      Rng id_rng = root_rng.derive(static_cast<uint64_t>(p) * 1000 + f + 1);
      const double freq = id_rng.uniform(0.10, 0.25);
      const double theta = id_rng.uniform(0.0, M_PI);
      const double phase = id_rng.uniform(0.0, 2.0 * M_PI);
      const double curve = id_rng.uniform(-0.5, 0.5);
      const double c = (res - 1) / 2.0;
      Tensor<double> pattern({resolution, resolution});
      for (int64_t y = 0; y < resolution; ++y)
        for (int64_t x = 0; x < resolution; ++x) {
          const double u = (x - c) * std::cos(theta) + (y - c) * std::sin(theta);
          const double v = -(x - c) * std::sin(theta) + (y - c) * std::cos(theta);
          pattern.at2(y, x) =
              0.5 + 0.45 * std::sin(2.0 * M_PI * freq * (u + curve * v * v / res) + phase);
        }

      const fs::path dir =
          root / ("person_" + detail::zero_pad(p, 3)) / ("finger_" + detail::zero_pad(f, 2));
      fs::create_directories(dir);
      for (int64_t k = 1; k <= impressions; ++k) {
        const double angle = id_rng.uniform(-10.0, 10.0) * M_PI / 180.0;
        const double tx = id_rng.uniform(-0.05, 0.05) * res;
        const double ty = id_rng.uniform(-0.05, 0.05) * res;
        const double zoom = id_rng.uniform(0.95, 1.05);
        const double contrast = id_rng.uniform(0.7, 1.1);
        const double bright = id_rng.uniform(-0.1, 0.1);
        Tensor<double> img = affine_warp(pattern, angle, tx, ty, zoom, 0.5);
        for (auto& val : img) {
          val = 0.5 + contrast * (val - 0.5) + bright + 0.03 * id_rng.normal();
          val = std::min(1.0, std::max(0.0, val));
        }
        write_png_gray8(dir / detail::impression_file(k), img);
      }
    }
}

}  // namespace ridgegen
