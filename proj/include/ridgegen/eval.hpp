#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <limits>
#include <map>
#include <sstream>
#include <vector>

#include "ridgegen/appearance.hpp"
#include "ridgegen/dataset.hpp"
#include "ridgegen/recognition.hpp"

namespace ridgegen {

// Evaluation statistics: verification score sets and TAR@FAR operating
// points, intra-identity distance summaries, appearance-control precision,
// and score histograms with CSV/PNG emission.

struct StatSummary {
  double mean = 0.0;
  double std = 0.0;
  int64_t n = 0;

  void validate() const {
    check_integrity(n >= 1, "stat summary: need at least one sample");
    check_integrity(std >= 0.0, "stat summary: negative std");
  }

  nlohmann::json to_json() const { return {{"mean", mean}, {"std", std}, {"n", n}}; }

  static StatSummary from_json(const nlohmann::json& j) {
    StatSummary s;
    s.mean = j.at("mean").get<double>();
    s.std = j.at("std").get<double>();
    s.n = j.at("n").get<int64_t>();
    return s;
  }
};

// Two-pass mean and population standard deviation.
inline StatSummary summarize(const std::vector<double>& xs) {
  check_usage(!xs.empty(), "summarize: empty sample");
  StatSummary s;
  s.n = static_cast<int64_t>(xs.size());
  double sum = 0.0;
  for (double x : xs) {
    check_usage(std::isfinite(x), "summarize: non-finite sample");
    sum += x;
  }
  s.mean = sum / static_cast<double>(s.n);
  double sq = 0.0;
  for (double x : xs) sq += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(s.n));
  return s;
}

struct ScoreSet {
  std::vector<double> genuine;   // same-identity similarity, higher = more alike
  std::vector<double> impostor;  // cross-identity similarity

  void validate() const {
    for (double v : genuine)
      check_integrity(std::isfinite(v), "score set: non-finite genuine score");
    for (double v : impostor)
      check_integrity(std::isfinite(v), "score set: non-finite impostor score");
  }
};

namespace detail {

inline double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  check_usage(a.size() == b.size() && !a.empty(), "cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  check_usage(na > 0.0 && nb > 0.0, "cosine: zero-norm embedding");
  return dot / std::sqrt(na * nb);
}

}  // namespace detail

// Pair enumeration caps; beyond a cap, pairs are drawn uniformly with the
// seed (with replacement) instead of enumerated.
struct PairingProtocol {
  int64_t max_genuine_pairs = 1000000;
  int64_t max_impostor_pairs = 1000000;
  uint64_t seed = 0;

  void validate() const {
    check_config(max_genuine_pairs >= 1 && max_impostor_pairs >= 1,
                 "pairing protocol: caps must be positive");
  }

  nlohmann::json to_json() const {
    return {{"max_genuine_pairs", max_genuine_pairs},
            {"max_impostor_pairs", max_impostor_pairs},
            {"seed", seed}};
  }

  static PairingProtocol from_json(const nlohmann::json& j) {
    PairingProtocol p;
    p.max_genuine_pairs = j.value("max_genuine_pairs", p.max_genuine_pairs);
    p.max_impostor_pairs = j.value("max_impostor_pairs", p.max_impostor_pairs);
    p.seed = j.value("seed", p.seed);
    return p;
  }
};

// All same-identity pairs feed the genuine list and all cross-identity pairs
// the impostor list, subject to the protocol caps.
inline ScoreSet verification_scores(const std::vector<EmbeddingRecord>& records,
                                    const PairingProtocol& proto = {}) {
  proto.validate();
  std::map<std::string, std::vector<size_t>> by_identity;
  for (size_t i = 0; i < records.size(); ++i)
    by_identity[records[i].identity_label].push_back(i);
  check_usage(by_identity.size() >= 2,
              "verification: impostor scores need at least two identities");

  int64_t genuine_total = 0;
  for (const auto& [label, idx] : by_identity)
    genuine_total += static_cast<int64_t>(idx.size() * (idx.size() - 1) / 2);
  const int64_t all_pairs = static_cast<int64_t>(records.size()) *
                            (static_cast<int64_t>(records.size()) - 1) / 2;
  const int64_t impostor_total = all_pairs - genuine_total;
  check_usage(genuine_total >= 1, "verification: no same-identity pairs");

  ScoreSet out;
  auto score = [&](size_t i, size_t j) {
    return detail::cosine_similarity(records[i].vector, records[j].vector);
  };
  if (genuine_total <= proto.max_genuine_pairs) {
    for (const auto& [label, idx] : by_identity)
      for (size_t a = 0; a < idx.size(); ++a)
        for (size_t b = a + 1; b < idx.size(); ++b)
          out.genuine.push_back(score(idx[a], idx[b]));
  } else {
    Rng rng = Rng(proto.seed).derive(1);
    while (static_cast<int64_t>(out.genuine.size()) < proto.max_genuine_pairs) {
      const size_t i = rng.uniform_int(records.size());
      const size_t j = rng.uniform_int(records.size());
      if (i != j && records[i].identity_label == records[j].identity_label)
        out.genuine.push_back(score(i, j));
    }
  }
  if (impostor_total <= proto.max_impostor_pairs) {
    for (size_t i = 0; i < records.size(); ++i)
      for (size_t j = i + 1; j < records.size(); ++j)
        if (records[i].identity_label != records[j].identity_label)
          out.impostor.push_back(score(i, j));
  } else {
    Rng rng = Rng(proto.seed).derive(2);
    while (static_cast<int64_t>(out.impostor.size()) < proto.max_impostor_pairs) {
      const size_t i = rng.uniform_int(records.size());
      const size_t j = rng.uniform_int(records.size());
      if (records[i].identity_label != records[j].identity_label)
        out.impostor.push_back(score(i, j));
    }
  }
  out.validate();
  return out;
}

struct VerificationPoint {
  double tar = 0.0;
  double threshold = 0.0;
  double far_target = 0.0;
  int64_t n_genuine = 0;
  int64_t n_impostor = 0;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"tar", tar},
                        {"far_target", far_target},
                        {"n_genuine", n_genuine},
                        {"n_impostor", n_impostor}};
    if (std::isfinite(threshold))
      j["threshold"] = threshold;
    else
      j["threshold"] = "-inf";
    return j;
  }
};

// Smallest threshold whose empirical FAR (fraction of impostor scores >= t)
// stays within far_target; TAR is the fraction of genuine scores >= t. The
// threshold sits one representable step above the impostor score it must
// exclude, and is -inf when far_target admits every impostor.
inline VerificationPoint tar_at_far(const ScoreSet& scores, double far_target) {
  scores.validate();
  check_usage(!scores.genuine.empty(), "tar_at_far: empty genuine list");
  check_usage(!scores.impostor.empty(), "tar_at_far: empty impostor list");
  check_config(far_target >= 0.0 && far_target <= 1.0, "tar_at_far: far_target outside [0, 1]");

  std::vector<double> imp = scores.impostor;
  std::sort(imp.begin(), imp.end(), std::greater<double>());
  const int64_t m = static_cast<int64_t>(imp.size());
  int64_t allowed = 0;  // largest impostor count whose fraction stays within target
  while (allowed < m &&
         static_cast<double>(allowed + 1) / static_cast<double>(m) <= far_target)
    ++allowed;

  VerificationPoint pt;
  pt.far_target = far_target;
  pt.n_genuine = static_cast<int64_t>(scores.genuine.size());
  pt.n_impostor = m;
  pt.threshold = allowed >= m
                     ? -std::numeric_limits<double>::infinity()
                     : std::nextafter(imp[allowed], std::numeric_limits<double>::infinity());
  int64_t hits = 0;
  for (double g : scores.genuine)
    if (g >= pt.threshold) ++hits;
  pt.tar = static_cast<double>(hits) / static_cast<double>(pt.n_genuine);
  return pt;
}

// ---- paired-image statistics ----

// Maps one grayscale image to an embedding row.
using ImageEmbed = std::function<std::vector<double>(const Tensor<double>&)>;

template <typename T>
ImageEmbed recognizer_embed(const Recognizer<T>& model) {
  return [&model](const Tensor<double>& image) {
    check_usage(image.ndim() == 2, "recognizer embed: expected a 2-D image");
    Tensor<T> batch({1, 1, image.dim(0), image.dim(1)});
    for (int64_t i = 0; i < image.numel(); ++i) batch[i] = static_cast<T>(image[i]);
    Tensor<T> e = extract_embedding(model, batch);
    std::vector<double> out(e.numel());
    for (int64_t i = 0; i < e.numel(); ++i) out[i] = static_cast<double>(e[i]);
    return out;
  };
}

inline double embedding_distance(const ImageEmbed& embed, const Tensor<double>& a,
                                 const Tensor<double>& b) {
  const std::vector<double> ea = embed(a), eb = embed(b);
  check_usage(ea.size() == eb.size() && !ea.empty(), "embedding distance: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < ea.size(); ++i) {
    dot += ea[i] * eb[i];
    na += ea[i] * ea[i];
    nb += eb[i] * eb[i];
  }
  check_usage(na > 0.0 && nb > 0.0, "embedding distance: zero-norm embedding");
  return 1.0 - dot / std::sqrt(na * nb);
}

struct PairStats {
  StatSummary id_dist;
  StatSummary app_dist;

  nlohmann::json to_json() const {
    return {{"id_dist", id_dist.to_json()}, {"app_dist", app_dist.to_json()}};
  }
};

// Yields the i-th image pair as two 2-D grayscale images.
using PairSource = std::function<std::pair<Tensor<double>, Tensor<double>>(int64_t)>;

// Embedding distance and appearance distance summarized over n pairs from
// any source; the generator- and manifest-backed statistics below reduce to
// this.
inline PairStats paired_image_stats(const PairSource& pairs, int64_t n, const ImageEmbed& embed,
                                    const AppearanceFilterConfig& filter) {
  check_config(n >= 1, "paired stats: need at least one pair");
  filter.validate();
  std::vector<double> id_d, app_d;
  for (int64_t i = 0; i < n; ++i) {
    const auto [a, b] = pairs(i);
    id_d.push_back(embedding_distance(embed, a, b));
    app_d.push_back(appearance_distance(a, b, filter));
  }
  return {summarize(id_d), summarize(app_d)};
}

namespace detail {

template <typename T>
Tensor<double> rendered_pair(const GanState<T>& state, const Tensor<T>& z_id,
                             const Tensor<T>& z_app, uint64_t noise_seed) {
  NoGradGuard ng;
  Var<T> style =
      state.g.map_latents(constant(z_id.clone()), constant(z_app.clone()));
  return state.g.synthesize(style, noise_seed).value().template cast<double>();
}

template <typename T>
Tensor<T> normal_rows(Rng& rng, int64_t n, int64_t d) {
  Tensor<T> t({n, d});
  for (auto& v : t) v = static_cast<T>(rng.normal());
  return t;
}

}  // namespace detail

// Per synthetic identity: one pair sharing z_id with two distinct z_app;
// reports embedding distance (identity retention) and appearance distance
// (appearance spread). Deterministic in (state, seed, n).
template <typename T>
PairStats intra_class_stats(const GanState<T>& state, const ImageEmbed& embed,
                            const AppearanceFilterConfig& filter, int64_t n_identities,
                            uint64_t seed) {
  check_config(n_identities >= 1, "intra-class stats: need at least one identity");
  PairSource pairs = [&state, seed](int64_t i) {
    Rng rng = Rng(seed).derive(static_cast<uint64_t>(i) + 1);
    Tensor<T> z_id_row = detail::normal_rows<T>(rng, 1, state.cfg.d_id);
    Tensor<T> z_id({2, state.cfg.d_id});
    for (int64_t j = 0; j < state.cfg.d_id; ++j) z_id.at2(0, j) = z_id.at2(1, j) = z_id_row[j];
    Tensor<T> z_app = detail::normal_rows<T>(rng, 2, state.cfg.d_app);
    Tensor<double> both = detail::rendered_pair(state, z_id, z_app, rng.seed());
    const int64_t res = both.dim(2);
    Tensor<double> a({res, res}), b({res, res});
    for (int64_t p = 0; p < res * res; ++p) {
      a[p] = both[p];
      b[p] = both[res * res + p];
    }
    return std::make_pair(std::move(a), std::move(b));
  };
  return paired_image_stats(pairs, n_identities, embed, filter);
}

template <typename TG, typename TR>
PairStats intra_class_stats(const GanState<TG>& state, const Recognizer<TR>& model,
                            const AppearanceFilterConfig& filter, int64_t n_identities,
                            uint64_t seed) {
  return intra_class_stats(state, recognizer_embed(model), filter, n_identities, seed);
}

// Per pair: shared z_app with two distinct z_id; the appearance distance of
// such pairs measures how tightly the appearance latent pins the filtered
// image. Deterministic in (state, seed, n).
template <typename T>
StatSummary appearance_control_precision(const GanState<T>& state,
                                         const AppearanceFilterConfig& filter, int64_t n_pairs,
                                         uint64_t seed) {
  check_config(n_pairs >= 1, "appearance control: need at least one pair");
  filter.validate();
  std::vector<double> app_d;
  for (int64_t i = 0; i < n_pairs; ++i) {
    Rng rng = Rng(seed).derive(static_cast<uint64_t>(i) + 1);
    Tensor<T> z_id = detail::normal_rows<T>(rng, 2, state.cfg.d_id);
    Tensor<T> z_app_row = detail::normal_rows<T>(rng, 1, state.cfg.d_app);
    Tensor<T> z_app({2, state.cfg.d_app});
    for (int64_t j = 0; j < state.cfg.d_app; ++j) z_app.at2(0, j) = z_app.at2(1, j) = z_app_row[j];
    Tensor<double> both = detail::rendered_pair(state, z_id, z_app, rng.seed());
    const int64_t res = both.dim(2);
    Tensor<double> a({res, res}), b({res, res});
    for (int64_t p = 0; p < res * res; ++p) {
      a[p] = both[p];
      b[p] = both[res * res + p];
    }
    app_d.push_back(appearance_distance(a, b, filter));
  }
  return summarize(app_d);
}

// The same intra-identity statistics over every same-identity impression
// pair of a manifest. Identities with one impression are skipped with a
// warning.
inline PairStats real_data_reference_stats(const DatasetManifest& manifest,
                                           const ImageEmbed& embed,
                                           const AppearanceFilterConfig& filter) {
  validate_manifest_structure(manifest);
  filter.validate();
  std::map<std::string, std::vector<const ManifestRecord*>> by_identity;
  for (const auto& r : manifest.records) by_identity[r.identity_label].push_back(&r);

  std::vector<double> id_d, app_d;
  for (const auto& [label, recs] : by_identity) {
    if (recs.size() < 2) {
      std::cerr << "warning: identity " << label << " has a single impression; skipped\n";
      continue;
    }
    std::vector<Tensor<double>> images;
    for (const auto* r : recs) images.push_back(read_png_gray8(manifest.resolve_path(*r)));
    for (size_t a = 0; a < images.size(); ++a)
      for (size_t b = a + 1; b < images.size(); ++b) {
        id_d.push_back(embedding_distance(embed, images[a], images[b]));
        app_d.push_back(appearance_distance(images[a], images[b], filter));
      }
  }
  check_usage(!id_d.empty(), "real-data stats: no identity has two impressions");
  return {summarize(id_d), summarize(app_d)};
}

// ---- score artifacts ----

namespace detail {

inline std::string full_precision(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

// Columns: kind,score with kind in {genuine, impostor}.
inline void write_scores_csv(const ScoreSet& scores, const std::filesystem::path& path) {
  std::ofstream out(path);
  check_integrity(out.good(), "scores csv: cannot open " + path.string());
  out << "kind,score\n";
  for (double v : scores.genuine) out << "genuine," << detail::full_precision(v) << "\n";
  for (double v : scores.impostor) out << "impostor," << detail::full_precision(v) << "\n";
  check_integrity(out.good(), "scores csv: write failed for " + path.string());
}

struct ScoreHistogram {
  std::vector<double> edges;     // bins + 1 ascending edges over both lists
  std::vector<double> genuine;   // per-bin mass, sums to 1
  std::vector<double> impostor;  // per-bin mass, sums to 1
};

inline ScoreHistogram score_histogram(const ScoreSet& scores, int64_t bins) {
  scores.validate();
  check_config(bins >= 1, "histogram: need at least one bin");
  check_usage(!scores.genuine.empty() && !scores.impostor.empty(),
              "histogram: both score lists must be nonempty");

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* list : {&scores.genuine, &scores.impostor})
    for (double v : *list) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi <= lo) hi = lo + 1.0;  // single-valued scores occupy the first bin

  ScoreHistogram h;
  h.edges.resize(bins + 1);
  for (int64_t i = 0; i <= bins; ++i)
    h.edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  h.genuine.assign(bins, 0.0);
  h.impostor.assign(bins, 0.0);
  auto accumulate = [&](const std::vector<double>& list, std::vector<double>& mass) {
    const double w = 1.0 / static_cast<double>(list.size());
    for (double v : list) {
      int64_t idx = static_cast<int64_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
      idx = std::max<int64_t>(0, std::min<int64_t>(bins - 1, idx));
      mass[idx] += w;
    }
  };
  accumulate(scores.genuine, h.genuine);
  accumulate(scores.impostor, h.impostor);
  return h;
}

// Columns: bin_low,bin_high,genuine,impostor.
inline void write_histogram_csv(const ScoreHistogram& h, const std::filesystem::path& path) {
  std::ofstream out(path);
  check_integrity(out.good(), "histogram csv: cannot open " + path.string());
  out << "bin_low,bin_high,genuine,impostor\n";
  for (size_t i = 0; i + 1 < h.edges.size(); ++i)
    out << detail::full_precision(h.edges[i]) << "," << detail::full_precision(h.edges[i + 1])
        << "," << detail::full_precision(h.genuine[i]) << ","
        << detail::full_precision(h.impostor[i]) << "\n";
  check_integrity(out.good(), "histogram csv: write failed for " + path.string());
}

// Grayscale bar chart: genuine in the top panel, impostor in the bottom,
// each scaled to its own peak.
inline void render_histogram_png(const ScoreHistogram& h, const std::filesystem::path& path) {
  const int64_t bins = static_cast<int64_t>(h.genuine.size());
  const int64_t bar_w = std::max<int64_t>(2, 256 / bins);
  const int64_t width = bins * bar_w + 2;
  const int64_t panel_h = 80;
  Tensor<double> img = Tensor<double>::full({2 * panel_h + 3, width}, 1.0);

  auto draw_panel = [&](const std::vector<double>& mass, int64_t top, double shade) {
    double peak = 0.0;
    for (double m : mass) peak = std::max(peak, m);
    if (peak <= 0.0) peak = 1.0;
    for (int64_t b = 0; b < bins; ++b) {
      const int64_t bar_h =
          static_cast<int64_t>(std::lround(mass[b] / peak * static_cast<double>(panel_h - 2)));
      for (int64_t y = 0; y < bar_h; ++y)
        for (int64_t x = 0; x < bar_w - 1; ++x)
          img.at2(top + panel_h - 1 - y, 1 + b * bar_w + x) = shade;
    }
  };
  draw_panel(h.genuine, 0, 0.0);
  draw_panel(h.impostor, panel_h + 3, 0.45);
  for (int64_t x = 0; x < width; ++x) img.at2(panel_h + 1, x) = 0.7;
  write_png_gray8(path, img);
}

}  // namespace ridgegen
