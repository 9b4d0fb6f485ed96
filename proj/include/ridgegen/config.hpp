#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "ridgegen/contrastive.hpp"
#include "ridgegen/eval.hpp"
#include "ridgegen/generator.hpp"
#include "ridgegen/recognition.hpp"

namespace ridgegen {

// One config object drives every subcommand; a run directory always receives
// a JSON echo of the fully resolved config before any work starts, so runs
// are reproducible from the directory alone.

struct RunConfig {
  uint64_t seed = 1;
  std::string out_dir = "runs/default";
  std::string run_tag = "run";

  // generator training
  GeneratorConfig generator;
  ContrastiveConfig contrastive;
  std::string real_data_root;          // person/finger image tree
  std::string real_manifest;           // alternative: a prepared manifest
  double train_fraction = 0.8;
  std::string id_embedder_checkpoint;  // empty: seeded pixel projection
  int64_t id_embed_dim = 64;
  int64_t checkpoint_interval = 2000;
  int64_t sample_interval = 2000;
  int64_t heartbeat_interval = 100;
  int64_t sample_grid_ids = 4;
  int64_t sample_grid_apps = 4;

  // recognizer training
  BackboneSpec backbone;
  RecognizerTrainConfig recognizer_train;
  std::string train_manifest;
  int64_t input_resolution = 0;  // 0: follow generator.resolution

  // dataset generation
  std::string gan_checkpoint;
  std::string source_tag = "syn";
  int64_t num_identities = 100;
  int64_t impressions_per_id = 11;

  // evaluation
  std::string recognizer_checkpoint;
  std::string eval_manifest;
  std::vector<double> far_targets = {0.001, 0.01};
  int64_t eval_pairs = 1000;
  int64_t histogram_bins = 32;
  PairingProtocol pairing;

  // Fills the defaults that depend on other fields.
  void resolve() {
    if (input_resolution == 0) input_resolution = generator.resolution;
    if (contrastive.filter.target_h == 0 || contrastive.filter.target_w == 0)
      contrastive.filter =
          AppearanceFilterConfig::for_source(generator.resolution, generator.resolution);
  }

  void validate() const {
    check_config(!out_dir.empty(), "run config: out_dir must be set");
    check_config(!run_tag.empty(), "run config: run_tag must be set");
    check_config(train_fraction >= 0.0 && train_fraction <= 1.0,
                 "run config: train_fraction outside [0, 1]");
    check_config(id_embed_dim >= 1, "run config: id_embed_dim must be positive");
    check_config(checkpoint_interval >= 1 && sample_interval >= 1 && heartbeat_interval >= 1,
                 "run config: intervals must be positive");
    check_config(sample_grid_ids >= 1 && sample_grid_apps >= 1,
                 "run config: sample grid must be at least 1x1");
    check_config(input_resolution >= 0, "run config: input_resolution must be >= 0");
    check_config(num_identities >= 0, "run config: num_identities must be >= 0");
    check_config(impressions_per_id >= 1, "run config: impressions_per_id must be >= 1");
    check_config(!far_targets.empty(), "run config: need at least one far target");
    for (double f : far_targets)
      check_config(f >= 0.0 && f <= 1.0, "run config: far target outside [0, 1]");
    check_config(eval_pairs >= 1, "run config: eval_pairs must be positive");
    check_config(histogram_bins >= 1, "run config: histogram_bins must be positive");
    generator.validate();
    contrastive.validate();
    backbone.validate();
    recognizer_train.validate();
    pairing.validate();
  }

  nlohmann::json to_json() const {
    return {{"seed", seed},
            {"out_dir", out_dir},
            {"run_tag", run_tag},
            {"generator", generator.to_json()},
            {"contrastive", contrastive.to_json()},
            {"real_data_root", real_data_root},
            {"real_manifest", real_manifest},
            {"train_fraction", train_fraction},
            {"id_embedder_checkpoint", id_embedder_checkpoint},
            {"id_embed_dim", id_embed_dim},
            {"checkpoint_interval", checkpoint_interval},
            {"sample_interval", sample_interval},
            {"heartbeat_interval", heartbeat_interval},
            {"sample_grid_ids", sample_grid_ids},
            {"sample_grid_apps", sample_grid_apps},
            {"backbone", backbone.to_json()},
            {"recognizer_train", recognizer_train.to_json()},
            {"train_manifest", train_manifest},
            {"input_resolution", input_resolution},
            {"gan_checkpoint", gan_checkpoint},
            {"source_tag", source_tag},
            {"num_identities", num_identities},
            {"impressions_per_id", impressions_per_id},
            {"recognizer_checkpoint", recognizer_checkpoint},
            {"eval_manifest", eval_manifest},
            {"far_targets", far_targets},
            {"eval_pairs", eval_pairs},
            {"histogram_bins", histogram_bins},
            {"pairing", pairing.to_json()}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.run_tag = j.value("run_tag", c.run_tag);
    if (j.contains("generator")) c.generator = GeneratorConfig::from_json(j.at("generator"));
    if (j.contains("contrastive"))
      c.contrastive = ContrastiveConfig::from_json(j.at("contrastive"));
    c.real_data_root = j.value("real_data_root", c.real_data_root);
    c.real_manifest = j.value("real_manifest", c.real_manifest);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.id_embedder_checkpoint = j.value("id_embedder_checkpoint", c.id_embedder_checkpoint);
    c.id_embed_dim = j.value("id_embed_dim", c.id_embed_dim);
    c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
    c.sample_interval = j.value("sample_interval", c.sample_interval);
    c.heartbeat_interval = j.value("heartbeat_interval", c.heartbeat_interval);
    c.sample_grid_ids = j.value("sample_grid_ids", c.sample_grid_ids);
    c.sample_grid_apps = j.value("sample_grid_apps", c.sample_grid_apps);
    if (j.contains("backbone")) c.backbone = BackboneSpec::from_json(j.at("backbone"));
    if (j.contains("recognizer_train"))
      c.recognizer_train = RecognizerTrainConfig::from_json(j.at("recognizer_train"));
    c.train_manifest = j.value("train_manifest", c.train_manifest);
    c.input_resolution = j.value("input_resolution", c.input_resolution);
    c.gan_checkpoint = j.value("gan_checkpoint", c.gan_checkpoint);
    c.source_tag = j.value("source_tag", c.source_tag);
    c.num_identities = j.value("num_identities", c.num_identities);
    c.impressions_per_id = j.value("impressions_per_id", c.impressions_per_id);
    c.recognizer_checkpoint = j.value("recognizer_checkpoint", c.recognizer_checkpoint);
    c.eval_manifest = j.value("eval_manifest", c.eval_manifest);
    c.far_targets = j.value("far_targets", c.far_targets);
    c.eval_pairs = j.value("eval_pairs", c.eval_pairs);
    c.histogram_bins = j.value("histogram_bins", c.histogram_bins);
    if (j.contains("pairing")) c.pairing = PairingProtocol::from_json(j.at("pairing"));
    return c;
  }
};

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  check_config(in.good(), "run config: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error("run config: bad JSON in " + path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

// Provenance echo written into the run directory before any work starts.
inline void echo_run_config(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream out(out_dir / "config.json");
  check_integrity(out.good(), "run config: cannot write echo in " + out_dir.string());
  out << cfg.to_json().dump(2) << "\n";
  check_integrity(out.good(), "run config: echo write failed");
}

}  // namespace ridgegen
