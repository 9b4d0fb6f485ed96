#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "ridgegen/config.hpp"
#include "ridgegen/eval.hpp"
#include "ridgegen/log.hpp"

namespace fs = std::filesystem;
using namespace ridgegen;

namespace {

constexpr uint64_t kIdEmbedStream = 9001;
constexpr uint64_t kSampleStream = 9002;

void write_json_file(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  check_integrity(out.good(), "cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
  check_integrity(out.good(), "write failed for " + path.string());
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  check_config(in.good(), "cannot open " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw integrity_error("bad JSON in " + path.string() + ": " + e.what());
  }
}

// Identity embedder for the contrastive loss: a frozen recognizer when a
// checkpoint is configured, otherwise a seeded fixed pixel projection.
std::function<Var<float>(const Var<float>&)> make_id_embed(const RunConfig& run,
                                                           int64_t resolution,
                                                           std::string* description) {
  if (!run.id_embedder_checkpoint.empty()) {
    auto model = std::make_shared<Recognizer<float>>(
        load_recognizer<float>(run.id_embedder_checkpoint));
    check_config(model->input_resolution() == resolution,
                 "train-gan: id embedder expects resolution " +
                     std::to_string(model->input_resolution()) + ", generator produces " +
                     std::to_string(resolution));
    *description = "recognizer:" + run.id_embedder_checkpoint;
    return [model](const Var<float>& images) { return model->embed(images); };
  }
  Rng rng = Rng(run.seed).derive(kIdEmbedStream);
  Tensor<float> w = Tensor<float>::randn({resolution * resolution, run.id_embed_dim}, rng);
  *description = "projection:" + std::to_string(run.id_embed_dim);
  return [w, resolution](const Var<float>& images) {
    return matmul(reshape(images, {images.dim(0), resolution * resolution}),
                  constant(w.clone()));
  };
}

Tensor<float> sample_real_batch(const LabeledImageSet& data, Rng& rng, int64_t batch) {
  const int64_t px = data.images.dim(2) * data.images.dim(3);
  Tensor<float> out({batch, 1, data.images.dim(2), data.images.dim(3)});
  for (int64_t i = 0; i < batch; ++i) {
    const int64_t j = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(data.size())));
    std::copy(data.images.data() + j * px, data.images.data() + (j + 1) * px,
              out.data() + i * px);
  }
  return out;
}

// Grid mirroring the disentanglement layout: each row shares one appearance
// latent, each column shares one identity latent.
void write_sample_grid(const GanState<float>& state, const fs::path& path, int64_t n_ids,
                       int64_t n_apps, uint64_t seed) {
  NoGradGuard ng;
  Rng rng = Rng(seed).derive(kSampleStream);
  Tensor<float> ids = Tensor<float>::randn({n_ids, state.cfg.d_id}, rng);
  Tensor<float> apps = Tensor<float>::randn({n_apps, state.cfg.d_app}, rng);
  const int64_t n = n_ids * n_apps;
  Tensor<float> z_id({n, state.cfg.d_id});
  Tensor<float> z_app({n, state.cfg.d_app});
  for (int64_t a = 0; a < n_apps; ++a)
    for (int64_t i = 0; i < n_ids; ++i) {
      const int64_t r = a * n_ids + i;
      for (int64_t c = 0; c < state.cfg.d_id; ++c) z_id.at2(r, c) = ids.at2(i, c);
      for (int64_t c = 0; c < state.cfg.d_app; ++c) z_app.at2(r, c) = apps.at2(a, c);
    }
  Var<float> style =
      state.g.map_latents(constant(std::move(z_id)), constant(std::move(z_app)));
  Tensor<float> images = state.g.synthesize(style, seed).value();
  const int64_t res = images.dim(2);
  Tensor<double> grid({n_apps * res, n_ids * res});
  for (int64_t a = 0; a < n_apps; ++a)
    for (int64_t i = 0; i < n_ids; ++i) {
      const float* src = images.data() + (a * n_ids + i) * res * res;
      for (int64_t y = 0; y < res; ++y)
        for (int64_t x = 0; x < res; ++x)
          grid.at2(a * res + y, i * res + x) = static_cast<double>(src[y * res + x]);
    }
  write_png_gray8(path, grid);
}

AppearanceFilterConfig eval_filter(const RunConfig& run, int64_t resolution) {
  AppearanceFilterConfig f = run.contrastive.filter;
  if (f.target_h == 0 || f.target_w == 0)
    f = AppearanceFilterConfig::for_source(resolution, resolution);
  return f;
}

int cmd_train_gan(RunConfig run, bool resume) {
  run.resolve();
  run.validate();
  check_config(!run.real_data_root.empty() || !run.real_manifest.empty(),
               "train-gan: set real_data_root or real_manifest");
  const fs::path out = run.out_dir;
  echo_run_config(run, out);
  std::cout << "config echoed to " << (out / "config.json").string() << "\n";

  DatasetManifest manifest =
      run.real_manifest.empty()
          ? ingest_real_dataset(run.real_data_root, run.train_fraction, run.seed)
          : load_manifest(run.real_manifest);
  LabeledImageSet real = manifest_to_image_set(manifest, run.generator.resolution, "train");
  std::cout << "real data: " << real.size() << " images, " << real.label_names.size()
            << " identities\n";

  fs::create_directories(out / "checkpoints");
  fs::create_directories(out / "samples");
  const fs::path latest = out / "checkpoints" / "gan_latest.ckpt";

  bool resumed = false;
  GanState<float> state = [&] {
    if (resume && fs::is_regular_file(latest)) {
      resumed = true;
      return GanState<float>::load(latest);
    }
    return GanState<float>::init(run.generator, run.contrastive, run.seed);
  }();
  if (resumed) std::cout << "resumed from step " << state.step << "\n";

  std::string embed_desc;
  const auto embed = make_id_embed(run, state.cfg.resolution, &embed_desc);
  std::cout << "id embedder: " << embed_desc << "\n";

  const int64_t total = run.generator.total_steps;
  TrainingCsvLog log(out / "train_log.csv", resumed);
  while (state.step < total) {
    const int64_t s = state.step;
    const BatchPlan plan = state.next_plan();
    const Tensor<float> real_batch = sample_real_batch(real, state.rng, state.cfg.batch_size);
    const StepReport rep = gan_train_step(state, plan, real_batch, embed);
    log.log(s, rep);
    heartbeat(std::cout, s + 1, total, rep, run.heartbeat_interval);
    if ((s + 1) % run.checkpoint_interval == 0 || s + 1 == total) {
      state.save(out / "checkpoints" / ("gan_step_" + detail::zero_pad(s + 1, 6) + ".ckpt"));
      state.save(latest);
    }
    if ((s + 1) % run.sample_interval == 0 || s + 1 == total)
      write_sample_grid(state, out / "samples" / ("step_" + detail::zero_pad(s + 1, 6) + ".png"),
                        run.sample_grid_ids, run.sample_grid_apps, run.seed);
  }
  std::cout << "training complete at step " << state.step << "; checkpoint " << latest.string()
            << "\n";
  return 0;
}

int cmd_train_recognizer(RunConfig run, const std::string& manifest_flag) {
  run.resolve();
  run.validate();
  const std::string manifest_path =
      manifest_flag.empty() ? run.train_manifest : manifest_flag;
  check_config(!manifest_path.empty(), "train-recognizer: set --manifest or train_manifest");
  const fs::path out = run.out_dir;
  echo_run_config(run, out);
  std::cout << "config echoed to " << (out / "config.json").string() << "\n";

  DatasetManifest manifest = load_manifest(manifest_path);
  LabeledImageSet data = manifest_to_image_set(manifest, run.input_resolution, "train");
  data.validate();
  std::cout << "training data: " << data.size() << " images, " << data.label_names.size()
            << " identities at " << run.input_resolution << "px\n";

  Rng rng(run.seed);
  Recognizer<float> model(run.backbone, run.input_resolution,
                          static_cast<int64_t>(data.label_names.size()), rng);
  const auto stats = train_recognizer(model, data, run.recognizer_train);
  for (size_t e = 0; e < stats.size(); ++e)
    std::cout << "epoch " << (e + 1) << "/" << stats.size() << " loss=" << stats[e].loss
              << " accuracy=" << stats[e].accuracy << "\n";

  save_recognizer(model, out / "recognizer.ckpt", data.label_names);
  write_epoch_csv(stats, out / "train_recognizer.csv");
  std::cout << "recognizer saved to " << (out / "recognizer.ckpt").string() << "\n";
  return 0;
}

int cmd_gen_dataset(RunConfig run) {
  run.resolve();
  run.validate();
  check_config(!run.gan_checkpoint.empty(), "gen-dataset: set --gan or gan_checkpoint");
  const fs::path out = run.out_dir;
  echo_run_config(run, out);

  GanState<float> state = GanState<float>::load(run.gan_checkpoint);
  DatasetManifest m = generate_dataset(state, out, run.source_tag, run.num_identities,
                                       run.impressions_per_id, run.seed);
  std::cout << "wrote " << m.identity_labels().size() << " identities x "
            << run.impressions_per_id << " impressions (" << m.records.size() << " images) to "
            << out.string() << "\n";
  std::cout << "manifest: " << (out / "manifest.jsonl").string() << "\n";
  return 0;
}

int cmd_eval_intra(RunConfig run) {
  run.resolve();
  run.validate();
  check_config(!run.gan_checkpoint.empty(), "eval-intra: set --gan or gan_checkpoint");
  check_config(!run.recognizer_checkpoint.empty(),
               "eval-intra: set --recognizer or recognizer_checkpoint");
  const fs::path out = run.out_dir;
  echo_run_config(run, out);

  GanState<float> state = GanState<float>::load(run.gan_checkpoint);
  Recognizer<float> model = load_recognizer<float>(run.recognizer_checkpoint);
  check_config(model.input_resolution() == state.cfg.resolution,
               "eval-intra: recognizer resolution " +
                   std::to_string(model.input_resolution()) + " != generator resolution " +
                   std::to_string(state.cfg.resolution));
  const AppearanceFilterConfig filter = eval_filter(run, state.cfg.resolution);

  const PairStats stats = intra_class_stats(state, model, filter, run.eval_pairs, run.seed);
  nlohmann::json fragment = {{"intra_class",
                              {{"id_dist", stats.id_dist.to_json()},
                               {"app_dist", stats.app_dist.to_json()},
                               {"n_identities", run.eval_pairs},
                               {"seed", run.seed}}}};
  if (!run.real_manifest.empty()) {
    DatasetManifest rm = load_manifest(run.real_manifest);
    const PairStats real = real_data_reference_stats(rm, recognizer_embed(model), filter);
    fragment["real_reference"] = {{"id_dist", real.id_dist.to_json()},
                                  {"app_dist", real.app_dist.to_json()}};
  }
  write_json_file(fragment, out / "intra.json");
  std::cout << "intra-class over " << run.eval_pairs << " identities: id_dist mean "
            << stats.id_dist.mean << " +/- " << stats.id_dist.std << ", app_dist mean "
            << stats.app_dist.mean << " +/- " << stats.app_dist.std << "\n";
  std::cout << "fragment: " << (out / "intra.json").string() << "\n";
  return 0;
}

int cmd_eval_control(RunConfig run) {
  run.resolve();
  run.validate();
  check_config(!run.gan_checkpoint.empty(), "eval-control: set --gan or gan_checkpoint");
  const fs::path out = run.out_dir;
  echo_run_config(run, out);

  GanState<float> state = GanState<float>::load(run.gan_checkpoint);
  const AppearanceFilterConfig filter = eval_filter(run, state.cfg.resolution);
  const StatSummary s = appearance_control_precision(state, filter, run.eval_pairs, run.seed);
  write_json_file({{"appearance_control",
                    {{"app_dist", s.to_json()}, {"n_pairs", run.eval_pairs}, {"seed", run.seed}}}},
                  out / "control.json");
  std::cout << "appearance control over " << run.eval_pairs << " pairs: app_dist mean " << s.mean
            << " +/- " << s.std << "\n";
  std::cout << "fragment: " << (out / "control.json").string() << "\n";
  return 0;
}

int cmd_eval_verify(RunConfig run, const std::string& manifest_flag) {
  run.resolve();
  run.validate();
  check_config(!run.recognizer_checkpoint.empty(),
               "eval-verify: set --recognizer or recognizer_checkpoint");
  const std::string manifest_path = manifest_flag.empty() ? run.eval_manifest : manifest_flag;
  check_config(!manifest_path.empty(), "eval-verify: set --manifest or eval_manifest");
  const fs::path out = run.out_dir;
  echo_run_config(run, out);

  Recognizer<float> model = load_recognizer<float>(run.recognizer_checkpoint);
  DatasetManifest manifest = load_manifest(manifest_path);
  check_usage(!manifest.records.empty(), "eval-verify: empty manifest " + manifest_path);
  const int64_t res = model.input_resolution();

  std::vector<EmbeddingRecord> records;
  const int64_t chunk = 64;
  for (size_t start = 0; start < manifest.records.size(); start += chunk) {
    const size_t stop = std::min(manifest.records.size(), start + chunk);
    Tensor<float> batch({static_cast<int64_t>(stop - start), 1, res, res});
    for (size_t i = start; i < stop; ++i) {
      Tensor<double> img = read_png_gray8(manifest.resolve_path(manifest.records[i]));
      check_integrity(img.dim(0) == res && img.dim(1) == res,
                      "eval-verify: " + manifest.records[i].image_path + " is " +
                          shape_str(img.shape()) + ", recognizer expects side " +
                          std::to_string(res));
      float* dst = batch.data() + static_cast<int64_t>(i - start) * res * res;
      for (int64_t p = 0; p < res * res; ++p) dst[p] = static_cast<float>(img[p]);
    }
    const Tensor<float> emb = extract_embedding(model, batch);
    for (size_t i = start; i < stop; ++i) {
      EmbeddingRecord r;
      r.identity_label = manifest.records[i].identity_label;
      r.impression_index = manifest.records[i].impression_index;
      const float* row = emb.data() + static_cast<int64_t>(i - start) * emb.dim(1);
      r.vector.assign(row, row + emb.dim(1));
      records.push_back(std::move(r));
    }
  }
  write_embeddings(out / "embeddings.bin", out / "embeddings.json", records);

  const ScoreSet scores = verification_scores(records, run.pairing);
  write_scores_csv(scores, out / "scores.csv");
  const ScoreHistogram hist = score_histogram(scores, run.histogram_bins);
  write_histogram_csv(hist, out / "hist_scores.csv");
  render_histogram_png(hist, out / "hist_scores.png");

  nlohmann::json points = nlohmann::json::array();
  for (double far : run.far_targets) {
    const VerificationPoint pt = tar_at_far(scores, far);
    points.push_back(pt.to_json());
    std::cout << "TAR@FAR=" << far << ": " << pt.tar << " (threshold "
              << (std::isfinite(pt.threshold) ? std::to_string(pt.threshold) : "-inf") << ")\n";
  }
  write_json_file({{"verification",
                    {{"points", points},
                     {"n_genuine", static_cast<int64_t>(scores.genuine.size())},
                     {"n_impostor", static_cast<int64_t>(scores.impostor.size())},
                     {"embedding_count", static_cast<int64_t>(records.size())}}}},
                  out / "verify.json");
  std::cout << "fragment: " << (out / "verify.json").string() << "\n";
  return 0;
}

int cmd_report(RunConfig run) {
  const fs::path dir = run.out_dir;
  check_config(fs::is_directory(dir), "report: " + dir.string() + " is not a directory");

  nlohmann::json report;
  uint64_t seed = run.seed;
  std::string tag = run.run_tag;
  if (fs::is_regular_file(dir / "config.json")) {
    const RunConfig echoed = load_run_config(dir / "config.json");
    seed = echoed.seed;
    tag = echoed.run_tag;
  }
  report["run"] = {{"tag", tag}, {"seed", seed}};

  bool any = false;
  for (const char* name : {"intra.json", "control.json", "verify.json"}) {
    if (!fs::is_regular_file(dir / name)) continue;
    any = true;
    const nlohmann::json fragment = read_json_file(dir / name);
    for (const auto& [key, value] : fragment.items()) report[key] = value;
  }
  check_config(any, "report: no evaluation fragments in " + dir.string() +
                        " (run eval-intra, eval-control, or eval-verify first)");
  write_json_file(report, dir / "report.json");
  std::cout << "report: " << (dir / "report.json").string() << "\n";
  return 0;
}

struct ToyDataFlags {
  std::string out;
  int64_t persons = 10;
  int64_t fingers = 5;
  int64_t impressions = 4;
  int64_t resolution = 32;
  uint64_t seed = 1;
  double train_fraction = 0.8;
};

int cmd_gen_toy_data(const ToyDataFlags& flags) {
  check_config(!flags.out.empty(), "gen-toy-data: set --out");
  make_toy_real_dataset(flags.out, flags.persons, flags.fingers, flags.impressions,
                        flags.resolution, flags.seed);
  DatasetManifest m = ingest_real_dataset(flags.out, flags.train_fraction, flags.seed);
  save_manifest(m, fs::path(flags.out) / "manifest.jsonl");
  write_json_file({{"persons", flags.persons},
                   {"fingers", flags.fingers},
                   {"impressions", flags.impressions},
                   {"resolution", flags.resolution},
                   {"seed", flags.seed},
                   {"train_fraction", flags.train_fraction}},
                  fs::path(flags.out) / "toy_config.json");
  std::cout << "wrote " << m.records.size() << " images over " << m.identity_labels().size()
            << " identities to " << flags.out << "\n";
  std::cout << "manifest: " << (fs::path(flags.out) / "manifest.jsonl").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fingerprint generator: disentangled training, synthesis, and evaluation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, manifest_flag, gan_flag, recognizer_flag, backbone_flag,
      real_manifest_flag, data_flag, id_embedder_flag, tag_flag;
  uint64_t seed = 0;
  double w_app = 0.0;
  int64_t num_identities = 0, impressions = 0, steps = 0, epochs = 0;
  std::vector<double> fars;
  bool resume = false;
  bool keep_first_subsample = false;

  CLI::Option *w_app_opt = nullptr, *num_opt = nullptr, *imp_opt = nullptr, *far_opt = nullptr,
              *steps_opt = nullptr, *epochs_opt = nullptr, *backbone_opt = nullptr,
              *subsample_opt = nullptr, *data_opt = nullptr, *id_embed_opt = nullptr,
              *tag_opt = nullptr;
  std::vector<CLI::Option*> seed_opts, out_opts;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run config file");
    seed_opts.push_back(sub->add_option("--seed", seed, "override the run seed"));
    out_opts.push_back(sub->add_option("--out", out_dir, "output directory"));
  };
  auto given = [](const std::vector<CLI::Option*>& opts) {
    for (const CLI::Option* o : opts)
      if (o->count() > 0) return true;
    return false;
  };

  CLI::App* train_gan = app.add_subcommand("train-gan", "train the generator adversarially");
  add_common(train_gan);
  w_app_opt = train_gan->add_option("--w-app", w_app, "appearance loss weight");
  steps_opt = train_gan->add_option("--steps", steps, "total training steps");
  data_opt = train_gan->add_option("--data", data_flag, "real data root (person/finger tree)");
  id_embed_opt =
      train_gan->add_option("--id-embedder", id_embedder_flag, "recognizer checkpoint for id loss");
  train_gan->add_flag("--resume", resume, "continue from the latest checkpoint in --out");

  CLI::App* train_rec = app.add_subcommand("train-recognizer", "train a recognition model");
  add_common(train_rec);
  train_rec->add_option("--manifest", manifest_flag, "training dataset manifest");
  backbone_opt = train_rec->add_option("--backbone", backbone_flag,
                                       "backbone family[:variant], e.g. resnet-like:micro");
  subsample_opt = train_rec->add_flag("--first-subsample,!--no-first-subsample",
                                      keep_first_subsample,
                                      "keep (or remove) the first sub-sampling layer");
  epochs_opt = train_rec->add_option("--epochs", epochs, "training epochs");

  CLI::App* gen_data = app.add_subcommand("gen-dataset", "synthesize an identity dataset");
  add_common(gen_data);
  gen_data->add_option("--gan", gan_flag, "generator checkpoint");
  tag_opt = gen_data->add_option("--tag", tag_flag, "identity label prefix");
  num_opt = gen_data->add_option("--num-identities", num_identities, "identities to generate");
  imp_opt = gen_data->add_option("--impressions-per-id", impressions, "impressions per identity");

  CLI::App* eval_intra = app.add_subcommand("eval-intra", "intra-class distance statistics");
  add_common(eval_intra);
  eval_intra->add_option("--gan", gan_flag, "generator checkpoint");
  eval_intra->add_option("--recognizer", recognizer_flag, "recognizer checkpoint");
  eval_intra->add_option("--num-identities", num_identities, "synthetic identities to sample");
  eval_intra->add_option("--real-manifest", real_manifest_flag,
                         "real dataset manifest for reference stats");

  CLI::App* eval_control = app.add_subcommand("eval-control", "appearance control precision");
  add_common(eval_control);
  eval_control->add_option("--gan", gan_flag, "generator checkpoint");
  eval_control->add_option("--num-identities", num_identities, "shared-appearance pairs");

  CLI::App* eval_verify = app.add_subcommand("eval-verify", "verification TAR@FAR evaluation");
  add_common(eval_verify);
  eval_verify->add_option("--recognizer", recognizer_flag, "recognizer checkpoint");
  eval_verify->add_option("--manifest", manifest_flag, "evaluation dataset manifest");
  far_opt = eval_verify->add_option("--far", fars, "FAR targets (repeatable)");

  CLI::App* report = app.add_subcommand("report", "merge evaluation fragments into report.json");
  add_common(report);

  ToyDataFlags toy;
  CLI::App* gen_toy = app.add_subcommand("gen-toy-data", "write a procedural ridge-texture corpus");
  gen_toy->add_option("--out", toy.out, "dataset root to create")->required();
  gen_toy->add_option("--persons", toy.persons, "number of persons");
  gen_toy->add_option("--fingers", toy.fingers, "fingers per person");
  gen_toy->add_option("--impressions", toy.impressions, "impressions per finger");
  gen_toy->add_option("--resolution", toy.resolution, "image side in pixels");
  gen_toy->add_option("--seed", toy.seed, "corpus seed");
  gen_toy->add_option("--train-fraction", toy.train_fraction, "person-level train fraction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(gen_toy)) return cmd_gen_toy_data(toy);

    RunConfig run = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (given(seed_opts)) {
      run.seed = seed;
      run.recognizer_train.seed = seed;
      run.pairing.seed = seed;
    }
    if (given(out_opts)) run.out_dir = out_dir;
    if (!gan_flag.empty()) run.gan_checkpoint = gan_flag;
    if (!recognizer_flag.empty()) run.recognizer_checkpoint = recognizer_flag;
    if (!real_manifest_flag.empty()) run.real_manifest = real_manifest_flag;

    if (app.got_subcommand(train_gan)) {
      if (w_app_opt->count()) run.contrastive.w_app = w_app;
      if (steps_opt->count()) run.generator.total_steps = steps;
      if (data_opt->count()) run.real_data_root = data_flag;
      if (id_embed_opt->count()) run.id_embedder_checkpoint = id_embedder_flag;
      return cmd_train_gan(run, resume);
    }
    if (app.got_subcommand(train_rec)) {
      if (backbone_opt->count()) {
        const auto cut = backbone_flag.find(':');
        run.backbone.family = family_from_name(backbone_flag.substr(0, cut));
        if (cut != std::string::npos) run.backbone.variant = backbone_flag.substr(cut + 1);
      }
      if (subsample_opt->count()) run.backbone.remove_first_subsample = !keep_first_subsample;
      if (epochs_opt->count()) run.recognizer_train.epochs = epochs;
      return cmd_train_recognizer(run, manifest_flag);
    }
    if (app.got_subcommand(gen_data)) {
      if (tag_opt->count()) run.source_tag = tag_flag;
      if (num_opt->count()) run.num_identities = num_identities;
      if (imp_opt->count()) run.impressions_per_id = impressions;
      return cmd_gen_dataset(run);
    }
    if (app.got_subcommand(eval_intra)) {
      if (num_identities > 0) run.eval_pairs = num_identities;
      return cmd_eval_intra(run);
    }
    if (app.got_subcommand(eval_control)) {
      if (num_identities > 0) run.eval_pairs = num_identities;
      return cmd_eval_control(run);
    }
    if (app.got_subcommand(eval_verify)) {
      if (far_opt->count()) run.far_targets = fars;
      return cmd_eval_verify(run, manifest_flag);
    }
    if (app.got_subcommand(report)) return cmd_report(run);
    throw usage_error("no subcommand dispatched");
  } catch (const training_fault& e) {
    std::cerr << "training fault: " << e.what() << "\n";
    return 3;
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const integrity_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fault: " << e.what() << "\n";
    return 3;
  }
}
