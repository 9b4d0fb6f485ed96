#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ridgegen/config.hpp"
#include "ridgegen/log.hpp"
#include "ridgegen/png_io.hpp"
#include "ridgegen/serialize.hpp"

using namespace ridgegen;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("ridgegen_io_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("png round trip quantizes to 8 bits") {
  TempDir dir("png");
  Rng rng(7);
  Tensor<double> img({24, 17});
  for (auto& v : img) v = rng.uniform();
  img[0] = 0.0;
  img[1] = 1.0;

  write_png_gray8(dir.path / "img.png", img);
  Tensor<double> back = read_png_gray8(dir.path / "img.png");
  REQUIRE(back.shape() == img.shape());
  for (int64_t i = 0; i < img.numel(); ++i)
    REQUIRE(std::abs(back[i] - img[i]) <= 0.5 / 255.0 + 1e-12);
  REQUIRE(back[0] == 0.0);
  REQUIRE(back[1] == 1.0);

  // A second write of the already-quantized image is byte-stable.
  write_png_gray8(dir.path / "img2.png", back);
  std::ifstream a(dir.path / "img.png", std::ios::binary), b(dir.path / "img2.png",
                                                             std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
  const std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
  REQUIRE(bytes_a == bytes_b);

  REQUIRE_THROWS_AS(read_png_gray8(dir.path / "absent.png"), usage_error);
}

TEST_CASE("checkpoint container round trips arrays and extras") {
  TempDir dir("ckpt");
  Rng rng(13);
  Tensor<float> w = Tensor<float>::randn({3, 5}, rng);
  Tensor<float> b = Tensor<float>::randn({5}, rng);

  CheckpointWriter writer("demo", {{"alpha", 2}}, 42);
  writer.add("w", w);
  writer.add("b", b);
  writer.add_extra("note", "hello");
  writer.write(dir.path / "demo.ckpt");

  Checkpoint ck = Checkpoint::load(dir.path / "demo.ckpt");
  REQUIRE(ck.kind == "demo");
  REQUIRE(ck.step == 42);
  REQUIRE(ck.config.at("alpha") == 2);
  REQUIRE(ck.extra.at("note") == "hello");
  REQUIRE(ck.array("w").shape() == w.shape());
  for (int64_t i = 0; i < w.numel(); ++i) REQUIRE(ck.array("w")[i] == w[i]);
  for (int64_t i = 0; i < b.numel(); ++i) REQUIRE(ck.array("b")[i] == b[i]);
  REQUIRE_THROWS_AS(ck.array("missing"), integrity_error);

  std::ofstream junk(dir.path / "junk.ckpt", std::ios::binary);
  junk << "RIDGEGEN";
  junk.close();
  REQUIRE_THROWS_AS(Checkpoint::load(dir.path / "junk.ckpt"), integrity_error);
}

TEST_CASE("training csv log round trips and appends") {
  TempDir dir("csv");
  const fs::path path = dir.path / "train_log.csv";

  StepReport r1{};
  r1.adv_loss = 0.5;
  r1.id_part = 0.125;
  r1.app_part = 0.0625;
  r1.total = 1.0 / 3.0;
  StepReport r2{};
  r2.adv_loss = -0.25;
  r2.total = 7.0;
  {
    TrainingCsvLog log(path);
    log.log(0, r1);
    log.log(1, r2);
  }

  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  REQUIRE(header == "step,adv_loss,id_part,app_part,total");

  auto rows = read_training_csv(path);
  REQUIRE(rows.size() == 2);
  REQUIRE(rows[0].step == 0);
  REQUIRE(rows[0].adv_loss == 0.5);
  REQUIRE(rows[0].id_part == 0.125);
  REQUIRE(rows[0].app_part == 0.0625);
  REQUIRE(rows[0].total == 1.0 / 3.0);  // full precision survives the trip
  REQUIRE(rows[1].step == 1);
  REQUIRE(rows[1].total == 7.0);

  {
    TrainingCsvLog log(path, true);
    StepReport r3{};
    r3.total = 9.0;
    log.log(2, r3);
  }
  rows = read_training_csv(path);
  REQUIRE(rows.size() == 3);  // append keeps prior rows and writes no second header
  REQUIRE(rows[2].step == 2);

  std::ofstream bad(dir.path / "bad.csv");
  bad << "step,adv_loss,id_part,app_part,total\n1,2,3\n";
  bad.close();
  REQUIRE_THROWS_AS(read_training_csv(dir.path / "bad.csv"), integrity_error);

  std::ofstream wrong(dir.path / "wrong.csv");
  wrong << "step,loss\n";
  wrong.close();
  REQUIRE_THROWS_AS(read_training_csv(dir.path / "wrong.csv"), integrity_error);
}

TEST_CASE("epoch csv and heartbeat emit expected lines") {
  TempDir dir("epoch");
  std::vector<EpochStats> stats = {{0.9, 0.25}, {0.4, 0.75}};
  write_epoch_csv(stats, dir.path / "epochs.csv");

  std::ifstream in(dir.path / "epochs.csv");
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "epoch,loss,accuracy");
  std::getline(in, line);
  REQUIRE(line == "1,0.90000000000000002,0.25");
  std::getline(in, line);
  REQUIRE(line.rfind("2,", 0) == 0);

  StepReport r{};
  r.adv_loss = 0.5;
  r.total = 1.5;
  std::ostringstream os;
  heartbeat(os, 1, 100, r, 10);    // first step always prints
  heartbeat(os, 5, 100, r, 10);    // off-interval, silent
  heartbeat(os, 10, 100, r, 10);   // interval hit
  heartbeat(os, 100, 100, r, 30);  // last step always prints
  const std::string text = os.str();
  REQUIRE(text.find("step 1/100") != std::string::npos);
  REQUIRE(text.find("step 5/100") == std::string::npos);
  REQUIRE(text.find("step 10/100") != std::string::npos);
  REQUIRE(text.find("step 100/100") != std::string::npos);
  REQUIRE(text.find("total=1.5") != std::string::npos);
}

TEST_CASE("run config round trips through json with overrides intact") {
  RunConfig cfg;
  cfg.seed = 77;
  cfg.out_dir = "runs/demo";
  cfg.run_tag = "demo";
  cfg.generator.resolution = 32;
  cfg.generator.channels = {32, 16, 8, 8};
  cfg.contrastive.w_app = 5.0;
  cfg.backbone.family = BackboneFamily::mobilenet_like;
  cfg.backbone.variant = "small";
  cfg.far_targets = {0.01, 0.1};
  cfg.num_identities = 12;
  cfg.pairing.max_impostor_pairs = 5000;

  RunConfig back = RunConfig::from_json(cfg.to_json());
  REQUIRE(back.seed == 77);
  REQUIRE(back.out_dir == "runs/demo");
  REQUIRE(back.generator.resolution == 32);
  REQUIRE(back.generator.channels == std::vector<int64_t>{32, 16, 8, 8});
  REQUIRE(back.contrastive.w_app == 5.0);
  REQUIRE(back.backbone.family == BackboneFamily::mobilenet_like);
  REQUIRE(back.backbone.variant == "small");
  REQUIRE(back.far_targets == std::vector<double>{0.01, 0.1});
  REQUIRE(back.num_identities == 12);
  REQUIRE(back.pairing.max_impostor_pairs == 5000);
  REQUIRE(back.to_json() == cfg.to_json());

  // Partial files keep defaults for everything absent.
  RunConfig sparse = RunConfig::from_json({{"seed", 5}});
  REQUIRE(sparse.seed == 5);
  REQUIRE(sparse.impressions_per_id == 11);
  REQUIRE(sparse.generator.resolution == 64);
}

TEST_CASE("run config resolve fills dependent defaults") {
  RunConfig cfg;
  cfg.generator.resolution = 32;
  REQUIRE(cfg.contrastive.filter.target_h == 0);
  cfg.resolve();
  REQUIRE(cfg.contrastive.filter.target_h == 8);
  REQUIRE(cfg.contrastive.filter.target_w == 8);
  REQUIRE(cfg.input_resolution == 32);
  REQUIRE_NOTHROW(cfg.validate());

  // Explicit values survive resolve.
  RunConfig manual;
  manual.input_resolution = 16;
  manual.contrastive.filter.target_h = 4;
  manual.contrastive.filter.target_w = 4;
  manual.resolve();
  REQUIRE(manual.input_resolution == 16);
  REQUIRE(manual.contrastive.filter.target_h == 4);

  RunConfig bad;
  bad.resolve();
  bad.far_targets = {1.5};
  REQUIRE_THROWS_AS(bad.validate(), config_error);
  bad = RunConfig{};
  bad.resolve();
  bad.train_fraction = -0.5;
  REQUIRE_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("run config loads from file and echoes provenance") {
  TempDir dir("runcfg");
  RunConfig cfg;
  cfg.seed = 31;
  cfg.run_tag = "echo-test";
  cfg.resolve();
  {
    std::ofstream out(dir.path / "config.json");
    out << cfg.to_json().dump(2);
  }

  RunConfig loaded = load_run_config(dir.path / "config.json");
  REQUIRE(loaded.seed == 31);
  REQUIRE(loaded.run_tag == "echo-test");

  echo_run_config(loaded, dir.path / "run");
  RunConfig echoed = load_run_config(dir.path / "run" / "config.json");
  REQUIRE(echoed.to_json() == loaded.to_json());

  REQUIRE_THROWS_AS(load_run_config(dir.path / "absent.json"), config_error);
  std::ofstream garbage(dir.path / "bad.json");
  garbage << "{ not json";
  garbage.close();
  REQUIRE_THROWS_AS(load_run_config(dir.path / "bad.json"), config_error);
}
