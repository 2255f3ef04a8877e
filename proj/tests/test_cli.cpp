#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "commands.hpp"

using namespace camil;
using namespace camil::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("camil_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

RunConfig tiny(const fs::path& root) {
  RunConfig cfg;
  cfg.seed = 11;
  cfg.synth.grid_size = 6;
  cfg.synth.tumor_fraction = 0.2;
  cfg.synth.feature_shift = 2.0;
  cfg.n_slides = 12;
  cfg.train.epochs = 3;
  cfg.train.folds = 3;
  cfg.train.lr = 1e-2;
  cfg.data = root / "data";
  cfg.out = root / "out";
  cfg.propagate_seed();
  return cfg;
}

}  // namespace

TEST_CASE("apply_json sets fields and rejects unknown keys") {
  RunConfig cfg;
  apply_json(cfg, {{"lr", 0.05}, {"variant", "CAMIL-L"}, {"n-slides", 40}, {"slides", "a,b"}});
  CHECK(cfg.train.lr == 0.05);
  CHECK(cfg.train.variant == Variant::kCamilL);
  CHECK(cfg.n_slides == 40);
  CHECK(cfg.slides == std::vector<std::string>{"a", "b"});
  CHECK_THROWS_AS(apply_json(cfg, {{"learning-rate", 0.1}}), UsageError);
  CHECK_THROWS_AS(apply_json(cfg, {{"variant", "CAMIL-X"}}), UsageError);
  CHECK_THROWS_AS(apply_json(cfg, {{"epochs", "many"}}), UsageError);
}

TEST_CASE("every field round-trips through its JSON form") {
  RunConfig a;
  a.seed = 99;
  a.train.hdim = 24;
  a.features = Features::kRandom;
  a.synth.noise_sigma = 0.3;
  nlohmann::json j;
  for (const Field& f : fields()) j[f.key] = f.to_json(a);
  RunConfig b;
  apply_json(b, j);
  for (const Field& f : fields()) CHECK_MESSAGE(f.to_json(b) == f.to_json(a), f.key);
}

TEST_CASE("propagate_seed reaches every seeded sub-config") {
  RunConfig cfg;
  cfg.seed = 123;
  cfg.propagate_seed();
  CHECK(cfg.synth.seed == 123);
  CHECK(cfg.train.seed == 123);
  CHECK(cfg.pretrain.seed == 123);
  CHECK(cfg.render.seed == 123);
}

TEST_CASE("synth is byte-identical for the same seed") {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  std::ostringstream log;
  RunConfig ca = tiny(a), cb = tiny(b);
  ca.out = a / "data";
  cb.out = b / "data";
  REQUIRE(cmd_synth(ca, log) == kExitOk);
  REQUIRE(cmd_synth(cb, log) == kExitOk);
  const Dataset da = load_dataset(ca.out);
  REQUIRE(da.bags.size() == 12);
  for (const FeatureBag& bag : da.bags) {
    const std::string name = "bags/" + bag.grid.slide_id + ".bag";
    CHECK(slurp(ca.out / name) == slurp(cb.out / name));
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("train, eval, heatmap and ablate on a tiny dataset") {
  const fs::path root = scratch("pipeline");
  RunConfig cfg = tiny(root);
  std::ostringstream log;
  {
    RunConfig s = cfg;
    s.out = cfg.data;
    REQUIRE(cmd_synth(s, log) == kExitOk);
  }
  REQUIRE(cmd_train(cfg, log) == kExitOk);
  const nlohmann::json report = nlohmann::json::parse(slurp(cfg.out / "report.json"));
  CHECK(report.at("fold").size() == 3);
  for (const char* k : {"acc", "auc", "f1", "dice", "specificity"}) {
    CHECK(report.at("mean").contains(k));
    CHECK(report.at("std").contains(k));
  }
  for (int f = 0; f < 3; ++f) {
    CHECK(fs::exists(cfg.out / ("fold_" + std::to_string(f)) / "model.bin"));
    CHECK(slurp(cfg.out / ("fold_" + std::to_string(f)) / "loss.csv").rfind("epoch,train_loss,val_loss\n", 0) == 0);
  }

  RunConfig ev = cfg;
  ev.checkpoint = cfg.out / "fold_0" / "model.bin";
  ev.out = root / "eval";
  REQUIRE(cmd_eval(ev, log) == kExitOk);
  CHECK(nlohmann::json::parse(slurp(ev.out / "report.json")).at("predictions").size() == 12);

  ev.out = root / "maps";
  REQUIRE(cmd_heatmap(ev, log) == kExitOk);
  CHECK(std::distance(fs::directory_iterator(ev.out / "heatmaps"), fs::directory_iterator{}) == 12);
  const GrayImage img = read_pgm(ev.out / "heatmaps" / "slide_0.pgm");
  CHECK(img.width == 6 * 8);
  ev.slides = {"no_such_slide"};
  CHECK_THROWS_AS(cmd_heatmap(ev, log), UsageError);

  RunConfig ab = cfg;
  ab.out = root / "ablate";
  ab.train.epochs = 1;
  REQUIRE(cmd_ablate(ab, log) == kExitOk);
  std::istringstream table(slurp(ab.out / "ablation.txt"));
  std::vector<std::string> lines;
  for (std::string line; std::getline(table, line);) lines.push_back(line);
  REQUIRE(lines.size() == 6);
  for (const std::string& line : lines) CHECK(line.size() == lines.front().size());
  CHECK(nlohmann::json::parse(slurp(ab.out / "ablation.json")).size() == 5);
  fs::remove_all(root);
}

TEST_CASE("untrained eval is near chance") {
  const fs::path root = scratch("untrained");
  RunConfig cfg;
  cfg.data = root / "data";
  cfg.out = cfg.data;
  cfg.propagate_seed();
  std::ostringstream log;
  REQUIRE(cmd_synth(cfg, log) == kExitOk);
  cfg.out = root / "eval";
  cfg.untrained = true;
  REQUIRE(cmd_eval(cfg, log) == kExitOk);
  const double a = nlohmann::json::parse(slurp(cfg.out / "report.json")).at("mean").at("auc").get<double>();
  CHECK(a >= 0.3);
  CHECK(a <= 0.7);
  fs::remove_all(root);
}

TEST_CASE("gradcheck passes and the corrupt hook is caught") {
  RunConfig cfg;
  cfg.out = scratch("gradcheck");
  std::ostringstream log;
  CHECK(cmd_gradcheck(cfg, log) == kExitOk);
  cfg.corrupt = true;
  CHECK(cmd_gradcheck(cfg, log) == kExitInvariant);
  fs::remove_all(cfg.out);
}

TEST_CASE("random-encoder features have the encoder width") {
  RunConfig cfg;
  cfg.synth.grid_size = 6;
  cfg.synth.tumor_fraction = 0.2;
  cfg.features = Features::kRandom;
  cfg.encoder_dim = 5;
  cfg.propagate_seed();
  const std::vector<FeatureBag> raw = synth_dataset(cfg.synth, 3, 0.5);
  const std::vector<FeatureBag> enc = prepare_features(raw, cfg);
  REQUIRE(enc.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(enc[i].d() == 5);
    CHECK(enc[i].n() == raw[i].n());
    CHECK(enc[i].grid.tiles == raw[i].grid.tiles);
  }
  cfg.features = Features::kContrastive;
  CHECK_THROWS_AS(prepare_features(raw, cfg), UsageError);
}
