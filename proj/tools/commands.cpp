#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <random>

#include <fmt/format.h>

namespace camil::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kEncoderSalt = 0x656e636f646572ULL;
constexpr std::uint64_t kRenderSalt = 0x72656e646572ULL;
constexpr std::uint64_t kSampleSalt = 0x73616d706c65ULL;
constexpr std::uint64_t kGradcheckSalt = 0x67726164ULL;

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void echo_config(const RunConfig& cfg) {
  make_dir(cfg.out);
  write_json(cfg.to_json(), cfg.out / "config.json");
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

std::string metric(const std::optional<double>& v) { return v ? fmt::format("{:.3f}", *v) : "n/a"; }

std::string mean_std(const std::optional<double>& m, const std::optional<double>& s) {
  if (!m) return "n/a";
  if (!s) return fmt::format("{:.3f}", *m);
  return fmt::format("{:.3f} ({:.3f})", *m, *s);
}

Checkpoint require_checkpoint(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw UsageError("--checkpoint is required");
  return load_model(cfg.checkpoint);
}

struct Prepared {
  std::vector<FeatureBag> bags;
  std::vector<SimilarityMask> masks;
};

Prepared prepare(const RunConfig& cfg) {
  Prepared p;
  p.bags = prepare_features(load_dataset(cfg.data).bags, cfg);
  p.masks = build_masks(p.bags, cfg.distance);
  return p;
}

void print_summary(std::ostream& log, const EvalReport& r) {
  log << fmt::format("acc {}  auc {}  f1 {}  dice {}  specificity {}\n", mean_std(r.mean.acc, r.std.acc),
                     mean_std(r.mean.auc, r.std.auc), mean_std(r.mean.f1, r.std.f1),
                     mean_std(r.mean.dice, r.std.dice), mean_std(r.mean.specificity, r.std.specificity));
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  Dataset ds;
  try {
    ds.manifest = nlohmann::json::parse(in);
    for (const auto& slide : ds.manifest.at("slides")) {
      FeatureBag bag = load_bag(dir / slide.at("path").get<std::string>());
      if (bag.slide_label != slide.at("label").get<int>())
        throw ArgumentError("manifest label disagrees with bag file for " + bag.grid.slide_id);
      ds.bags.push_back(std::move(bag));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(manifest_path.string() + ": " + e.what());
  }
  if (ds.bags.empty()) throw ArgumentError(manifest_path.string() + " lists no slides");
  return ds;
}

std::vector<FeatureBag> prepare_features(const std::vector<FeatureBag>& raw, const RunConfig& cfg) {
  if (cfg.features == Features::kRaw) return raw;
  const std::size_t d = raw.front().d();
  const std::vector<Patch> basis = render_basis(d, cfg.render);
  const auto pixels = static_cast<std::size_t>(cfg.render.patch_size * cfg.render.patch_size);
  EncoderParams enc;
  if (cfg.features == Features::kContrastive) {
    if (cfg.encoder.empty()) throw UsageError("--features contrastive needs --encoder (written by pretrain)");
    enc = load_encoder(cfg.encoder);
  } else {
    enc = init_encoder(pixels, cfg.encoder_hidden, cfg.encoder_dim, cfg.seed ^ kEncoderSalt);
  }
  if (enc.pixels() != pixels)
    throw UsageError(fmt::format("encoder expects {} pixels, patch-size {} renders {}", enc.pixels(),
                                 cfg.render.patch_size, pixels));
  std::vector<FeatureBag> out;
  out.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const std::vector<Patch> tiles = render_tiles(raw[i], basis, cfg.render, slide_seed(cfg.seed ^ kRenderSalt, i));
    out.push_back(encode_bag(raw[i], tiles, enc));
  }
  return out;
}

std::vector<Patch> pretraining_tiles(const std::vector<FeatureBag>& raw, const RunConfig& cfg) {
  std::mt19937_64 rng(cfg.seed ^ kSampleSalt);
  std::uniform_int_distribution<std::size_t> pick_slide(0, raw.size() - 1);
  std::map<std::size_t, std::vector<std::size_t>> wanted;
  for (std::size_t k = 0; k < cfg.pretrain_tiles; ++k) {
    const std::size_t s = pick_slide(rng);
    wanted[s].push_back(std::uniform_int_distribution<std::size_t>(0, raw[s].n() - 1)(rng));
  }
  const std::vector<Patch> basis = render_basis(raw.front().d(), cfg.render);
  std::vector<Patch> tiles;
  tiles.reserve(cfg.pretrain_tiles);
  for (const auto& [s, rows] : wanted) {
    const std::vector<Patch> all = render_tiles(raw[s], basis, cfg.render, slide_seed(cfg.seed ^ kRenderSalt, s));
    for (std::size_t r : rows) tiles.push_back(all[r]);
  }
  return tiles;
}

PretrainResult pretrain(const std::vector<FeatureBag>& raw, const RunConfig& cfg) {
  const auto pixels = static_cast<std::size_t>(cfg.render.patch_size * cfg.render.patch_size);
  EncoderParams enc = init_encoder(pixels, cfg.encoder_hidden, cfg.encoder_dim, cfg.seed ^ kEncoderSalt);
  return pretrain_encoder(pretraining_tiles(raw, cfg), std::move(enc), cfg.pretrain);
}

bool GradcheckReport::passed() const {
  for (const GradcheckVariant& v : variants)
    for (const GradCheckEntry& e : v.entries)
      if (!(e.max_rel_error <= tolerance)) return false;
  return true;
}

GradcheckReport run_gradcheck(const RunConfig& cfg) {
  const std::size_t n = cfg.gradcheck_tiles, d = cfg.gradcheck_d;
  if (n < 1 || d < 1) throw UsageError("gradcheck needs at least one tile and one feature");
  std::mt19937_64 rng(cfg.seed ^ kGradcheckSalt);
  std::normal_distribution<double> normal(0.0, 1.0);
  FeatureBag bag;
  bag.grid.slide_id = "gradcheck";
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  bag.grid.width = cols;
  bag.grid.height = static_cast<int>((n + cols - 1) / cols);
  for (std::size_t i = 0; i < n; ++i) bag.grid.tiles.push_back({static_cast<int>(i) / cols, static_cast<int>(i) % cols});
  bag.features = Matrix(n, d);
  for (double& v : bag.features.data()) v = normal(rng);
  bag.slide_label = 1;
  const SimilarityMask mask = similarity_mask(bag, build_adjacency(bag.grid), cfg.distance);

  ModelParams params = init_params(d, cfg.train.hdim, 2, cfg.seed);
  // A non-zero pooling vector keeps the attention weights away from uniform.
  for (double& v : params.gate.w.value.data()) v = 0.5 * normal(rng);
  params.nystrom.landmarks = std::min(cfg.train.landmarks == 0 ? n : cfg.train.landmarks, n);
  params.nystrom.strategy = cfg.train.landmark_strategy;
  params.nystrom.pinv_iters = cfg.train.pinv_iters;
  params.nystrom.landmark_seed = cfg.seed;

  GradcheckReport report;
  for (Variant v : kAllVariants)
    report.variants.push_back({v, gradient_check(bag, mask, params, v, bag.slide_label, 1e-3, cfg.corrupt)});
  return report;
}

std::vector<AblationRow> run_ablation(const std::vector<FeatureBag>& bags, const std::vector<SimilarityMask>& masks,
                                      const RunConfig& cfg) {
  std::vector<AblationRow> rows;
  for (Variant v : kAllVariants) {
    TrainConfig tc = cfg.train;
    tc.variant = v;
    rows.push_back({v, cross_validate(bags, masks, tc, cfg.threads).report});
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out = fmt::format("{:<10}{:>16}{:>16}{:>16}{:>16}{:>16}\n", "variant", "acc", "auc", "f1", "dice",
                                "specificity");
  for (const AblationRow& r : rows) {
    const MetricSummary& m = r.report.mean;
    const MetricSummary& s = r.report.std;
    out += fmt::format("{:<10}{:>16}{:>16}{:>16}{:>16}{:>16}\n", variant_label(r.variant), mean_std(m.acc, s.acc),
                       mean_std(m.auc, s.auc), mean_std(m.f1, s.f1), mean_std(m.dice, s.dice),
                       mean_std(m.specificity, s.specificity));
  }
  return out;
}

nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const AblationRow& r : rows) {
    nlohmann::json row = r.report.to_json();
    row["variant"] = variant_name(r.variant);
    j.push_back(row);
  }
  return j;
}

int cmd_synth(const RunConfig& cfg, std::ostream& log) {
  cfg.synth.validate();
  if (cfg.n_slides == 0) throw UsageError("n-slides must be >= 1");
  const std::vector<FeatureBag> bags = synth_dataset(cfg.synth, cfg.n_slides, cfg.positive_rate);
  make_dir(cfg.out / "bags");
  nlohmann::json manifest;
  manifest["seed"] = cfg.seed;
  manifest["positive_rate"] = cfg.positive_rate;
  manifest["synth"] = {{"grid_size", cfg.synth.grid_size},
                       {"d", cfg.synth.d},
                       {"tumor_fraction", cfg.synth.tumor_fraction},
                       {"blob_count", cfg.synth.blob_count},
                       {"feature_shift", cfg.synth.feature_shift},
                       {"noise_sigma", cfg.synth.noise_sigma},
                       {"distractor_rate", cfg.synth.distractor_rate}};
  manifest["slides"] = nlohmann::json::array();
  for (const FeatureBag& bag : bags) {
    const std::string rel = "bags/" + bag.grid.slide_id + ".bag";
    save_bag(bag, cfg.out / rel);
    manifest["slides"].push_back({{"id", bag.grid.slide_id}, {"path", rel}, {"label", bag.slide_label}});
  }
  write_json(manifest, cfg.out / "manifest.json");
  echo_config(cfg);
  const auto positives = std::count_if(bags.begin(), bags.end(), [](const FeatureBag& b) { return b.slide_label == 1; });
  log << fmt::format("wrote {} slides ({} positive) to {}\n", bags.size(), positives, cfg.out.string());
  return kExitOk;
}

int cmd_pretrain(const RunConfig& cfg, std::ostream& log) {
  const Dataset ds = load_dataset(cfg.data);
  const PretrainResult r = pretrain(ds.bags, cfg);
  make_dir(cfg.out);
  save_encoder(r.params, cfg.out / "encoder.bin");
  std::ofstream csv(cfg.out / "pretrain_loss.csv");
  if (!csv) throw IoError("cannot open " + (cfg.out / "pretrain_loss.csv").string());
  csv << "epoch,loss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) csv << fmt::format("{},{:.17g}\n", e + 1, r.epoch_loss[e]);
  echo_config(cfg);
  if (!r.epoch_loss.empty())
    log << fmt::format("pretrained on {} tiles: loss {:.4f} -> {:.4f}\n", cfg.pretrain_tiles, r.epoch_loss.front(),
                       r.epoch_loss.back());
  log << fmt::format("encoder written to {}\n", (cfg.out / "encoder.bin").string());
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  cfg.train.validate();
  const Prepared p = prepare(cfg);
  const CrossValidation cv = cross_validate(p.bags, p.masks, cfg.train, cfg.threads);
  make_dir(cfg.out);
  for (std::size_t f = 0; f < cv.runs.size(); ++f) {
    const fs::path dir = cfg.out / fmt::format("fold_{}", f);
    make_dir(dir);
    save_model({cv.runs[f].params, cfg.train.variant}, dir / "model.bin");
    write_loss_csv(cv.runs[f].history, dir / "loss.csv");
  }
  nlohmann::json report = cv.report.to_json();
  report["train"] = cfg.train.to_json();
  report["features"] = features_name(cfg.features);
  write_json(report, cfg.out / "report.json");
  echo_config(cfg);
  log << fmt::format("{} {}-fold cross-validation\n", variant_label(cfg.train.variant), cfg.train.folds);
  print_summary(log, cv.report);
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& log) {
  Checkpoint ckpt;
  const Prepared p = prepare(cfg);
  if (cfg.untrained) {
    ckpt.params = init_params(p.bags.front().d(), cfg.train.hdim, 2, cfg.seed);
    ckpt.params.nystrom.landmarks = cfg.train.landmarks;
    ckpt.params.nystrom.strategy = cfg.train.landmark_strategy;
    ckpt.params.nystrom.pinv_iters = cfg.train.pinv_iters;
    ckpt.variant = cfg.train.variant;
  } else {
    ckpt = require_checkpoint(cfg);
  }
  const Evaluation e = evaluate(p.bags, p.masks, all_indices(p.bags.size()), ckpt.params, ckpt.variant);
  EvalReport report;
  report.folds.push_back(e.metrics);
  report.aggregate();
  make_dir(cfg.out);
  nlohmann::json j = report.to_json();
  j["variant"] = variant_name(ckpt.variant);
  j["predictions"] = nlohmann::json::array();
  for (const SlidePrediction& s : e.predictions)
    j["predictions"].push_back({{"slide", s.slide_id}, {"label", s.label}, {"probability", s.probability}});
  write_json(j, cfg.out / "report.json");
  echo_config(cfg);
  const FoldMetrics& m = e.metrics;
  log << fmt::format("{} on {} slides: acc {:.3f}  auc {}  f1 {:.3f}  dice {}  specificity {}\n",
                     variant_label(ckpt.variant), m.slides, m.acc, metric(m.auc), m.f1, metric(m.dice),
                     metric(m.specificity));
  return kExitOk;
}

int cmd_heatmap(const RunConfig& cfg, std::ostream& log) {
  const Checkpoint ckpt = require_checkpoint(cfg);
  const Prepared p = prepare(cfg);
  std::vector<std::size_t> chosen;
  if (cfg.slides.empty()) {
    chosen = all_indices(p.bags.size());
  } else {
    for (const std::string& id : cfg.slides) {
      const auto it = std::find_if(p.bags.begin(), p.bags.end(), [&](const FeatureBag& b) { return b.grid.slide_id == id; });
      if (it == p.bags.end()) throw UsageError("--slides: no slide '" + id + "' in " + cfg.data.string());
      chosen.push_back(static_cast<std::size_t>(it - p.bags.begin()));
    }
  }
  const fs::path dir = cfg.out / "heatmaps";
  make_dir(dir);
  for (std::size_t i : chosen) {
    const ForwardTrace trace = forward(p.bags[i], p.masks[i], ckpt.params, ckpt.variant);
    heatmap_export(trace, p.bags[i].grid, dir / (p.bags[i].grid.slide_id + ".pgm"), cfg.block);
  }
  echo_config(cfg);
  log << fmt::format("wrote {} heatmaps to {}\n", chosen.size(), dir.string());
  return kExitOk;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  cfg.train.validate();
  const Prepared p = prepare(cfg);
  const std::vector<AblationRow> rows = run_ablation(p.bags, p.masks, cfg);
  make_dir(cfg.out);
  const std::string table = ablation_table(rows);
  std::ofstream txt(cfg.out / "ablation.txt");
  if (!txt) throw IoError("cannot open " + (cfg.out / "ablation.txt").string());
  txt << table;
  write_json(ablation_json(rows), cfg.out / "ablation.json");
  echo_config(cfg);
  log << table;
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& log) {
  const GradcheckReport r = run_gradcheck(cfg);
  nlohmann::json j = nlohmann::json::array();
  for (const GradcheckVariant& v : r.variants) {
    double worst = 0.0;
    for (const GradCheckEntry& e : v.entries) worst = std::max(worst, e.max_rel_error);
    log << fmt::format("{:<10} worst {:.3e}\n", variant_label(v.variant), worst);
    nlohmann::json groups = nlohmann::json::object();
    for (const GradCheckEntry& e : v.entries) {
      log << fmt::format("  {:<14} {:.3e}  {}\n", e.name, e.max_rel_error,
                         e.max_rel_error <= r.tolerance ? "ok" : "FAIL");
      groups[e.name] = e.max_rel_error;
    }
    j.push_back({{"variant", variant_name(v.variant)}, {"worst", worst}, {"groups", groups}});
  }
  make_dir(cfg.out);
  write_json({{"tolerance", r.tolerance}, {"passed", r.passed()}, {"variants", j}}, cfg.out / "gradcheck.json");
  echo_config(cfg);
  if (!r.passed()) {
    log << fmt::format("gradient check FAILED (tolerance {:.0e})\n", r.tolerance);
    return kExitInvariant;
  }
  log << fmt::format("gradient check passed (tolerance {:.0e})\n", r.tolerance);
  return kExitOk;
}

}  // namespace camil::cli
