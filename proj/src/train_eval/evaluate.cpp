#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include "camil/train_eval.hpp"

namespace camil {

namespace {

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::optional<double> sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return std::nullopt;
  const double m = *mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json summary_json(const MetricSummary& s) {
  return {{"acc", opt(s.acc)}, {"auc", opt(s.auc)}, {"f1", opt(s.f1)}, {"dice", opt(s.dice)},
          {"specificity", opt(s.specificity)}};
}

}  // namespace

Evaluation evaluate(std::span<const FeatureBag> bags, std::span<const SimilarityMask> masks,
                    std::span<const std::size_t> idx, const ModelParams& params, Variant variant) {
  if (bags.size() != masks.size())
    throw ShapeError("evaluate: " + std::to_string(bags.size()) + " bags but " + std::to_string(masks.size()) +
                     " masks");
  if (idx.empty()) throw ArgumentError("evaluate: no slides");
  Evaluation out;
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<double> dices, specs;
  for (std::size_t i : idx) {
    if (i >= bags.size()) throw ArgumentError("evaluate: index " + std::to_string(i) + " out of range");
    const FeatureBag& bag = bags[i];
    const ForwardTrace trace = forward(bag, masks[i], params, variant);
    const double p = positive_probability(trace);
    out.predictions.push_back({bag.grid.slide_id, bag.slide_label, p});
    scores.push_back(p);
    labels.push_back(bag.slide_label);
    if (!bag.tile_labels) continue;
    const TileMask gt = ground_truth_mask(bag);
    const TileMask pred = predicted_mask(trace, variant);
    if (std::find(gt.begin(), gt.end(), true) != gt.end()) {
      dices.push_back(dice(pred, gt));
    } else {
      specs.push_back(specificity(pred, gt));
    }
  }
  FoldMetrics& m = out.metrics;
  const AccF1 af = acc_f1(scores, labels);
  m.acc = af.acc;
  m.f1 = af.f1;
  const bool both = std::find(labels.begin(), labels.end(), 0) != labels.end() &&
                    std::find(labels.begin(), labels.end(), 1) != labels.end();
  if (both) m.auc = auc(scores, labels);
  m.dice = mean_of(dices);
  m.specificity = mean_of(specs);
  m.slides = idx.size();
  m.dice_slides = dices.size();
  m.specificity_slides = specs.size();
  return out;
}

void EvalReport::aggregate() {
  std::vector<double> acc, auc_v, f1, dice_v, spec;
  for (const FoldMetrics& f : folds) {
    acc.push_back(f.acc);
    f1.push_back(f.f1);
    if (f.auc) auc_v.push_back(*f.auc);
    if (f.dice) dice_v.push_back(*f.dice);
    if (f.specificity) spec.push_back(*f.specificity);
  }
  mean = {mean_of(acc), mean_of(auc_v), mean_of(f1), mean_of(dice_v), mean_of(spec)};
  std = {sample_std(acc), sample_std(auc_v), sample_std(f1), sample_std(dice_v), sample_std(spec)};
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json fold_arr = nlohmann::json::array();
  for (std::size_t i = 0; i < folds.size(); ++i) {
    const FoldMetrics& f = folds[i];
    fold_arr.push_back({{"fold", i},
                        {"acc", f.acc},
                        {"auc", opt(f.auc)},
                        {"f1", f.f1},
                        {"dice", opt(f.dice)},
                        {"specificity", opt(f.specificity)},
                        {"slides", f.slides},
                        {"dice_slides", f.dice_slides},
                        {"specificity_slides", f.specificity_slides}});
  }
  return {{"fold", fold_arr}, {"mean", summary_json(mean)}, {"std", summary_json(std)}, {"std_kind", "sample"}};
}

CrossValidation cross_validate(std::span<const FeatureBag> bags, std::span<const SimilarityMask> masks,
                               const TrainConfig& cfg, unsigned threads) {
  cfg.validate();
  const auto k = static_cast<std::size_t>(cfg.folds);
  CrossValidation cv;
  cv.folds = kfold_split(bags.size(), k, cfg.seed);
  cv.runs.resize(k);
  cv.report.folds.resize(k);

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(k);
  auto worker = [&] {
    for (std::size_t f = next++; f < k; f = next++) {
      try {
        const std::vector<std::size_t>& test = cv.folds[f];
        const std::vector<std::size_t>& val = cv.folds[(f + 1) % k];
        std::vector<std::size_t> tr;
        for (std::size_t g = 0; g < k; ++g)
          if (g != f && g != (f + 1) % k) tr.insert(tr.end(), cv.folds[g].begin(), cv.folds[g].end());
        std::sort(tr.begin(), tr.end());
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = slide_seed(cfg.seed, f);
        cv.runs[f] = train(bags, masks, tr, val, fold_cfg);
        cv.report.folds[f] = evaluate(bags, masks, test, cv.runs[f].params, cfg.variant).metrics;
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(k)));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
  cv.report.aggregate();
  return cv;
}

std::vector<SimilarityMask> build_masks(std::span<const FeatureBag> bags, Distance distance) {
  std::vector<SimilarityMask> masks;
  masks.reserve(bags.size());
  for (const FeatureBag& bag : bags) {
    const std::vector<Edge> edges = build_adjacency(bag.grid);
    masks.push_back(similarity_mask(bag, edges, distance));
  }
  return masks;
}

void write_loss_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,train_loss,val_loss\n";
  out.precision(17);
  for (const EpochRecord& r : history) {
    out << r.epoch << ',' << r.train_loss << ',';
    if (r.val_loss) out << *r.val_loss;
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace camil
