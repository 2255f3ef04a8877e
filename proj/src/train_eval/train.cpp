#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

#include "camil/train_eval.hpp"

namespace camil {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ArgumentError("TrainConfig.lr must be positive");
  if (!(weight_decay >= 0.0)) throw ArgumentError("TrainConfig.weight_decay must be non-negative");
  if (epochs < 1) throw ArgumentError("TrainConfig.epochs must be >= 1");
  if (folds < 2) throw ArgumentError("TrainConfig.folds must be >= 2");
  if (patience < 1) throw ArgumentError("TrainConfig.patience must be >= 1");
  if (hdim < 1) throw ArgumentError("TrainConfig.hdim must be >= 1");
  if (pinv_iters < 1) throw ArgumentError("TrainConfig.pinv_iters must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"weight_decay", weight_decay},
          {"epochs", epochs},
          {"folds", folds},
          {"seed", seed},
          {"variant", variant_name(variant)},
          {"patience", patience},
          {"hdim", hdim},
          {"landmarks", landmarks},
          {"landmark_strategy", landmark_strategy_name(landmark_strategy)},
          {"pinv_iters", pinv_iters}};
}

std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ArgumentError("kfold_split: k must be >= 1");
  if (k > n) throw ArgumentError("kfold_split: k = " + std::to_string(k) + " exceeds n = " + std::to_string(n));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> folds(k);
  const std::size_t base = n / k, extra = n % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    folds[f].assign(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                    perm.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return folds;
}

namespace {

double mean_loss(std::span<const FeatureBag> bags, std::span<const SimilarityMask> masks,
                 std::span<const std::size_t> idx, const ModelParams& params, Variant variant) {
  double total = 0.0;
  for (std::size_t i : idx) total += loss(bags[i], masks[i], params, variant, bags[i].slide_label);
  return total / static_cast<double>(idx.size());
}

void check_indices(std::span<const FeatureBag> bags, std::span<const std::size_t> idx, const char* what) {
  for (std::size_t i : idx)
    if (i >= bags.size())
      throw ArgumentError(std::string("train: ") + what + " index " + std::to_string(i) + " out of range");
}

}  // namespace

TrainResult train(std::span<const FeatureBag> bags, std::span<const SimilarityMask> masks,
                  std::span<const std::size_t> train_idx, std::span<const std::size_t> val_idx,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (bags.size() != masks.size())
    throw ShapeError("train: " + std::to_string(bags.size()) + " bags but " + std::to_string(masks.size()) + " masks");
  if (train_idx.size() < 2) throw ArgumentError("train: need at least 2 training bags");
  check_indices(bags, train_idx, "training");
  check_indices(bags, val_idx, "validation");
  bool seen[2] = {false, false};
  for (std::size_t i : train_idx) {
    const int label = bags[i].slide_label;
    if (label < 0 || label > 1) throw ArgumentError("train: slide labels must be 0 or 1");
    seen[label] = true;
  }
  if (!seen[0] || !seen[1]) throw ArgumentError("train: training set has a single class");
  const std::size_t d = bags[train_idx[0]].d();

  TrainResult result;
  result.params = init_params(d, cfg.hdim, 2, cfg.seed);
  ModelParams& params = result.params;
  params.nystrom.landmarks = cfg.landmarks;
  params.nystrom.pinv_iters = cfg.pinv_iters;
  params.nystrom.strategy = cfg.landmark_strategy;
  params.nystrom.landmark_seed = cfg.seed;

  std::vector<ParamTensor*> tensors = params.tensors();
  std::vector<AdamState> adam;
  adam.reserve(tensors.size());
  for (ParamTensor* p : tensors) adam.emplace_back(*p, cfg.lr);

  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
  std::mt19937_64 rng(cfg.seed ^ 0x5851f42d4c957f2dULL);
  ModelParams best = params;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t i : order) {
      ForwardTrace trace = forward(bags[i], masks[i], params, cfg.variant, ForwardMode::kTraining);
      Gradients g = backward(trace, bags[i], masks[i], params, bags[i].slide_label);
      total += g.loss;
      for (std::size_t t = 0; t < tensors.size(); ++t) {
        ParamTensor& p = *tensors[t];
        p.grad = std::move(g.grads[t]);
        if (cfg.weight_decay > 0.0)
          for (std::size_t e = 0; e < p.value.size(); ++e) p.grad[e] += cfg.weight_decay * p.value[e];
        adam_step(p, adam[t]);
      }
      ++result.steps;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(order.size());
    if (!val_idx.empty()) {
      rec.val_loss = mean_loss(bags, masks, val_idx, params, cfg.variant);
      if (*rec.val_loss < best_val) {
        best_val = *rec.val_loss;
        best = params;
        result.best_epoch = epoch;
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    result.history.push_back(rec);
    if (!val_idx.empty() && since_best >= cfg.patience) break;
  }
  if (val_idx.empty()) {
    result.best_epoch = static_cast<int>(result.history.size());
  } else {
    params = std::move(best);
  }
  return result;
}

}  // namespace camil
