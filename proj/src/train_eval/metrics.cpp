#include <algorithm>
#include <numeric>

#include "camil/train_eval.hpp"

namespace camil {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": " + std::to_string(a) + " vs " + std::to_string(b) + " entries");
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  require_same_length(scores.size(), labels.size(), "auc");
  // Rank-sum form of the all-pairs statistic; ties share their average rank.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1 .. j, doubled to stay in integers.
    const std::size_t doubled_rank = i + 1 + j;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += static_cast<double>(doubled_rank);
        ++positives;
      } else if (labels[order[k]] != 0) {
        throw ArgumentError("auc: labels must be 0 or 1");
      }
    }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) throw UndefinedMetricError("auc: both classes must be present");
  const double np = static_cast<double>(positives), nn = static_cast<double>(negatives);
  return (rank_sum / 2.0 - np * (np + 1.0) / 2.0) / (np * nn);
}

AccF1 acc_f1(std::span<const double> scores, std::span<const int> labels, double threshold) {
  require_same_length(scores.size(), labels.size(), "acc_f1");
  if (scores.empty()) throw UndefinedMetricError("acc_f1: no predictions");
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool truth = labels[i] == 1;
    correct += pred == truth;
    tp += pred && truth;
    fp += pred && !truth;
    fn += !pred && truth;
  }
  AccF1 out;
  out.acc = static_cast<double>(correct) / static_cast<double>(scores.size());
  const std::size_t denom = 2 * tp + fp + fn;
  out.f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  return out;
}

double dice(const TileMask& pred, const TileMask& gt) {
  require_same_length(pred.size(), gt.size(), "dice");
  std::size_t inter = 0, p = 0, g = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] && gt[i];
    p += pred[i];
    g += gt[i];
  }
  if (g == 0) throw UndefinedMetricError("dice: ground truth has no positive tiles");
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

double specificity(const TileMask& pred, const TileMask& gt) {
  require_same_length(pred.size(), gt.size(), "specificity");
  std::size_t tn = 0, negatives = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gt[i]) continue;
    ++negatives;
    tn += !pred[i];
  }
  if (negatives == 0) throw UndefinedMetricError("specificity: ground truth has no negative tiles");
  return static_cast<double>(tn) / static_cast<double>(negatives);
}

TileMask predicted_mask(const ForwardTrace& trace, Variant variant, double threshold) {
  const std::vector<double> scores = attention_scores(trace, variant);
  TileMask out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= threshold;
  return out;
}

TileMask ground_truth_mask(const FeatureBag& bag) {
  if (!bag.tile_labels) throw ArgumentError("ground_truth_mask: bag " + bag.grid.slide_id + " has no tile labels");
  TileMask out(bag.n());
  for (std::size_t i = 0; i < bag.n(); ++i) out[i] = (*bag.tile_labels)[i] == TileLabel::kTumor;
  return out;
}

}  // namespace camil
