#pragma once

// Training loop, cross-validation, slide- and tile-level metrics, reports and
// attention heatmaps.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "camil/model.hpp"

namespace camil {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-5;
  int epochs = 100;
  int folds = 5;
  std::uint64_t seed = 7;
  Variant variant = Variant::kCamil;
  int patience = 10;
  std::size_t hdim = 16;
  std::size_t landmarks = 16;  // 0 selects min(n, 64)
  LandmarkStrategy landmark_strategy = LandmarkStrategy::kSegmentMeans;
  int pinv_iters = 20;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Seeded permutation of 0..n-1 cut into k folds whose sizes differ by at most 1.
std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainResult {
  ModelParams params;  // parameters at the best validation loss
  std::vector<EpochRecord> history;
  std::size_t steps = 0;
  int best_epoch = 0;
};

/// One Adam step per training slide per epoch, slides visited in a seeded
/// shuffled order. With a non-empty validation set, training stops after
/// `patience` epochs without improvement and the best parameters are returned;
/// otherwise the final parameters are.
TrainResult train(std::span<const FeatureBag> bags, std::span<const SimilarityMask> masks,
                  std::span<const std::size_t> train_idx, std::span<const std::size_t> val_idx,
                  const TrainConfig& cfg);

// ---- Metrics ------------------------------------------------------------------

/// Mann-Whitney: P(score+ > score-) + P(tie) / 2 over all pairs.
double auc(std::span<const double> scores, std::span<const int> labels);

struct AccF1 {
  double acc = 0.0;
  double f1 = 0.0;
};
/// Predictions are score >= threshold.
AccF1 acc_f1(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

using TileMask = std::vector<bool>;

/// 2|P & G| / (|P| + |G|). Throws UndefinedMetricError when G is empty.
double dice(const TileMask& pred, const TileMask& gt);
/// TN / (TN + FP). Throws UndefinedMetricError when G has no negatives.
double specificity(const TileMask& pred, const TileMask& gt);

/// attention_scores >= 0.5.
TileMask predicted_mask(const ForwardTrace& trace, Variant variant, double threshold = 0.5);
TileMask ground_truth_mask(const FeatureBag& bag);

// ---- Evaluation -----------------------------------------------------------

struct FoldMetrics {
  double acc = 0.0;
  std::optional<double> auc;          // absent when the fold has one class
  double f1 = 0.0;
  std::optional<double> dice;         // mean over slides with tumour tiles
  std::optional<double> specificity;  // mean over slides without tumour tiles
  std::size_t slides = 0;
  std::size_t dice_slides = 0;
  std::size_t specificity_slides = 0;
};

struct SlidePrediction {
  std::string slide_id;
  int label = 0;
  double probability = 0.0;
};

struct Evaluation {
  FoldMetrics metrics;
  std::vector<SlidePrediction> predictions;
};

Evaluation evaluate(std::span<const FeatureBag> bags, std::span<const SimilarityMask> masks,
                    std::span<const std::size_t> idx, const ModelParams& params, Variant variant);

struct MetricSummary {
  std::optional<double> acc, auc, f1, dice, specificity;
};

struct EvalReport {
  std::vector<FoldMetrics> folds;
  MetricSummary mean;
  MetricSummary std;  // sample standard deviation (n - 1); absent below two folds

  /// Recomputes mean and std from `folds`.
  void aggregate();
  nlohmann::json to_json() const;
};

struct CrossValidation {
  EvalReport report;
  std::vector<TrainResult> runs;  // one per fold
  std::vector<std::vector<std::size_t>> folds;
};

/// Fold f is the test set, fold (f + 1) mod k the validation set and the rest
/// is trained on. Folds run on up to `threads` threads; results do not depend
/// on the thread count.
CrossValidation cross_validate(std::span<const FeatureBag> bags, std::span<const SimilarityMask> masks,
                               const TrainConfig& cfg, unsigned threads = 1);

/// Similarity masks for every bag.
std::vector<SimilarityMask> build_masks(std::span<const FeatureBag> bags, Distance distance = Distance::kL2);

void write_loss_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);
void write_json(const nlohmann::json& j, const std::filesystem::path& path);

// ---- Heatmaps ------------------------------------------------------------------

/// One block x block square per grid cell, intensity round(255 * score);
/// cells without tissue are 0.
GrayImage heatmap_image(std::span<const double> scores, const TileGrid& grid, int block = 8);
void heatmap_export(const ForwardTrace& trace, const TileGrid& grid, const std::filesystem::path& path,
                    int block = 8);

}  // namespace camil
