#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace camil::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitInvariant = 3;

struct Dataset {
  std::vector<FeatureBag> bags;
  nlohmann::json manifest;
};

/// Reads <dir>/manifest.json and every bag it lists, in manifest order.
Dataset load_dataset(const std::filesystem::path& dir);

/// Bags with features replaced according to cfg.features. Raw bags pass through.
std::vector<FeatureBag> prepare_features(const std::vector<FeatureBag>& raw, const RunConfig& cfg);

/// Tiles sampled for contrastive pretraining.
std::vector<Patch> pretraining_tiles(const std::vector<FeatureBag>& raw, const RunConfig& cfg);
PretrainResult pretrain(const std::vector<FeatureBag>& raw, const RunConfig& cfg);

struct GradcheckVariant {
  Variant variant;
  std::vector<GradCheckEntry> entries;
};
struct GradcheckReport {
  std::vector<GradcheckVariant> variants;
  double tolerance = 1e-4;
  bool passed() const;
};
GradcheckReport run_gradcheck(const RunConfig& cfg);

struct AblationRow {
  Variant variant;
  EvalReport report;
};
std::vector<AblationRow> run_ablation(const std::vector<FeatureBag>& bags, const std::vector<SimilarityMask>& masks,
                                      const RunConfig& cfg);
/// Fixed-width text table, one row per variant.
std::string ablation_table(const std::vector<AblationRow>& rows);
nlohmann::json ablation_json(const std::vector<AblationRow>& rows);

int cmd_synth(const RunConfig& cfg, std::ostream& log);
int cmd_pretrain(const RunConfig& cfg, std::ostream& log);
int cmd_train(const RunConfig& cfg, std::ostream& log);
int cmd_eval(const RunConfig& cfg, std::ostream& log);
int cmd_heatmap(const RunConfig& cfg, std::ostream& log);
int cmd_ablate(const RunConfig& cfg, std::ostream& log);
int cmd_gradcheck(const RunConfig& cfg, std::ostream& log);

}  // namespace camil::cli
