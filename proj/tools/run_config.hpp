#pragma once

// Merged configuration for every subcommand. Each field is reachable under
// one key, used both as the long flag name and as the JSON config key.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "camil/contrastive.hpp"
#include "camil/train_eval.hpp"

namespace camil::cli {

/// Bad flag or config value; maps to exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Features { kRaw, kContrastive, kRandom };

struct RunConfig {
  std::uint64_t seed = 7;

  SynthConfig synth;
  std::size_t n_slides = 300;
  double positive_rate = 0.5;

  TrainConfig train;
  Distance distance = Distance::kL2;

  Features features = Features::kRaw;
  std::size_t encoder_hidden = 32;
  std::size_t encoder_dim = 8;
  PretrainConfig pretrain;
  std::size_t pretrain_tiles = 4096;
  RenderConfig render;

  std::filesystem::path data = "data";
  std::filesystem::path out = "out";
  std::filesystem::path checkpoint;
  std::filesystem::path encoder;
  unsigned threads = 1;

  std::vector<std::string> slides;  // heatmap; empty selects every slide
  int block = 8;
  bool untrained = false;           // eval with seed-initialised parameters

  std::size_t gradcheck_tiles = 12;
  std::size_t gradcheck_d = 8;
  bool corrupt = false;             // gradcheck negative-control hook

  /// Pushes `seed` into every seeded sub-config.
  void propagate_seed();
  nlohmann::json to_json() const;
};

/// One configurable field.
struct Field {
  std::string key;
  std::string help;
  std::function<void(RunConfig&, const nlohmann::json&)> from_json;
  std::function<void(RunConfig&, const std::string&)> from_string;
  std::function<nlohmann::json(const RunConfig&)> to_json;
  bool is_flag = false;
};

const std::vector<Field>& fields();

/// Applies a JSON object's keys; unknown keys and ill-typed values throw UsageError.
void apply_json(RunConfig& cfg, const nlohmann::json& j);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

std::string_view features_name(Features f);

}  // namespace camil::cli
