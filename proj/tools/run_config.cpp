#include "run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <type_traits>

namespace camil::cli {

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& s) {
  T value{};
  const char* first = s.data();
  const char* last = s.data() + s.size();
  std::from_chars_result r;
  if constexpr (std::is_floating_point_v<T>) {
    r = std::from_chars(first, last, value);
  } else {
    r = std::from_chars(first, last, value, 10);
  }
  if (r.ec != std::errc() || r.ptr != last || s.empty())
    throw UsageError("--" + key + ": cannot parse '" + s + "' as a number");
  return value;
}

template <class T>
T json_number(const std::string& key, const nlohmann::json& j) {
  if (std::is_integral_v<T> ? !j.is_number_integer() : !j.is_number())
    throw UsageError("config key '" + key + "': expected a number, got " + j.dump());
  if (std::is_unsigned_v<T> && j.is_number_integer() && j.get<long long>() < 0 && !j.is_number_unsigned())
    throw UsageError("config key '" + key + "': expected a non-negative value");
  return j.get<T>();
}

template <class Access>
Field number(std::string key, std::string help, Access access) {
  using T = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
  Field f;
  f.key = key;
  f.help = std::move(help);
  f.from_json = [key, access](RunConfig& c, const nlohmann::json& j) { access(c) = json_number<T>(key, j); };
  f.from_string = [key, access](RunConfig& c, const std::string& s) { access(c) = parse_number<T>(key, s); };
  f.to_json = [access](const RunConfig& c) { return nlohmann::json(access(const_cast<RunConfig&>(c))); };
  return f;
}

template <class Access>
Field text(std::string key, std::string help, Access access) {
  Field f;
  f.key = key;
  f.help = std::move(help);
  f.from_json = [key, access](RunConfig& c, const nlohmann::json& j) {
    if (!j.is_string()) throw UsageError("config key '" + key + "': expected a string, got " + j.dump());
    access(c) = j.get<std::string>();
  };
  f.from_string = [access](RunConfig& c, const std::string& s) { access(c) = s; };
  f.to_json = [access](const RunConfig& c) {
    return nlohmann::json(std::filesystem::path(access(const_cast<RunConfig&>(c))).string());
  };
  return f;
}

template <class E, class Parse, class Name>
Field choice(std::string key, std::string help, Parse parse, Name name, std::function<E&(RunConfig&)> access) {
  Field f;
  f.key = key;
  f.help = std::move(help);
  auto set = [key, parse, access](RunConfig& c, const std::string& s) {
    const std::optional<E> v = parse(s);
    if (!v) throw UsageError("--" + key + ": unknown value '" + s + "'");
    access(c) = *v;
  };
  f.from_string = set;
  f.from_json = [key, set](RunConfig& c, const nlohmann::json& j) {
    if (!j.is_string()) throw UsageError("config key '" + key + "': expected a string, got " + j.dump());
    set(c, j.get<std::string>());
  };
  f.to_json = [name, access](const RunConfig& c) {
    return nlohmann::json(std::string(name(access(const_cast<RunConfig&>(c)))));
  };
  return f;
}

Field flag(std::string key, std::string help, std::function<bool&(RunConfig&)> access) {
  Field f;
  f.key = key;
  f.help = std::move(help);
  f.is_flag = true;
  f.from_json = [key, access](RunConfig& c, const nlohmann::json& j) {
    if (!j.is_boolean()) throw UsageError("config key '" + key + "': expected true or false, got " + j.dump());
    access(c) = j.get<bool>();
  };
  f.from_string = [key, access](RunConfig& c, const std::string& s) {
    if (s == "true" || s == "1") access(c) = true;
    else if (s == "false" || s == "0") access(c) = false;
    else throw UsageError("--" + key + ": expected true or false, got '" + s + "'");
  };
  f.to_json = [access](const RunConfig& c) { return nlohmann::json(access(const_cast<RunConfig&>(c))); };
  return f;
}

std::optional<Distance> parse_distance(std::string_view s) {
  if (s == "l2") return Distance::kL2;
  if (s == "ssd") return Distance::kSsd;
  return std::nullopt;
}
std::string_view distance_name(Distance d) { return d == Distance::kL2 ? "l2" : "ssd"; }

std::optional<Features> parse_features(std::string_view s) {
  if (s == "raw") return Features::kRaw;
  if (s == "contrastive") return Features::kContrastive;
  if (s == "random") return Features::kRandom;
  return std::nullopt;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = s.find(',', start);
    const std::string item = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<Field> make_fields() {
  std::vector<Field> fs;
  fs.push_back(number("seed", "Seed for synthesis, splits, initialisation and pretraining",
                      [](RunConfig& c) -> std::uint64_t& { return c.seed; }));

  fs.push_back(number("n-slides", "Slides to synthesise", [](RunConfig& c) -> std::size_t& { return c.n_slides; }));
  fs.push_back(number("positive-rate", "Fraction of tumour slides",
                      [](RunConfig& c) -> double& { return c.positive_rate; }));
  fs.push_back(number("grid-size", "Tiles per grid side", [](RunConfig& c) -> int& { return c.synth.grid_size; }));
  fs.push_back(number("d", "Feature dimension", [](RunConfig& c) -> int& { return c.synth.d; }));
  fs.push_back(number("tumor-fraction", "Tumour tile fraction in positive slides",
                      [](RunConfig& c) -> double& { return c.synth.tumor_fraction; }));
  fs.push_back(number("blob-count", "Tumour blobs per positive slide",
                      [](RunConfig& c) -> int& { return c.synth.blob_count; }));
  fs.push_back(number("feature-shift", "Tumour mean shift along the tumour direction",
                      [](RunConfig& c) -> double& { return c.synth.feature_shift; }));
  fs.push_back(number("noise-sigma", "Per-feature noise standard deviation",
                      [](RunConfig& c) -> double& { return c.synth.noise_sigma; }));
  fs.push_back(number("distractor-rate", "Isolated tumour-like tiles in negative slides",
                      [](RunConfig& c) -> double& { return c.synth.distractor_rate; }));

  fs.push_back(number("lr", "Adam learning rate", [](RunConfig& c) -> double& { return c.train.lr; }));
  fs.push_back(number("weight-decay", "L2 weight decay", [](RunConfig& c) -> double& { return c.train.weight_decay; }));
  fs.push_back(number("epochs", "Maximum training epochs", [](RunConfig& c) -> int& { return c.train.epochs; }));
  fs.push_back(number("folds", "Cross-validation folds", [](RunConfig& c) -> int& { return c.train.folds; }));
  fs.push_back(number("patience", "Early-stopping patience in epochs",
                      [](RunConfig& c) -> int& { return c.train.patience; }));
  fs.push_back(number("hdim", "Gated pooling hidden width", [](RunConfig& c) -> std::size_t& { return c.train.hdim; }));
  fs.push_back(choice<Variant>("variant", "camil, camil-l, camil-g, mean or max", parse_variant,
                               variant_name, [](RunConfig& c) -> Variant& { return c.train.variant; }));
  fs.push_back(number("landmarks", "Nystrom landmarks (0 selects min(n, 64))",
                      [](RunConfig& c) -> std::size_t& { return c.train.landmarks; }));
  fs.push_back(choice<LandmarkStrategy>("landmark-strategy", "segment or random", parse_landmark_strategy,
                                        landmark_strategy_name,
                                        [](RunConfig& c) -> LandmarkStrategy& { return c.train.landmark_strategy; }));
  fs.push_back(number("pinv-iters", "Newton-Schulz iterations", [](RunConfig& c) -> int& { return c.train.pinv_iters; }));
  fs.push_back(choice<Distance>("distance", "l2 or ssd", parse_distance, distance_name,
                                [](RunConfig& c) -> Distance& { return c.distance; }));

  fs.push_back(choice<Features>("features", "raw, contrastive or random", parse_features, features_name,
                                [](RunConfig& c) -> Features& { return c.features; }));
  fs.push_back(number("encoder-hidden", "Encoder hidden width",
                      [](RunConfig& c) -> std::size_t& { return c.encoder_hidden; }));
  fs.push_back(number("encoder-dim", "Encoder output dimension",
                      [](RunConfig& c) -> std::size_t& { return c.encoder_dim; }));
  fs.push_back(number("pretrain-epochs", "Contrastive pretraining epochs",
                      [](RunConfig& c) -> int& { return c.pretrain.epochs; }));
  fs.push_back(number("pretrain-batch", "Tiles per contrastive batch",
                      [](RunConfig& c) -> std::size_t& { return c.pretrain.batch_size; }));
  fs.push_back(number("pretrain-lr", "Contrastive learning rate", [](RunConfig& c) -> double& { return c.pretrain.lr; }));
  fs.push_back(number("tau", "NT-Xent temperature", [](RunConfig& c) -> double& { return c.pretrain.tau; }));
  fs.push_back(number("pretrain-tiles", "Tiles sampled for pretraining",
                      [](RunConfig& c) -> std::size_t& { return c.pretrain_tiles; }));
  fs.push_back(number("jitter", "Brightness jitter bound", [](RunConfig& c) -> double& { return c.pretrain.augment.jitter; }));
  fs.push_back(number("min-zoom", "Smallest zoom-crop scale",
                      [](RunConfig& c) -> double& { return c.pretrain.augment.min_zoom; }));
  fs.push_back(number("patch-size", "Rendered tile side in pixels",
                      [](RunConfig& c) -> int& { return c.render.patch_size; }));
  fs.push_back(number("contrast", "Rendered pattern gain", [](RunConfig& c) -> double& { return c.render.contrast; }));
  fs.push_back(number("brightness-sigma", "Per-tile brightness nuisance",
                      [](RunConfig& c) -> double& { return c.render.brightness_sigma; }));
  fs.push_back(number("pixel-noise", "Per-pixel noise", [](RunConfig& c) -> double& { return c.render.pixel_noise; }));

  fs.push_back(text("data", "Dataset directory", [](RunConfig& c) -> std::filesystem::path& { return c.data; }));
  fs.push_back(text("out", "Output directory", [](RunConfig& c) -> std::filesystem::path& { return c.out; }));
  fs.push_back(text("checkpoint", "Model checkpoint file",
                    [](RunConfig& c) -> std::filesystem::path& { return c.checkpoint; }));
  fs.push_back(text("encoder", "Encoder checkpoint file (contrastive features)",
                    [](RunConfig& c) -> std::filesystem::path& { return c.encoder; }));
  fs.push_back(number("threads", "Worker threads", [](RunConfig& c) -> unsigned& { return c.threads; }));

  Field slides;
  slides.key = "slides";
  slides.help = "Comma-separated slide ids for heatmaps (default: all)";
  slides.from_string = [](RunConfig& c, const std::string& s) { c.slides = split_list(s); };
  slides.from_json = [](RunConfig& c, const nlohmann::json& j) {
    if (j.is_string()) {
      c.slides = split_list(j.get<std::string>());
      return;
    }
    if (!j.is_array()) throw UsageError("config key 'slides': expected a list of slide ids");
    c.slides.clear();
    for (const auto& v : j) {
      if (!v.is_string()) throw UsageError("config key 'slides': expected strings, got " + v.dump());
      c.slides.push_back(v.get<std::string>());
    }
  };
  slides.to_json = [](const RunConfig& c) { return nlohmann::json(c.slides); };
  fs.push_back(slides);
  fs.push_back(number("block", "Heatmap pixels per tile", [](RunConfig& c) -> int& { return c.block; }));
  fs.push_back(flag("untrained", "Evaluate seed-initialised parameters", [](RunConfig& c) -> bool& { return c.untrained; }));
  fs.push_back(number("gradcheck-tiles", "Tiles in the gradient-check bag",
                      [](RunConfig& c) -> std::size_t& { return c.gradcheck_tiles; }));
  fs.push_back(number("gradcheck-d", "Feature dimension of the gradient-check bag",
                      [](RunConfig& c) -> std::size_t& { return c.gradcheck_d; }));
  fs.push_back(flag("corrupt", "Perturb analytic gradients (negative control)",
                    [](RunConfig& c) -> bool& { return c.corrupt; }));
  return fs;
}

}  // namespace

std::string_view features_name(Features f) {
  switch (f) {
    case Features::kRaw: return "raw";
    case Features::kContrastive: return "contrastive";
    case Features::kRandom: return "random";
  }
  return "raw";
}

const std::vector<Field>& fields() {
  static const std::vector<Field> fs = make_fields();
  return fs;
}

void RunConfig::propagate_seed() {
  synth.seed = seed;
  train.seed = seed;
  pretrain.seed = seed;
  render.seed = seed;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const Field& f : fields()) j[f.key] = f.to_json(*this);
  return j;
}

void apply_json(RunConfig& cfg, const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto& fs = fields();
    const auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return f.key == key; });
    if (it == fs.end()) throw UsageError("config: unknown key '" + key + "'");
    it->from_json(cfg, value);
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  apply_json(cfg, j);
}

}  // namespace camil::cli
