#include "camil/container.hpp"
#include "camil/model.hpp"

namespace camil {

namespace {

constexpr std::string_view kModelMagic = "CAMILMDL";

std::size_t model_payload_len(const nlohmann::json& h) {
  std::size_t total = 0;
  for (const auto& t : h.at("tensors")) total += t.at("rows").get<std::size_t>() * t.at("cols").get<std::size_t>();
  return total;
}

}  // namespace

void save_model(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const ModelParams& p = ckpt.params;
  nlohmann::json h;
  h["d"] = p.d();
  h["hdim"] = p.hdim();
  h["c"] = p.classes();
  h["m"] = p.nystrom.landmarks;
  h["pinv_iters"] = p.nystrom.pinv_iters;
  h["variant"] = variant_name(ckpt.variant);
  h["landmark_strategy"] = landmark_strategy_name(p.nystrom.strategy);
  h["landmark_seed"] = p.nystrom.landmark_seed;
  h["seed"] = p.seed;
  std::vector<double> payload;
  auto tensors = nlohmann::json::array();
  for (const ParamTensor* t : p.tensors()) {
    tensors.push_back({{"name", t->name}, {"rows", t->value.rows()}, {"cols", t->value.cols()}});
    payload.insert(payload.end(), t->value.data().begin(), t->value.data().end());
  }
  h["tensors"] = std::move(tensors);
  io::write_container(path, kModelMagic, h, payload);
}

Checkpoint load_model(const std::filesystem::path& path) {
  const io::Container c = io::read_container(path, kModelMagic, model_payload_len);
  const nlohmann::json& h = c.header;
  Checkpoint ckpt;
  try {
    const auto variant = parse_variant(h.at("variant").get<std::string>());
    const auto strategy = parse_landmark_strategy(h.at("landmark_strategy").get<std::string>());
    if (!variant || !strategy) throw ParseError("model header: unknown variant or landmark strategy", 9);
    ckpt.variant = *variant;
    ModelParams& p = ckpt.params;
    p = init_params(h.at("d").get<std::size_t>(), h.at("hdim").get<std::size_t>(), h.at("c").get<std::size_t>(), 0);
    p.seed = h.at("seed").get<std::uint64_t>();
    p.nystrom.landmarks = h.at("m").get<std::size_t>();
    p.nystrom.pinv_iters = h.at("pinv_iters").get<int>();
    p.nystrom.strategy = *strategy;
    p.nystrom.landmark_seed = h.at("landmark_seed").get<std::uint64_t>();
    const auto& specs = h.at("tensors");
    std::vector<ParamTensor*> tensors = p.tensors();
    if (specs.size() != tensors.size()) throw ParseError("model header: wrong tensor count", 9);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto rows = specs[i].at("rows").get<std::size_t>();
      const auto cols = specs[i].at("cols").get<std::size_t>();
      if (specs[i].at("name").get<std::string>() != tensors[i]->name || rows != tensors[i]->value.rows() ||
          cols != tensors[i]->value.cols()) {
        throw ParseError("model header: tensor " + tensors[i]->name + " has unexpected name or shape", 9);
      }
      std::copy_n(c.payload.begin() + static_cast<std::ptrdiff_t>(offset), rows * cols,
                  tensors[i]->value.data().begin());
      offset += rows * cols;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model header: ") + e.what(), 9);
  }
  return ckpt;
}

}  // namespace camil
