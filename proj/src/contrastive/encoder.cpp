#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "camil/autodiff.hpp"
#include "camil/container.hpp"
#include "camil/contrastive.hpp"

namespace camil {

namespace {

constexpr std::string_view kEncoderMagic = "CAMILENC";

using ad::Var;

struct EncoderVars {
  Var features, projection;
};

Matrix stack_pixels(const std::vector<Patch>& tiles, std::size_t pixels) {
  Matrix x(tiles.size(), pixels);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (tiles[i].size() != pixels) {
      throw ShapeError("encoder expects " + std::to_string(pixels) + " pixels per tile, tile " + std::to_string(i) +
                       " has " + std::to_string(tiles[i].size()));
    }
    std::copy(tiles[i].data().begin(), tiles[i].data().end(), x.row(i).begin());
  }
  return x;
}

EncoderVars encoder_vars(ad::Tape& tape, const Matrix& x, const std::vector<Var>& leaves) {
  Var in = tape.constant(x);
  Var hidden = ad::tanh(ad::add_row(ad::matmul(in, ad::transpose(leaves[0])), leaves[1]));
  Var features = ad::add_row(ad::matmul(hidden, ad::transpose(leaves[2])), leaves[3]);
  Var projection = ad::add_row(ad::matmul(features, ad::transpose(leaves[4])), leaves[5]);
  return {features, projection};
}

std::size_t encoder_payload_len(const nlohmann::json& h) {
  std::size_t total = 0;
  for (const auto& t : h.at("tensors")) total += t.at("rows").get<std::size_t>() * t.at("cols").get<std::size_t>();
  return total;
}

}  // namespace

std::vector<ParamTensor*> EncoderParams::tensors() { return {&w1, &b1, &w2, &b2, &wp, &bp}; }
std::vector<const ParamTensor*> EncoderParams::tensors() const { return {&w1, &b1, &w2, &b2, &wp, &bp}; }

EncoderParams init_encoder(std::size_t pixels, std::size_t hidden, std::size_t e, std::uint64_t seed,
                           std::size_t e_proj) {
  if (pixels == 0 || hidden == 0 || e == 0) throw ArgumentError("init_encoder: dimensions must be >= 1");
  if (e_proj == 0) e_proj = std::max<std::size_t>(1, e / 2);
  std::mt19937_64 rng(seed);
  auto xavier = [&rng](std::string name, std::size_t rows, std::size_t cols) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = dist(rng);
    return ParamTensor(std::move(name), std::move(m));
  };
  EncoderParams p;
  p.w1 = xavier("encoder.w1", hidden, pixels);
  p.b1 = ParamTensor("encoder.b1", Matrix(1, hidden));
  p.w2 = xavier("encoder.w2", e, hidden);
  p.b2 = ParamTensor("encoder.b2", Matrix(1, e));
  p.wp = xavier("encoder.wp", e_proj, e);
  p.bp = ParamTensor("encoder.bp", Matrix(1, e_proj));
  return p;
}

Matrix encode(const std::vector<Patch>& tiles, const EncoderParams& params) {
  if (tiles.empty()) return Matrix(0, params.dim());
  ad::Tape tape(false);
  std::vector<Var> leaves;
  for (const ParamTensor* t : params.tensors()) leaves.push_back(tape.constant(t->value));
  return encoder_vars(tape, stack_pixels(tiles, params.pixels()), leaves).features.value();
}

PretrainResult pretrain_encoder(const std::vector<Patch>& tiles, EncoderParams params, const PretrainConfig& cfg) {
  if (tiles.size() < 2) throw ArgumentError("pretrain_encoder: need at least 2 tiles");
  if (cfg.epochs < 0) throw ArgumentError("pretrain_encoder: epochs must be >= 0");
  if (cfg.batch_size < 1) throw ArgumentError("pretrain_encoder: batch size must be >= 1");
  PretrainResult result;
  std::vector<AdamState> adam;
  for (const ParamTensor* t : params.tensors()) adam.emplace_back(*t, cfg.lr);

  std::mt19937_64 order_rng(cfg.seed);
  std::vector<std::size_t> order(tiles.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::min(cfg.batch_size, tiles.size());
  std::uint64_t view_seed = cfg.seed * 0x9e3779b97f4a7c15ULL;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double total = 0.0;
    int batches = 0;
    // A trailing batch of one tile has no negatives; it is skipped.
    for (std::size_t start = 0; start + 1 < tiles.size(); start += batch) {
      const std::size_t end = std::min(start + batch, tiles.size());
      if (end - start < 2) break;
      std::vector<Patch> views;
      views.reserve(2 * (end - start));
      for (std::size_t i = start; i < end; ++i) {
        views.push_back(augment(tiles[order[i]], ++view_seed, cfg.augment));
        views.push_back(augment(tiles[order[i]], ++view_seed, cfg.augment));
      }
      ad::Tape tape;
      std::vector<Var> leaves;
      for (const ParamTensor* t : params.tensors()) leaves.push_back(tape.variable(t->value));
      const EncoderVars vars = encoder_vars(tape, stack_pixels(views, params.pixels()), leaves);
      const NtXent loss = nt_xent({vars.projection.value(), cfg.tau});
      tape.backward(vars.projection, loss.grad);
      const std::vector<ParamTensor*> ts = params.tensors();
      for (std::size_t k = 0; k < ts.size(); ++k) {
        ts[k]->grad = tape.grad(leaves[k]);
        adam_step(*ts[k], adam[k]);
      }
      total += loss.loss;
      ++batches;
    }
    result.epoch_loss.push_back(batches ? total / batches : 0.0);
  }
  result.params = std::move(params);
  return result;
}

void save_encoder(const EncoderParams& params, const std::filesystem::path& path) {
  nlohmann::json h;
  h["pixels"] = params.pixels();
  h["hidden"] = params.hidden();
  h["e"] = params.dim();
  h["e_proj"] = params.proj_dim();
  std::vector<double> payload;
  auto tensors = nlohmann::json::array();
  for (const ParamTensor* t : params.tensors()) {
    tensors.push_back({{"name", t->name}, {"rows", t->value.rows()}, {"cols", t->value.cols()}});
    payload.insert(payload.end(), t->value.data().begin(), t->value.data().end());
  }
  h["tensors"] = std::move(tensors);
  io::write_container(path, kEncoderMagic, h, payload);
}

EncoderParams load_encoder(const std::filesystem::path& path) {
  const io::Container c = io::read_container(path, kEncoderMagic, encoder_payload_len);
  const nlohmann::json& h = c.header;
  try {
    EncoderParams p = init_encoder(h.at("pixels").get<std::size_t>(), h.at("hidden").get<std::size_t>(),
                                   h.at("e").get<std::size_t>(), 0, h.at("e_proj").get<std::size_t>());
    const auto& specs = h.at("tensors");
    std::vector<ParamTensor*> tensors = p.tensors();
    if (specs.size() != tensors.size()) throw ParseError("encoder header: wrong tensor count", 9);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto rows = specs[i].at("rows").get<std::size_t>();
      const auto cols = specs[i].at("cols").get<std::size_t>();
      if (specs[i].at("name").get<std::string>() != tensors[i]->name || rows != tensors[i]->value.rows() ||
          cols != tensors[i]->value.cols()) {
        throw ParseError("encoder header: tensor " + tensors[i]->name + " has unexpected name or shape", 9);
      }
      std::copy_n(c.payload.begin() + static_cast<std::ptrdiff_t>(offset), rows * cols,
                  tensors[i]->value.data().begin());
      offset += rows * cols;
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("encoder header: ") + e.what(), 9);
  } catch (const ArgumentError& e) {
    throw ParseError(std::string("encoder header: ") + e.what(), 9);
  }
}

}  // namespace camil
