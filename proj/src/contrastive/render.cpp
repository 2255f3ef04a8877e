#include <cmath>
#include <random>

#include "camil/contrastive.hpp"

namespace camil {

std::vector<Patch> render_basis(std::size_t d, const RenderConfig& cfg) {
  if (cfg.patch_size < 1) throw ArgumentError("patch-size must be >= 1");
  const auto n = static_cast<std::size_t>(cfg.patch_size);
  std::mt19937_64 rng(cfg.seed ^ 0x6261'7369'73ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Patch> basis;
  for (std::size_t k = 0; k < d; ++k) {
    Patch raw(n, n);
    for (double& v : raw.data()) v = normal(rng);
    // Average over the eight symmetries of the square.
    Patch sym(n, n);
    for (int flip = 0; flip < 2; ++flip) {
      const Patch base = flip ? reflect(raw) : raw;
      for (int turn = 0; turn < 4; ++turn) sym = add(sym, rotate90(base, turn));
    }
    double mean = 0.0;
    for (double v : sym.data()) mean += v;
    mean /= static_cast<double>(sym.size());
    double norm = 0.0;
    for (double& v : sym.data()) {
      v -= mean;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (double& v : sym.data()) v /= norm;
    basis.push_back(std::move(sym));
  }
  return basis;
}

std::vector<Patch> render_tiles(const FeatureBag& bag, const std::vector<Patch>& basis, const RenderConfig& cfg,
                                std::uint64_t seed) {
  if (basis.size() != bag.d()) {
    throw ShapeError("render_tiles: " + std::to_string(basis.size()) + " patterns for d=" + std::to_string(bag.d()));
  }
  const auto n = static_cast<std::size_t>(cfg.patch_size);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> brightness(0.0, cfg.brightness_sigma);
  std::normal_distribution<double> noise(0.0, cfg.pixel_noise);
  std::vector<Patch> tiles;
  tiles.reserve(bag.n());
  for (std::size_t i = 0; i < bag.n(); ++i) {
    Patch p(n, n, 0.5 + brightness(rng));
    for (std::size_t k = 0; k < bag.d(); ++k) {
      const double coef = cfg.contrast * bag.features(i, k);
      const auto pattern = basis[k].data();
      auto out = p.data();
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += coef * pattern[j];
    }
    for (double& v : p.data()) v += noise(rng);
    tiles.push_back(std::move(p));
  }
  return tiles;
}

FeatureBag encode_bag(const FeatureBag& bag, const std::vector<Patch>& tiles, const EncoderParams& params) {
  if (tiles.size() != bag.n()) throw ShapeError("encode_bag: tile count does not match bag");
  FeatureBag out = bag;
  out.features = encode(tiles, params);
  return out;
}

}  // namespace camil
