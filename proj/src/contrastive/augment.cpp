#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include "camil/contrastive.hpp"

namespace camil {

namespace {

void require_square(const Patch& p, const char* op) {
  if (p.rows() != p.cols() || p.rows() == 0) {
    throw ShapeError(std::string(op) + ": expected a non-empty square patch, got " + p.shape_str());
  }
}

}  // namespace

Patch rotate90(const Patch& p, int k) {
  require_square(p, "rotate90");
  const std::size_t n = p.rows();
  Patch out = p;
  for (int turn = 0; turn < ((k % 4) + 4) % 4; ++turn) {
    Patch next(n, n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) next(r, c) = out(c, n - 1 - r);
    out = std::move(next);
  }
  return out;
}

Patch reflect(const Patch& p) {
  require_square(p, "reflect");
  const std::size_t n = p.rows();
  Patch out(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) = p(r, n - 1 - c);
  return out;
}

Patch jitter(const Patch& p, double delta) {
  Patch out = p;
  for (double& v : out.data()) v += delta;
  return out;
}

Patch zoom_crop(const Patch& p, double scale) {
  require_square(p, "zoom_crop");
  if (!(scale > 0.0 && scale <= 1.0)) throw ArgumentError("zoom_crop: scale must lie in (0, 1]");
  const std::size_t n = p.rows();
  const double size = static_cast<double>(n);
  const double crop = scale * size;
  const double offset = (size - crop) / 2.0;
  auto sample = [&](double y, double x) {
    y = std::clamp(y, 0.0, size - 1.0);
    x = std::clamp(x, 0.0, size - 1.0);
    const auto y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, n - 1), x1 = std::min(x0 + 1, n - 1);
    const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    return (1 - fy) * ((1 - fx) * p(y0, x0) + fx * p(y0, x1)) + fy * ((1 - fx) * p(y1, x0) + fx * p(y1, x1));
  };
  Patch out(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double y = offset + (static_cast<double>(r) + 0.5) * crop / size - 0.5;
      const double x = offset + (static_cast<double>(c) + 0.5) * crop / size - 0.5;
      out(r, c) = sample(y, x);
    }
  return out;
}

Patch augment(const Patch& p, std::uint64_t seed, const AugmentConfig& cfg) {
  std::mt19937_64 rng(seed);
  std::array<Augmentation, 4> ops = {Augmentation::kJitter, Augmentation::kZoom, Augmentation::kRotate,
                                     Augmentation::kReflect};
  std::shuffle(ops.begin(), ops.end(), rng);
  Patch out = p;
  for (int i = 0; i < 2; ++i) {
    switch (ops[i]) {
      case Augmentation::kJitter:
        out = jitter(out, std::uniform_real_distribution<double>(-cfg.jitter, cfg.jitter)(rng));
        break;
      case Augmentation::kZoom:
        out = zoom_crop(out, std::uniform_real_distribution<double>(cfg.min_zoom, 1.0)(rng));
        break;
      case Augmentation::kRotate:
        out = rotate90(out, std::uniform_int_distribution<int>(1, 3)(rng));
        break;
      case Augmentation::kReflect:
        out = reflect(out);
        break;
    }
  }
  return out;
}

}  // namespace camil
