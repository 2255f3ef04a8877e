#include <algorithm>
#include <cmath>
#include <numeric>

#include "camil/wsi_graph.hpp"

namespace camil {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr int kSteps[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};

std::size_t tumor_tile_count(const SynthConfig& cfg) {
  const double cells = static_cast<double>(cfg.grid_size) * cfg.grid_size;
  return static_cast<std::size_t>(std::llround(cfg.tumor_fraction * cells));
}

/// Grows `blob_count` blobs by random walks from random seeds until `target`
/// cells are marked. Returns a grid_size^2 occupancy vector.
std::vector<bool> grow_blobs(int g, int blob_count, std::size_t target, std::mt19937_64& rng) {
  std::vector<bool> tumor(static_cast<std::size_t>(g) * g, false);
  std::vector<std::vector<int>> blobs(blob_count);
  std::uniform_int_distribution<int> cell(0, g * g - 1);
  std::size_t marked = 0;
  for (auto& blob : blobs) {
    int c;
    do c = cell(rng);
    while (tumor[c]);
    tumor[c] = true;
    blob.push_back(c);
    ++marked;
  }
  std::uniform_int_distribution<int> step(0, 7);
  std::size_t which = 0;
  while (marked < target) {
    auto& blob = blobs[which++ % blobs.size()];
    bool grown = false;
    for (int attempt = 0; attempt < 64 && !grown; ++attempt) {
      const int from = blob[std::uniform_int_distribution<std::size_t>(0, blob.size() - 1)(rng)];
      const auto& s = kSteps[step(rng)];
      const int r = from / g + s[0], c = from % g + s[1];
      if (r < 0 || r >= g || c < 0 || c >= g || tumor[r * g + c]) continue;
      tumor[r * g + c] = true;
      blob.push_back(r * g + c);
      grown = true;
    }
    if (!grown) {
      // Random walk kept hitting occupied cells: take the first free neighbour.
      for (int from : blob) {
        for (const auto& s : kSteps) {
          const int r = from / g + s[0], c = from % g + s[1];
          if (r < 0 || r >= g || c < 0 || c >= g || tumor[r * g + c]) continue;
          tumor[r * g + c] = true;
          blob.push_back(r * g + c);
          grown = true;
          break;
        }
        if (grown) break;
      }
    }
    if (grown) ++marked;
  }
  return tumor;
}

/// Picks up to `count` cells, no two of them 8-adjacent.
std::vector<bool> scatter_isolated(int g, std::size_t count, std::mt19937_64& rng) {
  std::vector<bool> chosen(static_cast<std::size_t>(g) * g, false);
  std::vector<int> order(g * g);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t placed = 0;
  for (int c : order) {
    if (placed == count) break;
    bool clear = true;
    for (const auto& s : kSteps) {
      const int r = c / g + s[0], col = c % g + s[1];
      if (r >= 0 && r < g && col >= 0 && col < g && chosen[r * g + col]) clear = false;
    }
    if (!clear) continue;
    chosen[c] = true;
    ++placed;
  }
  return chosen;
}

}  // namespace

void SynthConfig::validate() const {
  if (grid_size < 1) throw ArgumentError("grid-size must be >= 1");
  if (d < 1) throw ArgumentError("d must be >= 1");
  if (!(tumor_fraction > 0.0 && tumor_fraction < 1.0)) {
    throw ArgumentError("tumor-fraction must lie in (0, 1), got " + std::to_string(tumor_fraction));
  }
  if (blob_count < 1) throw ArgumentError("blob-count must be >= 1");
  if (!(noise_sigma > 0.0)) throw ArgumentError("noise-sigma must be > 0");
  if (!(distractor_rate >= 0.0 && distractor_rate < 1.0)) {
    throw ArgumentError("distractor-rate must lie in [0, 1)");
  }
  if (tumor_fraction * grid_size * grid_size < blob_count) {
    throw ArgumentError("tumor-fraction x grid-size^2 is smaller than blob-count");
  }
}

std::uint64_t slide_seed(std::uint64_t seed, std::size_t index) {
  return splitmix64(seed ^ static_cast<std::uint64_t>(index));
}

Matrix tumor_direction(const SynthConfig& cfg) {
  std::mt19937_64 rng(splitmix64(cfg.seed ^ 0x7475'6d6f'7572ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix u(1, cfg.d);
  double norm = 0.0;
  for (double& v : u.data()) {
    v = normal(rng);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : u.data()) v /= norm;
  return u;
}

std::vector<FeatureBag> synth_dataset(const SynthConfig& cfg, std::size_t n_slides, double positive_rate) {
  cfg.validate();
  if (!(positive_rate >= 0.0 && positive_rate <= 1.0)) throw ArgumentError("positive-rate must lie in [0, 1]");

  const int g = cfg.grid_size;
  const std::size_t cells = static_cast<std::size_t>(g) * g;
  const Matrix u = tumor_direction(cfg);

  // Which slides are positive: a seeded shuffle of a fixed label count.
  std::vector<int> labels(n_slides, 0);
  const auto positives = static_cast<std::size_t>(std::llround(positive_rate * static_cast<double>(n_slides)));
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(std::min(positives, n_slides)), 1);
  std::mt19937_64 label_rng(splitmix64(cfg.seed));
  std::shuffle(labels.begin(), labels.end(), label_rng);

  const std::size_t tumor_target = tumor_tile_count(cfg);
  const auto distractors = static_cast<std::size_t>(std::llround(cfg.distractor_rate * static_cast<double>(cells)));

  std::vector<FeatureBag> bags(n_slides);
  for (std::size_t s = 0; s < n_slides; ++s) {
    std::mt19937_64 rng(slide_seed(cfg.seed, s));
    FeatureBag& bag = bags[s];
    bag.slide_label = labels[s];
    bag.grid.slide_id = "slide_" + std::to_string(s);
    bag.grid.width = g;
    bag.grid.height = g;
    bag.grid.tiles.reserve(cells);
    for (int r = 0; r < g; ++r)
      for (int c = 0; c < g; ++c) bag.grid.tiles.push_back({r, c});

    std::vector<bool> tumor_like;
    std::vector<TileLabel> tile_labels(cells, TileLabel::kNormal);
    if (bag.slide_label == 1) {
      tumor_like = grow_blobs(g, cfg.blob_count, tumor_target, rng);
      for (std::size_t i = 0; i < cells; ++i)
        if (tumor_like[i]) tile_labels[i] = TileLabel::kTumor;
    } else {
      tumor_like = scatter_isolated(g, distractors, rng);
    }

    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    bag.features = Matrix(cells, cfg.d);
    for (std::size_t i = 0; i < cells; ++i) {
      auto row = bag.features.row(i);
      for (int k = 0; k < cfg.d; ++k) {
        row[k] = noise(rng) + (tumor_like[i] ? cfg.feature_shift * u[k] : 0.0);
      }
    }
    bag.tile_labels = std::move(tile_labels);
  }
  return bags;
}

}  // namespace camil
