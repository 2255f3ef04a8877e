#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <tuple>

#include "camil/wsi_graph.hpp"

namespace camil {

void TileGrid::validate() const {
  if (width < 0 || height < 0) throw ArgumentError("TileGrid: negative dimensions");
  std::set<TileCoord> seen;
  for (const TileCoord& t : tiles) {
    if (t.row < 0 || t.row >= height || t.col < 0 || t.col >= width) {
      throw ArgumentError("TileGrid: tile (" + std::to_string(t.row) + ", " + std::to_string(t.col) +
                          ") outside " + std::to_string(height) + "x" + std::to_string(width) + " grid");
    }
    if (!seen.insert(t).second) {
      throw ArgumentError("TileGrid: duplicate tile (" + std::to_string(t.row) + ", " +
                          std::to_string(t.col) + ")");
    }
  }
}

void FeatureBag::validate(int classes) const {
  grid.validate();
  if (features.rows() != grid.tiles.size()) {
    throw ShapeError("FeatureBag: " + std::to_string(features.rows()) + " feature rows for " +
                     std::to_string(grid.tiles.size()) + " tiles");
  }
  if (tile_labels && tile_labels->size() != grid.tiles.size()) {
    throw ShapeError("FeatureBag: tile label count does not match tile count");
  }
  if (slide_label < 0 || slide_label >= classes) {
    throw ArgumentError("FeatureBag: slide label " + std::to_string(slide_label) + " outside [0, " +
                        std::to_string(classes) + ")");
  }
}

std::size_t SimilarityMask::degree(std::size_t i) const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(),
                                                [i](const SparseEntry& e) { return e.row == i; }));
}

double SimilarityMask::weight(std::size_t i, std::size_t j) const {
  auto it = std::lower_bound(entries.begin(), entries.end(), std::make_pair(i, j),
                             [](const SparseEntry& e, const std::pair<std::size_t, std::size_t>& key) {
                               return std::tie(e.row, e.col) < std::tie(key.first, key.second);
                             });
  if (it != entries.end() && it->row == i && it->col == j) return it->value;
  return 0.0;
}

void SimilarityMask::validate() const {
  std::vector<std::size_t> deg(n, 0);
  for (const SparseEntry& e : entries) {
    if (e.row >= n || e.col >= n) throw InvariantError("mask-index", "SimilarityMask: index out of range");
    if (e.row == e.col) throw InvariantError("mask-self-loop", "SimilarityMask: self loop at " + std::to_string(e.row));
    if (!(e.value > 0.0 && e.value <= 1.0)) {
      throw InvariantError("mask-range", "SimilarityMask: weight " + std::to_string(e.value) + " outside (0, 1]");
    }
    if (weight(e.col, e.row) != e.value) throw InvariantError("mask-symmetry", "SimilarityMask: asymmetric entry");
    if (++deg[e.row] > 8) throw InvariantError("mask-degree", "SimilarityMask: more than 8 neighbours");
  }
}

std::vector<Edge> build_adjacency(const TileGrid& grid) {
  std::map<TileCoord, std::size_t> index;
  for (std::size_t i = 0; i < grid.tiles.size(); ++i) index.emplace(grid.tiles[i], i);
  std::vector<Edge> edges;
  // Each undirected edge is discovered once, from its lexicographically
  // smaller endpoint.
  constexpr int kForward[4][2] = {{0, 1}, {1, -1}, {1, 0}, {1, 1}};
  for (std::size_t i = 0; i < grid.tiles.size(); ++i) {
    const TileCoord t = grid.tiles[i];
    for (const auto& step : kForward) {
      auto it = index.find({t.row + step[0], t.col + step[1]});
      if (it == index.end()) continue;
      edges.push_back({std::min(i, it->second), std::max(i, it->second)});
    }
  }
  std::sort(edges.begin(), edges.end());
  return edges;
}

SimilarityMask similarity_mask(const FeatureBag& bag, std::span<const Edge> edges, Distance distance) {
  SimilarityMask mask;
  mask.n = bag.n();
  mask.entries.reserve(edges.size() * 2);
  const Matrix& h = bag.features;
  for (const Edge& e : edges) {
    if (e.a >= mask.n || e.b >= mask.n) throw ArgumentError("similarity_mask: edge references missing tile");
    double ssd = 0.0;
    for (std::size_t k = 0; k < h.cols(); ++k) {
      const double diff = h(e.a, k) - h(e.b, k);
      ssd += diff * diff;
    }
    const double dist = distance == Distance::kL2 ? std::sqrt(ssd) : ssd;
    // exp underflows to 0 for very distant tiles; keep the edge with the
    // smallest positive weight so every stored value stays in (0, 1].
    const double s = std::max(std::exp(-dist), std::numeric_limits<double>::min());
    mask.entries.push_back({e.a, e.b, s});
    mask.entries.push_back({e.b, e.a, s});
  }
  std::sort(mask.entries.begin(), mask.entries.end(), [](const SparseEntry& x, const SparseEntry& y) {
    return std::tie(x.row, x.col) < std::tie(y.row, y.col);
  });
  return mask;
}

}  // namespace camil
