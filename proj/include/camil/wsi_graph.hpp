#pragma once

// Slides as tile grids: tissue segmentation, the 8-neighbour tile graph,
// feature-similarity weights on its edges, a synthetic slide generator, and
// the bag file format.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "camil/tensor.hpp"

namespace camil {

struct TileCoord {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const TileCoord&, const TileCoord&) = default;
};

struct TileGrid {
  std::string slide_id;
  int width = 0;
  int height = 0;
  std::vector<TileCoord> tiles;

  /// Throws ArgumentError on out-of-range or duplicate coordinates.
  void validate() const;
  friend bool operator==(const TileGrid&, const TileGrid&) = default;
};

enum class TileLabel : std::uint8_t { kNormal = 0, kTumor = 1 };

struct FeatureBag {
  TileGrid grid;
  Matrix features;  // n x d, row i belongs to grid.tiles[i]
  int slide_label = 0;
  std::optional<std::vector<TileLabel>> tile_labels;

  std::size_t n() const { return features.rows(); }
  std::size_t d() const { return features.cols(); }
  void validate(int classes = 2) const;
  friend bool operator==(const FeatureBag&, const FeatureBag&) = default;
};

/// Undirected edge between tile indices, stored with a < b.
struct Edge {
  std::size_t a;
  std::size_t b;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Symmetric sparse neighbour weights. Both (i, j) and (j, i) are stored,
/// sorted by (row, col).
struct SimilarityMask {
  std::size_t n = 0;
  std::vector<SparseEntry> entries;

  std::size_t degree(std::size_t i) const;
  double weight(std::size_t i, std::size_t j) const;
  /// Symmetric, no self loops, degree <= 8, weights in (0, 1].
  void validate() const;
};

enum class Distance { kL2, kSsd };

// ---- Preprocessing ----------------------------------------------------------

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

using Histogram = std::array<std::uint64_t, 256>;

struct OtsuResult {
  int threshold = 0;        // pixels with value < threshold form the dark class
  bool degenerate = false;  // a single occupied level; no split exists
};

OtsuResult otsu_threshold(const Histogram& hist);
Histogram histogram(const GrayImage& img);

/// Splits the image into non-overlapping tile_size squares (partial tiles at
/// the right/bottom edge are dropped) and keeps tiles whose pixels are at
/// least half dark.
TileGrid segment_tissue(const GrayImage& img, int tile_size, std::string slide_id = "");

/// Plain (P2) and raw (P5) PGM.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

// ---- Graph ------------------------------------------------------------------

/// Edges between tissue tiles at Chebyshev distance 1, sorted.
std::vector<Edge> build_adjacency(const TileGrid& grid);

/// s_ij = exp(-||h_i - h_j||) per edge (kSsd uses the squared distance).
SimilarityMask similarity_mask(const FeatureBag& bag, std::span<const Edge> edges,
                               Distance distance = Distance::kL2);

// ---- Synthetic slides --------------------------------------------------------

struct SynthConfig {
  int grid_size = 20;
  int d = 8;
  double tumor_fraction = 0.05;
  int blob_count = 2;
  double feature_shift = 1.0;
  double noise_sigma = 0.4;
  double distractor_rate = 0.02;
  std::uint64_t seed = 7;

  /// Throws ArgumentError naming the offending field.
  void validate() const;
};

/// Per-slide seed; slides can be generated independently of each other.
std::uint64_t slide_seed(std::uint64_t seed, std::size_t index);

/// Unit vector along which tumour features are shifted for this dataset.
Matrix tumor_direction(const SynthConfig& cfg);

std::vector<FeatureBag> synth_dataset(const SynthConfig& cfg, std::size_t n_slides,
                                      double positive_rate);

// ---- Bag files -------------------------------------------------------------

void save_bag(const FeatureBag& bag, const std::filesystem::path& path);
FeatureBag load_bag(const std::filesystem::path& path);

}  // namespace camil
