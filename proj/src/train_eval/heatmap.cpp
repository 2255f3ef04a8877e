#include <cmath>

#include "camil/train_eval.hpp"

namespace camil {

GrayImage heatmap_image(std::span<const double> scores, const TileGrid& grid, int block) {
  if (block < 1) throw ArgumentError("heatmap: block must be >= 1");
  if (scores.size() != grid.tiles.size())
    throw ShapeError("heatmap: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(grid.tiles.size()) + " tiles");
  grid.validate();
  GrayImage img;
  img.width = grid.width * block;
  img.height = grid.height * block;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores[i];
    if (!(s >= 0.0 && s <= 1.0)) throw InvariantError("score-range", "heatmap: score " + std::to_string(s) + " outside [0, 1]");
    const auto v = static_cast<std::uint8_t>(std::lround(255.0 * s));
    const TileCoord c = grid.tiles[i];
    for (int y = c.row * block; y < (c.row + 1) * block; ++y)
      for (int x = c.col * block; x < (c.col + 1) * block; ++x)
        img.pixels[static_cast<std::size_t>(y) * img.width + x] = v;
  }
  return img;
}

void heatmap_export(const ForwardTrace& trace, const TileGrid& grid, const std::filesystem::path& path, int block) {
  write_pgm(path, heatmap_image(attention_scores(trace, trace.variant), grid, block));
}

}  // namespace camil
