#include <cctype>
#include <fstream>
#include <iterator>

#include "camil/wsi_graph.hpp"

namespace camil {

Histogram histogram(const GrayImage& img) {
  Histogram h{};
  for (std::uint8_t p : img.pixels) ++h[p];
  return h;
}

OtsuResult otsu_threshold(const Histogram& hist) {
  double total = 0.0, sum_all = 0.0;
  int occupied = 0, last_level = 0;
  for (int v = 0; v < 256; ++v) {
    const double c = static_cast<double>(hist[v]);
    total += c;
    sum_all += c * v;
    if (hist[v] != 0) {
      ++occupied;
      last_level = v;
    }
  }
  if (total == 0.0) throw ArgumentError("otsu_threshold: histogram is empty");
  if (occupied == 1) return {last_level, true};

  // Dark class = levels < t. Scan every t in 1..255, keep the first maximum.
  double w0 = 0.0, sum0 = 0.0;
  double best = -1.0;
  int best_t = 1;
  for (int t = 1; t < 256; ++t) {
    w0 += static_cast<double>(hist[t - 1]);
    sum0 += static_cast<double>(hist[t - 1]) * (t - 1);
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double between = (w0 / total) * (w1 / total) * (mu0 - mu1) * (mu0 - mu1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return {best_t, false};
}

TileGrid segment_tissue(const GrayImage& img, int tile_size, std::string slide_id) {
  if (tile_size <= 0) throw ArgumentError("segment_tissue: tile size must be positive");
  if (img.width < tile_size || img.height < tile_size) {
    throw ArgumentError("segment_tissue: image " + std::to_string(img.width) + "x" +
                        std::to_string(img.height) + " is smaller than one " +
                        std::to_string(tile_size) + " px tile");
  }
  const OtsuResult otsu = otsu_threshold(histogram(img));
  // A single-level image has no split; classify it by absolute brightness.
  auto dark = [&](std::uint8_t p) {
    return otsu.degenerate ? p < 128 : p < otsu.threshold;
  };

  TileGrid grid;
  grid.slide_id = std::move(slide_id);
  grid.width = img.width / tile_size;
  grid.height = img.height / tile_size;
  const long half = static_cast<long>(tile_size) * tile_size;
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      long count = 0;
      for (int y = r * tile_size; y < (r + 1) * tile_size; ++y)
        for (int x = c * tile_size; x < (c + 1) * tile_size; ++x) count += dark(img.at(x, y));
      if (2 * count >= half) grid.tiles.push_back({r, c});
    }
  }
  return grid;
}

namespace {

class PgmReader {
 public:
  explicit PgmReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  std::string token() {
    skip_space_and_comments();
    std::string t;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) t.push_back(static_cast<char>(bytes_[pos_++]));
    if (t.empty()) throw ParseError("PGM: unexpected end of file", pos_);
    return t;
  }

  int integer() {
    const std::size_t at = pos_;
    const std::string t = token();
    try {
      std::size_t used = 0;
      const int v = std::stoi(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw ParseError("PGM: expected integer, got '" + t + "'", at);
    }
  }

  /// Raw data begins after exactly one whitespace byte following maxval.
  void skip_single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw ParseError("PGM: missing separator", pos_);
    ++pos_;
  }

  std::size_t pos() const { return pos_; }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  PgmReader r(std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
  const std::string magic = r.token();
  if (magic != "P2" && magic != "P5") throw ParseError("PGM: unsupported magic '" + magic + "'", 0);
  GrayImage img;
  img.width = r.integer();
  img.height = r.integer();
  const int maxval = r.integer();
  if (img.width <= 0 || img.height <= 0) throw ParseError("PGM: non-positive dimensions", r.pos());
  if (maxval <= 0 || maxval > 255) throw ParseError("PGM: only 8-bit maxval supported", r.pos());
  const std::size_t count = static_cast<std::size_t>(img.width) * img.height;
  img.pixels.resize(count);
  auto rescale = [maxval](int v) { return static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval); };
  if (magic == "P5") {
    r.skip_single_space();
    const std::size_t start = r.pos();
    if (r.bytes().size() - start < count) throw ParseError("PGM: truncated raster", r.bytes().size());
    for (std::size_t i = 0; i < count; ++i) img.pixels[i] = rescale(r.bytes()[start + i]);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t at = r.pos();
      const int v = r.integer();
      if (v < 0 || v > maxval) throw ParseError("PGM: sample out of range", at);
      img.pixels[i] = rescale(v);
    }
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace camil
