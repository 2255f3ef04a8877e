#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <queue>
#include <random>

#include "camil/wsi_graph.hpp"
#include "test_util.hpp"

using namespace camil;
namespace fs = std::filesystem;

namespace {

double between_class_variance(const Histogram& h, int t) {
  double w0 = 0, w1 = 0, s0 = 0, s1 = 0;
  for (int v = 0; v < 256; ++v) {
    if (v < t) {
      w0 += h[v];
      s0 += static_cast<double>(h[v]) * v;
    } else {
      w1 += h[v];
      s1 += static_cast<double>(h[v]) * v;
    }
  }
  if (w0 == 0 || w1 == 0) return -1.0;
  const double mu0 = s0 / w0, mu1 = s1 / w1, total = w0 + w1;
  return w0 / total * w1 / total * (mu0 - mu1) * (mu0 - mu1);
}

TileGrid full_grid(int rows, int cols) {
  TileGrid g;
  g.width = cols;
  g.height = rows;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) g.tiles.push_back({r, c});
  return g;
}

FeatureBag random_bag(TileGrid grid, std::size_t d, std::mt19937_64& rng) {
  FeatureBag bag;
  const std::size_t n = grid.tiles.size();
  bag.grid = std::move(grid);
  bag.features = testing::random_matrix(n, d, rng);
  return bag;
}

/// 8-connected components among the flagged cells of a g x g grid.
int components(const std::vector<bool>& on, int g) {
  std::vector<bool> seen(on.size(), false);
  int count = 0;
  for (int start = 0; start < g * g; ++start) {
    if (!on[start] || seen[start]) continue;
    ++count;
    std::queue<int> q;
    q.push(start);
    seen[start] = true;
    while (!q.empty()) {
      const int c = q.front();
      q.pop();
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int r = c / g + dr, col = c % g + dc;
          if (r < 0 || r >= g || col < 0 || col >= g) continue;
          const int nb = r * g + col;
          if (on[nb] && !seen[nb]) {
            seen[nb] = true;
            q.push(nb);
          }
        }
    }
  }
  return count;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("camil_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("otsu_threshold") {
  SUBCASE("two delta peaks") {
    Histogram h{};
    h[10] = 500;
    h[200] = 300;
    const OtsuResult r = otsu_threshold(h);
    CHECK_FALSE(r.degenerate);
    CHECK(r.threshold > 10);
    CHECK(r.threshold <= 200);
  }
  SUBCASE("single level is degenerate") {
    Histogram h{};
    h[77] = 12;
    const OtsuResult r = otsu_threshold(h);
    CHECK(r.degenerate);
    CHECK(r.threshold == 77);
  }
  SUBCASE("empty histogram") { CHECK_THROWS_AS(otsu_threshold(Histogram{}), ArgumentError); }
  SUBCASE("property: matches an exhaustive scan on bimodal mixtures") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 100; ++trial) {
      Histogram h{};
      std::normal_distribution<double> a(40 + rng() % 60, 5 + rng() % 20), b(150 + rng() % 80, 5 + rng() % 20);
      const int na = 100 + static_cast<int>(rng() % 2000), nb = 100 + static_cast<int>(rng() % 2000);
      for (int i = 0; i < na + nb; ++i) {
        const double v = std::round(i < na ? a(rng) : b(rng));
        ++h[static_cast<std::size_t>(std::clamp(v, 0.0, 255.0))];
      }
      int best_t = -1;
      double best = -1.0;
      for (int t = 0; t <= 255; ++t) {
        const double bv = between_class_variance(h, t);
        if (bv > best) {
          best = bv;
          best_t = t;
        }
      }
      CHECK(otsu_threshold(h).threshold == best_t);
    }
  }
}

TEST_CASE("segment_tissue") {
  SUBCASE("all white") {
    GrayImage img{64, 64, std::vector<std::uint8_t>(64 * 64, 255)};
    CHECK(segment_tissue(img, 16).tiles.empty());
  }
  SUBCASE("all black 512x512 at 256 px") {
    GrayImage img{512, 512, std::vector<std::uint8_t>(512 * 512, 0)};
    const TileGrid g = segment_tissue(img, 256);
    CHECK(g.tiles.size() == 4);
    CHECK(g.width == 2);
    CHECK(g.height == 2);
  }
  SUBCASE("half black, half white") {
    GrayImage img{64, 48, std::vector<std::uint8_t>(64 * 48, 240)};
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 32; ++x) img.pixels[y * 64 + x] = 20;
    const TileGrid g = segment_tissue(img, 16);
    std::vector<TileCoord> expected;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 2; ++c) expected.push_back({r, c});
    CHECK(g.tiles == expected);
  }
  SUBCASE("property: tiles agree with a per-tile pixel count") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const int ts = 4 + static_cast<int>(rng() % 6);
      GrayImage img{ts * 5 + static_cast<int>(rng() % ts), ts * 4 + static_cast<int>(rng() % ts), {}};
      img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
      for (auto& p : img.pixels) p = rng() % 2 ? static_cast<std::uint8_t>(30 + rng() % 40) : static_cast<std::uint8_t>(180 + rng() % 60);
      const int t = otsu_threshold(histogram(img)).threshold;
      std::vector<TileCoord> expected;
      for (int r = 0; r < img.height / ts; ++r)
        for (int c = 0; c < img.width / ts; ++c) {
          int dark = 0;
          for (int y = 0; y < ts; ++y)
            for (int x = 0; x < ts; ++x) dark += img.at(c * ts + x, r * ts + y) < t;
          if (2 * dark >= ts * ts) expected.push_back({r, c});
        }
      CHECK(segment_tissue(img, ts).tiles == expected);
    }
  }
  SUBCASE("image smaller than a tile") {
    GrayImage img{8, 8, std::vector<std::uint8_t>(64, 0)};
    CHECK_THROWS_AS(segment_tissue(img, 16), ArgumentError);
  }
}

TEST_CASE("pgm round trip") {
  TempDir dir;
  GrayImage img{5, 3, {}};
  for (int i = 0; i < 15; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 17));
  write_pgm(dir.path / "a.pgm", img);
  const GrayImage back = read_pgm(dir.path / "a.pgm");
  CHECK(back.width == 5);
  CHECK(back.pixels == img.pixels);

  std::ofstream(dir.path / "plain.pgm") << "P2\n# comment\n2 2\n15\n0 15\n7 8\n";
  const GrayImage plain = read_pgm(dir.path / "plain.pgm");
  CHECK(plain.pixels == std::vector<std::uint8_t>{0, 255, 119, 136});

  std::ofstream(dir.path / "bad.pgm") << "P6\n2 2\n255\n";
  CHECK_THROWS_AS(read_pgm(dir.path / "bad.pgm"), ParseError);
  std::ofstream(dir.path / "short.pgm") << "P5\n4 4\n255\nab";
  CHECK_THROWS_AS(read_pgm(dir.path / "short.pgm"), ParseError);
}

TEST_CASE("build_adjacency") {
  SUBCASE("single tile") { CHECK(build_adjacency(full_grid(1, 1)).empty()); }
  SUBCASE("3x3 grid") {
    const auto edges = build_adjacency(full_grid(3, 3));
    CHECK(edges.size() == 20);
    auto degree = [&](std::size_t i) {
      return std::count_if(edges.begin(), edges.end(), [i](const Edge& e) { return e.a == i || e.b == i; });
    };
    CHECK(degree(4) == 8);
    CHECK(degree(0) == 3);
  }
  SUBCASE("property: full grid edge count and brute-force pair enumeration") {
    for (int r = 1; r <= 7; ++r)
      for (int c = 1; c <= 7; ++c) {
        const TileGrid g = full_grid(r, c);
        const auto edges = build_adjacency(g);
        CHECK(static_cast<long>(edges.size()) == 4L * r * c - 3L * r - 3L * c + 2);
      }
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 30; ++trial) {
      TileGrid g = full_grid(6, 9);
      std::shuffle(g.tiles.begin(), g.tiles.end(), rng);
      g.tiles.resize(rng() % g.tiles.size());
      std::vector<Edge> expected;
      for (std::size_t i = 0; i < g.tiles.size(); ++i)
        for (std::size_t j = i + 1; j < g.tiles.size(); ++j) {
          const int dr = std::abs(g.tiles[i].row - g.tiles[j].row);
          const int dc = std::abs(g.tiles[i].col - g.tiles[j].col);
          if (std::max(dr, dc) == 1) expected.push_back({i, j});
        }
      std::sort(expected.begin(), expected.end());
      CHECK(build_adjacency(g) == expected);
    }
  }
}

TEST_CASE("similarity_mask") {
  SUBCASE("identical features") {
    FeatureBag bag;
    bag.grid = full_grid(1, 2);
    bag.features = Matrix(2, 3, 0.7);
    const SimilarityMask m = similarity_mask(bag, build_adjacency(bag.grid));
    CHECK(m.weight(0, 1) == 1.0);
    CHECK(m.weight(1, 0) == 1.0);
  }
  SUBCASE("distance ln 2 gives one half") {
    FeatureBag bag;
    bag.grid = full_grid(1, 2);
    bag.features = Matrix::from_rows({{0.0}, {std::log(2.0)}});
    CHECK(std::abs(similarity_mask(bag, build_adjacency(bag.grid)).weight(0, 1) - 0.5) <= 1e-15);
  }
  SUBCASE("ssd squares the distance") {
    FeatureBag bag;
    bag.grid = full_grid(1, 2);
    bag.features = Matrix::from_rows({{0.0, 0.0}, {1.0, 1.0}});
    CHECK(std::abs(similarity_mask(bag, build_adjacency(bag.grid), Distance::kSsd).weight(0, 1) - std::exp(-2.0)) <= 1e-15);
  }
  SUBCASE("out-of-range edge") {
    FeatureBag bag;
    bag.grid = full_grid(1, 2);
    bag.features = Matrix(2, 1);
    const Edge bad[] = {{0, 5}};
    CHECK_THROWS_AS(similarity_mask(bag, bad), ArgumentError);
  }
  SUBCASE("property: scalar oracle and mask invariants on random bags") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 50; ++trial) {
      TileGrid g = full_grid(2 + static_cast<int>(rng() % 6), 2 + static_cast<int>(rng() % 6));
      std::shuffle(g.tiles.begin(), g.tiles.end(), rng);
      g.tiles.resize(1 + rng() % g.tiles.size());
      const FeatureBag bag = random_bag(g, 1 + rng() % 6, rng);
      const auto edges = build_adjacency(bag.grid);
      const SimilarityMask m = similarity_mask(bag, edges);
      CHECK_NOTHROW(m.validate());
      CHECK(m.entries.size() == 2 * edges.size());
      for (const Edge& e : edges) {
        double ssd = 0.0;
        for (std::size_t k = 0; k < bag.d(); ++k) {
          const double diff = bag.features(e.a, k) - bag.features(e.b, k);
          ssd += diff * diff;
        }
        CHECK(std::abs(m.weight(e.a, e.b) - std::exp(-std::sqrt(ssd))) <= 1e-12);
        CHECK(m.weight(e.a, e.b) == m.weight(e.b, e.a));
      }
      for (std::size_t i = 0; i < m.n; ++i) CHECK(m.degree(i) <= 8);
    }
  }
  SUBCASE("validate rejects broken masks") {
    SimilarityMask m{3, {{0, 1, 0.5}}};
    CHECK_THROWS_AS(m.validate(), InvariantError);
    m.entries = {{0, 0, 1.0}};
    CHECK_THROWS_AS(m.validate(), InvariantError);
    m.entries = {{0, 1, 1.5}, {1, 0, 1.5}};
    CHECK_THROWS_AS(m.validate(), InvariantError);
  }
}

TEST_CASE("synth_dataset") {
  SynthConfig cfg;
  cfg.grid_size = 20;
  cfg.tumor_fraction = 0.05;

  SUBCASE("positive rate zero") {
    for (const FeatureBag& b : synth_dataset(cfg, 6, 0.0)) {
      CHECK(b.slide_label == 0);
      for (TileLabel l : *b.tile_labels) CHECK(l == TileLabel::kNormal);
    }
  }
  SUBCASE("20 tumour tiles per positive slide on a 20x20 grid") {
    for (const FeatureBag& b : synth_dataset(cfg, 6, 1.0)) {
      CHECK(b.slide_label == 1);
      CHECK(std::count(b.tile_labels->begin(), b.tile_labels->end(), TileLabel::kTumor) == 20);
    }
  }
  SUBCASE("deterministic") { CHECK(synth_dataset(cfg, 5, 0.4) == synth_dataset(cfg, 5, 0.4)); }
  SUBCASE("different seeds differ") {
    SynthConfig other = cfg;
    other.seed = cfg.seed + 1;
    CHECK_FALSE(synth_dataset(cfg, 3, 0.5) == synth_dataset(other, 3, 0.5));
  }
  SUBCASE("invalid configs name the field") {
    SynthConfig bad = cfg;
    bad.tumor_fraction = 1.5;
    CHECK_THROWS_WITH_AS(synth_dataset(bad, 1, 0.5), doctest::Contains("tumor-fraction"), ArgumentError);
    bad = cfg;
    bad.noise_sigma = 0.0;
    CHECK_THROWS_WITH_AS(synth_dataset(bad, 1, 0.5), doctest::Contains("noise-sigma"), ArgumentError);
    bad = cfg;
    bad.tumor_fraction = 0.01;
    bad.grid_size = 10;
    bad.blob_count = 3;
    CHECK_THROWS_AS(synth_dataset(bad, 1, 0.5), ArgumentError);
  }
  SUBCASE("property: tumour count, blob components, distractor isolation") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 20; ++trial) {
      SynthConfig c;
      c.grid_size = 8 + static_cast<int>(rng() % 20);
      c.blob_count = 1 + static_cast<int>(rng() % 3);
      c.tumor_fraction = 0.03 + 0.1 * std::uniform_real_distribution<double>()(rng);
      c.seed = rng();
      c.feature_shift = 10.0;
      c.distractor_rate = 0.02 + 0.03 * std::uniform_real_distribution<double>()(rng);
      if (c.tumor_fraction * c.grid_size * c.grid_size < c.blob_count) continue;
      const int g = c.grid_size;
      const double expected = c.tumor_fraction * g * g;
      const Matrix u = tumor_direction(c);
      for (const FeatureBag& b : synth_dataset(c, 4, 0.5)) {
        CHECK_NOTHROW(b.validate());
        CHECK(b.n() == static_cast<std::size_t>(g * g));
        std::vector<bool> on(b.n());
        for (std::size_t i = 0; i < b.n(); ++i) on[i] = (*b.tile_labels)[i] == TileLabel::kTumor;
        const auto tumours = std::count(on.begin(), on.end(), true);
        if (b.slide_label == 1) {
          CHECK(std::abs(static_cast<double>(tumours) - expected) <= 1.0);
          CHECK(components(on, g) <= c.blob_count);
        } else {
          CHECK(tumours == 0);
          // Distractors: tiles with a large projection on u, none of them adjacent.
          std::vector<bool> shifted(b.n());
          for (std::size_t i = 0; i < b.n(); ++i) {
            double proj = 0.0;
            for (std::size_t k = 0; k < b.d(); ++k) proj += b.features(i, k) * u[k];
            shifted[i] = proj > 0.5 * c.feature_shift;
          }
          const auto count = std::count(shifted.begin(), shifted.end(), true);
          CHECK(count == std::llround(c.distractor_rate * g * g));
          CHECK(components(shifted, g) == count);
        }
      }
    }
  }
}

TEST_CASE("bag files") {
  TempDir dir;
  SynthConfig cfg;
  cfg.grid_size = 6;
  cfg.tumor_fraction = 0.1;
  const FeatureBag bag = synth_dataset(cfg, 1, 1.0).front();

  SUBCASE("round trip is bit exact") {
    save_bag(bag, dir.path / "a.bag");
    CHECK(load_bag(dir.path / "a.bag") == bag);
  }
  SUBCASE("no tile labels") {
    FeatureBag b = bag;
    b.tile_labels.reset();
    save_bag(b, dir.path / "b.bag");
    CHECK(load_bag(dir.path / "b.bag") == b);
  }
  SUBCASE("empty bag") {
    FeatureBag b;
    b.grid.slide_id = "empty";
    b.grid.width = 4;
    b.grid.height = 4;
    b.features = Matrix(0, 8);
    save_bag(b, dir.path / "e.bag");
    const FeatureBag back = load_bag(dir.path / "e.bag");
    CHECK(back == b);
    CHECK(back.d() == 8);
  }
  SUBCASE("truncated file") {
    save_bag(bag, dir.path / "t.bag");
    fs::resize_file(dir.path / "t.bag", fs::file_size(dir.path / "t.bag") - 5);
    CHECK_THROWS_AS(load_bag(dir.path / "t.bag"), ParseError);
    fs::resize_file(dir.path / "t.bag", 20);
    CHECK_THROWS_AS(load_bag(dir.path / "t.bag"), ParseError);
    fs::resize_file(dir.path / "t.bag", 3);
    CHECK_THROWS_AS(load_bag(dir.path / "t.bag"), ParseError);
  }
  SUBCASE("wrong magic reports offset 0") {
    std::ofstream(dir.path / "m.bag", std::ios::binary) << "NOTABAG!\x01{}";
    try {
      load_bag(dir.path / "m.bag");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.offset() == 0);
    }
  }
  SUBCASE("version mismatch") {
    save_bag(bag, dir.path / "v.bag");
    std::fstream f(dir.path / "v.bag", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    f.put(static_cast<char>(2));
    f.close();
    CHECK_THROWS_AS(load_bag(dir.path / "v.bag"), VersionError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_bag(dir.path / "nope.bag"), IoError); }
}
