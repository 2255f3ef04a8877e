#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "camil/contrastive.hpp"
#include "test_util.hpp"

using namespace camil;
namespace fs = std::filesystem;

namespace {

/// Scalar evaluation: cosine similarities, then -log softmax of the
/// positive over all k != i, averaged over rows.
double nt_xent_oracle(const Matrix& z, double tau) {
  const std::size_t n = z.rows();
  auto cosine = [&](std::size_t i, std::size_t j) {
    double dot = 0, ni = 0, nj = 0;
    for (std::size_t c = 0; c < z.cols(); ++c) {
      dot += z(i, c) * z(j, c);
      ni += z(i, c) * z(i, c);
      nj += z(j, c) * z(j, c);
    }
    return dot / std::sqrt(ni * nj);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) denom += std::exp(cosine(i, k) / tau);
    total += -std::log(std::exp(cosine(i, i ^ 1U) / tau) / denom);
  }
  return total / static_cast<double>(n);
}

std::vector<Patch> sample_tiles(std::size_t count, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.grid_size = 8;
  cfg.tumor_fraction = 0.25;
  cfg.feature_shift = 2.0;
  cfg.seed = seed;
  RenderConfig rc;
  rc.seed = seed;
  const auto bags = synth_dataset(cfg, (count + 63) / 64, 0.5);
  const auto basis = render_basis(static_cast<std::size_t>(cfg.d), rc);
  std::vector<Patch> tiles;
  for (std::size_t b = 0; b < bags.size(); ++b)
    for (Patch& p : render_tiles(bags[b], basis, rc, seed + b)) tiles.push_back(std::move(p));
  tiles.resize(count);
  return tiles;
}

}  // namespace

TEST_CASE("augmentations") {
  std::mt19937_64 rng(1);
  const Patch p = testing::random_matrix(8, 8, rng);
  CHECK(rotate90(rotate90(rotate90(rotate90(p, 1), 1), 1), 1) == p);
  CHECK(rotate90(p, 4) == p);
  CHECK(rotate90(p, 3) == rotate90(p, -1));
  CHECK(reflect(reflect(p)) == p);
  CHECK(max_abs_diff(jitter(jitter(p, 0.25), -0.25), p) <= 1e-15);
  CHECK(max_abs_diff(zoom_crop(p, 1.0), p) <= 1e-12);
  SUBCASE("rotation moves the corner") {
    const Patch q = Matrix::from_rows({{1, 2}, {3, 4}});
    CHECK(rotate90(q, 1) == Matrix::from_rows({{2, 4}, {1, 3}}));
    CHECK(reflect(q) == Matrix::from_rows({{2, 1}, {4, 3}}));
  }
  SUBCASE("zoom keeps a constant patch constant") {
    const Patch c(6, 6, 0.3);
    CHECK(max_abs_diff(zoom_crop(c, 0.6), c) <= 1e-15);
  }
  SUBCASE("augment is deterministic per seed and changes the patch") {
    CHECK(augment(p, 42) == augment(p, 42));
    CHECK_FALSE(augment(p, 42) == p);
    CHECK_FALSE(augment(p, 42) == augment(p, 43));
  }
  CHECK_THROWS_AS(rotate90(Matrix(2, 3), 1), ShapeError);
  CHECK_THROWS_AS(zoom_crop(p, 0.0), ArgumentError);
}

TEST_CASE("nt_xent") {
  SUBCASE("single pair has zero loss") {
    const NtXent r = nt_xent({Matrix::from_rows({{1, 2, 3}, {-1, 0, 4}}), 0.5});
    CHECK(r.loss == 0.0);
  }
  SUBCASE("two pairs with orthogonal negatives at tau = 1") {
    const Matrix z = Matrix::from_rows({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
    const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
    CHECK(std::abs(expected - 0.5514) < 1e-4);
    CHECK(std::abs(nt_xent({z, 1.0}).loss - expected) <= 1e-9);
  }
  SUBCASE("tau must be positive") { CHECK_THROWS_AS(nt_xent({Matrix(2, 2, 1.0), 0.0}), ArgumentError); }
  SUBCASE("odd batch") { CHECK_THROWS_AS(nt_xent({Matrix(3, 2, 1.0), 0.5}), ArgumentError); }

  std::mt19937_64 rng(3);
  SUBCASE("property: matches the scalar oracle") {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t b = 1 + rng() % 6;
      const Matrix z = testing::random_matrix(2 * b, 1 + rng() % 6, rng);
      const double tau = 0.1 + std::uniform_real_distribution<double>(0, 1)(rng);
      CHECK(std::abs(nt_xent({z, tau}).loss - nt_xent_oracle(z, tau)) <= 1e-12);
    }
  }
  SUBCASE("property: gradient passes finite differences") {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t b = 1 + rng() % 5;
      ParamTensor z("z", testing::random_matrix(2 * b, 2 + rng() % 5, rng));
      const double tau = 0.2 + std::uniform_real_distribution<double>(0, 1)(rng);
      const NtXent r = nt_xent({z.value, tau});
      ParamTensor* ps[] = {&z};
      const auto fd = finite_diff_grad([&] { return nt_xent({z.value, tau}).loss; }, ps);
      CHECK(max_relative_error(r.grad, fd[0]) <= 1e-4);
    }
  }
  SUBCASE("property: swapping the views of every pair keeps the loss") {
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t b = 1 + rng() % 6;
      const Matrix z = testing::random_matrix(2 * b, 4, rng);
      Matrix swapped(z.rows(), z.cols());
      for (std::size_t i = 0; i < z.rows(); ++i)
        for (std::size_t c = 0; c < z.cols(); ++c) swapped(i, c) = z(i ^ 1U, c);
      CHECK(std::abs(nt_xent({z, 0.5}).loss - nt_xent({swapped, 0.5}).loss) <= 1e-12);
    }
  }
  SUBCASE("property: invariant to a global rotation") {
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t e = 2 + rng() % 5;
      const Matrix z = testing::random_matrix(2 * (1 + rng() % 5), e, rng);
      // Orthogonal matrix from Gram-Schmidt on a random square.
      Matrix q = testing::random_matrix(e, e, rng);
      for (std::size_t i = 0; i < e; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
          double dot = 0;
          for (std::size_t c = 0; c < e; ++c) dot += q(i, c) * q(j, c);
          for (std::size_t c = 0; c < e; ++c) q(i, c) -= dot * q(j, c);
        }
        double norm = 0;
        for (std::size_t c = 0; c < e; ++c) norm += q(i, c) * q(i, c);
        for (std::size_t c = 0; c < e; ++c) q(i, c) /= std::sqrt(norm);
      }
      CHECK(std::abs(nt_xent({z, 0.5}).loss - nt_xent({matmul(z, q), 0.5}).loss) <= 1e-9);
    }
  }
}

TEST_CASE("encoder") {
  const std::vector<Patch> tiles = sample_tiles(64, 11);
  SUBCASE("zero weights encode to zero") {
    EncoderParams p = init_encoder(64, 16, 8, 1);
    for (ParamTensor* t : p.tensors()) t->value.fill(0.0);
    const Matrix f = encode(tiles, p);
    CHECK(f.rows() == 64);
    CHECK(max_abs(f) == 0.0);
  }
  SUBCASE("deterministic, declared width, finite") {
    const EncoderParams p = init_encoder(64, 16, 8, 1);
    const Matrix a = encode(tiles, p);
    CHECK(a == encode(tiles, p));
    CHECK(a.cols() == 8);
    CHECK(a.all_finite());
    CHECK(p.proj_dim() == 4);
  }
  SUBCASE("matches a scalar forward pass") {
    const EncoderParams p = init_encoder(64, 6, 3, 2);
    const Matrix f = encode({tiles[0]}, p);
    for (std::size_t o = 0; o < 3; ++o) {
      double out = p.b2.value[o];
      for (std::size_t h = 0; h < 6; ++h) {
        double pre = p.b1.value[h];
        for (std::size_t k = 0; k < 64; ++k) pre += p.w1.value(h, k) * tiles[0][k];
        out += p.w2.value(o, h) * std::tanh(pre);
      }
      CHECK(std::abs(f(0, o) - out) <= 1e-12);
    }
  }
  SUBCASE("wrong tile size") {
    const EncoderParams p = init_encoder(16, 4, 2, 1);
    CHECK_THROWS_AS(encode(tiles, p), ShapeError);
  }
}

TEST_CASE("pretrain_encoder") {
  const std::vector<Patch> tiles = sample_tiles(64, 12);
  const EncoderParams start = init_encoder(64, 32, 8, 5);
  PretrainConfig cfg;
  cfg.seed = 9;
  SUBCASE("zero epochs leave params unchanged") {
    cfg.epochs = 0;
    const PretrainResult r = pretrain_encoder(tiles, start, cfg);
    for (std::size_t i = 0; i < start.tensors().size(); ++i)
      CHECK(r.params.tensors()[i]->value == start.tensors()[i]->value);
    CHECK(r.epoch_loss.empty());
  }
  SUBCASE("loss drops over 50 epochs and runs are reproducible") {
    cfg.epochs = 50;
    cfg.batch_size = 16;
    cfg.lr = 3e-3;
    const PretrainResult a = pretrain_encoder(tiles, start, cfg);
    const PretrainResult b = pretrain_encoder(tiles, start, cfg);
    REQUIRE(a.epoch_loss.size() == 50);
    CHECK(a.epoch_loss.back() < a.epoch_loss.front());
    double first = 0, last = 0;
    for (int i = 0; i < 5; ++i) {
      first += a.epoch_loss[i];
      last += a.epoch_loss[45 + i];
    }
    CHECK(last < first);
    CHECK(a.epoch_loss == b.epoch_loss);
    for (std::size_t i = 0; i < start.tensors().size(); ++i)
      CHECK(a.params.tensors()[i]->value == b.params.tensors()[i]->value);
  }
  SUBCASE("needs two tiles") { CHECK_THROWS_AS(pretrain_encoder({tiles[0]}, start, cfg), ArgumentError); }
}

TEST_CASE("rendering") {
  RenderConfig rc;
  const auto basis = render_basis(8, rc);
  REQUIRE(basis.size() == 8);
  for (const Patch& b : basis) {
    CHECK(max_abs_diff(rotate90(b, 1), b) <= 1e-12);
    CHECK(max_abs_diff(reflect(b), b) <= 1e-12);
    double norm = 0;
    for (double v : b.data()) norm += v * v;
    CHECK(std::abs(norm - 1.0) <= 1e-12);
  }
  SynthConfig cfg;
  cfg.grid_size = 4;
  cfg.tumor_fraction = 0.2;
  const FeatureBag bag = synth_dataset(cfg, 1, 1.0).front();
  const auto tiles = render_tiles(bag, basis, rc, 3);
  CHECK(tiles.size() == bag.n());
  CHECK(tiles == render_tiles(bag, basis, rc, 3));
  RenderConfig quiet = rc;
  quiet.brightness_sigma = 0.0;
  quiet.pixel_noise = 0.0;
  const auto clean = render_tiles(bag, basis, quiet, 3);
  for (std::size_t i = 0; i < bag.n(); ++i) {
    // Projection on each pattern recovers the latent feature.
    for (std::size_t k = 0; k < bag.d(); ++k) {
      double proj = 0;
      for (std::size_t j = 0; j < clean[i].size(); ++j) proj += (clean[i][j] - 0.5) * basis[k][j];
      double expected = 0;
      for (std::size_t k2 = 0; k2 < bag.d(); ++k2) {
        double g = 0;
        for (std::size_t j = 0; j < basis[k].size(); ++j) g += basis[k][j] * basis[k2][j];
        expected += g * bag.features(i, k2);
      }
      CHECK(std::abs(proj - expected) <= 1e-12);
    }
  }
  const FeatureBag encoded = encode_bag(bag, tiles, init_encoder(64, 8, 5, 1));
  CHECK(encoded.d() == 5);
  CHECK(encoded.grid == bag.grid);
  CHECK(encoded.tile_labels == bag.tile_labels);
}

TEST_CASE("encoder checkpoint") {
  const fs::path path = fs::temp_directory_path() / ("camil_enc_" + std::to_string(std::random_device{}()));
  EncoderParams p = init_encoder(64, 12, 6, 8, 3);
  p.b1.value.fill(0.125);
  save_encoder(p, path);
  const EncoderParams back = load_encoder(path);
  for (std::size_t i = 0; i < p.tensors().size(); ++i) CHECK(back.tensors()[i]->value == p.tensors()[i]->value);
  CHECK(back.proj_dim() == 3);
  fs::resize_file(path, 30);
  CHECK_THROWS_AS(load_encoder(path), ParseError);
  fs::remove(path);
}
