#include <doctest.h>

#include <cmath>
#include <random>

#include "camil/autodiff.hpp"
#include "camil/tensor.hpp"
#include "test_util.hpp"

using namespace camil;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

}  // namespace

TEST_CASE("matmul") {
  std::mt19937_64 rng(1);
  SUBCASE("identity") {
    const Matrix b = testing::random_matrix(3, 4, rng);
    CHECK(matmul(Matrix::identity(3), b) == b);
  }
  SUBCASE("hand example") {
    const Matrix out = matmul(Matrix::from_rows({{1, 2}, {3, 4}}), Matrix::from_rows({{0}, {1}}));
    CHECK(out == Matrix::from_rows({{2}, {4}}));
  }
  SUBCASE("matches triple loop") {
    const Matrix a = testing::random_matrix(7, 5, rng);
    const Matrix b = testing::random_matrix(5, 3, rng);
    CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) <= 1e-12);
  }
  SUBCASE("shape error names both shapes") {
    try {
      matmul(Matrix(2, 3), Matrix(2, 3));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("2x3") != std::string::npos);
    }
  }
}

TEST_CASE("row_softmax") {
  SUBCASE("equal values are uniform") {
    const Matrix p = row_softmax(Matrix(1, 4, 3.0));
    for (double v : p.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("analytic pair") {
    const Matrix p = row_softmax(Matrix::from_rows({{0.0, std::log(3.0)}}));
    CHECK(std::abs(p[0] - 0.25) <= 1e-12);
    CHECK(std::abs(p[1] - 0.75) <= 1e-12);
  }
  SUBCASE("large entries stay finite") {
    const Matrix x = Matrix::from_rows({{700.0, 699.0, 701.5}});
    const Matrix p = row_softmax(x);
    CHECK(p.all_finite());
    // Direct evaluation after shifting by the max is exact in this range.
    double denom = 0.0;
    for (double v : x.data()) denom += std::exp(v - 701.5);
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(p[j] - std::exp(x[j] - 701.5) / denom) <= 1e-15);
    CHECK(std::abs(p[0] + p[1] + p[2] - 1.0) <= 1e-12);
  }
  SUBCASE("property: rows sum to one and are shift invariant") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t r = 1 + rng() % 5, c = 1 + rng() % 9;
      Matrix x = testing::random_matrix(r, c, rng, 30.0);
      const Matrix p = row_softmax(x);
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (double v : p.row(i)) {
          CHECK(v >= 0.0);
          s += v;
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
      const double shift = std::uniform_real_distribution<double>(-50, 50)(rng);
      for (double& v : x.row(0)) v += shift;
      CHECK(max_abs_diff(row_softmax(x), p) <= 1e-12);
    }
  }
}

TEST_CASE("pinv") {
  SUBCASE("identity") { CHECK(max_abs_diff(pinv(Matrix::identity(4), 20), Matrix::identity(4)) <= 1e-15); }
  SUBCASE("diagonal") {
    const Matrix z = pinv(Matrix::from_rows({{2, 0}, {0, 4}}), 20);
    CHECK(max_abs_diff(z, Matrix::from_rows({{0.5, 0}, {0, 0.25}})) <= 1e-9);
  }
  SUBCASE("non-square is rejected") { CHECK_THROWS_AS(pinv(Matrix(2, 3), 20), ShapeError); }
  SUBCASE("property: residual on random well-conditioned row-stochastic matrices") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 1 + rng() % 32;
      // Strictly diagonally dominant: diagonal mass in [0.6, 0.9], the rest spread at random.
      Matrix a(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        const double diag = n == 1 ? 1.0 : 0.6 + 0.3 * unit(rng);
        double off = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          if (j != i) off += a(i, j) = unit(rng);
        for (std::size_t j = 0; j < n; ++j)
          a(i, j) = j == i ? diag : (1.0 - diag) * a(i, j) / off;
      }
      const Matrix z = pinv(a, 20);
      CHECK(max_abs_diff(matmul(matmul(a, z), a), a) <= 1e-6);
    }
  }
  SUBCASE("8x8 softmax matrix") {
    std::mt19937_64 rng(8);
    const Matrix a = row_softmax(testing::random_matrix(8, 8, rng));
    CHECK(max_abs_diff(matmul(matmul(a, pinv(a, 20)), a), a) <= 1e-6);
  }
}

TEST_CASE("elementwise") {
  CHECK(sigmoid(Matrix(1, 1, 0.0))[0] == 0.5);
  CHECK(camil::tanh(Matrix(1, 1, 0.0))[0] == 0.0);
  std::mt19937_64 rng(4);
  const Matrix a = testing::random_matrix(3, 3, rng);
  CHECK(hadamard(a, Matrix(3, 3, 1.0)) == a);
  CHECK(sub(add(a, a), a) == a);
  CHECK_THROWS_AS(add(a, Matrix(2, 3)), ShapeError);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(std::isfinite(sigmoid(-800.0)));
}

TEST_CASE("cross_entropy_logits") {
  SUBCASE("equal logits") {
    CHECK(std::abs(cross_entropy_logits(Matrix(1, 2, 0.3), 1).loss - std::log(2.0)) <= 1e-15);
  }
  SUBCASE("saturated") { CHECK(cross_entropy_logits(Matrix::from_rows({{20, -20}}), 0).loss < 1e-15); }
  SUBCASE("label out of range") { CHECK_THROWS_AS(cross_entropy_logits(Matrix(1, 2), 2), ArgumentError); }
  SUBCASE("gradient matches central differences") {
    std::mt19937_64 rng(5);
    ParamTensor logits("logits", testing::random_matrix(1, 4, rng, 3.0));
    const std::size_t label = 2;
    const CrossEntropy ce = cross_entropy_logits(logits.value, label);
    ParamTensor* ps[] = {&logits};
    const auto fd = finite_diff_grad([&] { return cross_entropy_logits(logits.value, label).loss; }, ps);
    CHECK(max_abs_diff(ce.dlogits, fd[0]) <= 1e-6);
  }
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient keeps value") {
    ParamTensor p("p", Matrix(2, 2, 1.5));
    AdamState s(p, 0.1);
    adam_step(p, s);
    CHECK(p.value == Matrix(2, 2, 1.5));
    CHECK(s.step == 1);
  }
  SUBCASE("first step moves by lr against the sign of the gradient") {
    ParamTensor p("p", Matrix::from_rows({{0.0, 0.0}}));
    AdamState s(p, 0.01);
    p.grad = Matrix::from_rows({{3.0, -0.2}});
    adam_step(p, s);
    CHECK(p.value[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p.value[1] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(p.grad == Matrix(1, 2));
  }
  SUBCASE("minimises x^2") {
    ParamTensor p("x", Matrix(1, 1, 1.0));
    AdamState s(p, 0.1);
    for (int i = 0; i < 100; ++i) {
      p.grad[0] = 2.0 * p.value[0];
      adam_step(p, s);
    }
    CHECK(std::abs(p.value[0]) < 0.1);
    CHECK(s.step == 100);
  }
}

TEST_CASE("finite_diff_grad") {
  std::mt19937_64 rng(6);
  ParamTensor p("p", testing::random_matrix(3, 2, rng));
  ParamTensor* ps[] = {&p};
  SUBCASE("sum gives ones") {
    const auto g = finite_diff_grad([&] {
      double s = 0.0;
      for (double v : p.value.data()) s += v;
      return s;
    }, ps);
    CHECK(max_abs_diff(g[0], Matrix(3, 2, 1.0)) <= 1e-9);
  }
  SUBCASE("squared norm gives 2 theta") {
    const Matrix before = p.value;
    const auto g = finite_diff_grad([&] {
      double s = 0.0;
      for (double v : p.value.data()) s += v * v;
      return s;
    }, ps);
    CHECK(max_abs_diff(g[0], scaled(p.value, 2.0)) <= 1e-6);
    CHECK(p.value == before);
  }
}

TEST_CASE("richardson_diff_grad cancels the h^2 term") {
  // For x^4 the central difference is 4x^3 + 4x h^2; the extrapolation is exact.
  ParamTensor p("p", Matrix::from_rows({{0.7, -1.3, 2.0}}));
  ParamTensor* ps[] = {&p};
  const auto quartic = [&] {
    double s = 0.0;
    for (double v : p.value.data()) s += v * v * v * v;
    return s;
  };
  const double h = 1e-2;
  const auto plain = finite_diff_grad(quartic, ps, h);
  const auto rich = richardson_diff_grad(quartic, ps, h);
  for (std::size_t i = 0; i < 3; ++i) {
    const double x = p.value[i];
    CHECK(plain[0][i] == doctest::Approx(4 * x * x * x + 4 * x * h * h).epsilon(1e-9));
    CHECK(std::abs(rich[0][i] - 4 * x * x * x) <= 1e-9);
  }
  CHECK(p.value == Matrix::from_rows({{0.7, -1.3, 2.0}}));
  CHECK_THROWS_AS(richardson_diff_grad(quartic, ps, 0.0), ArgumentError);
}

TEST_CASE("tape gradients match finite differences for each op") {
  std::mt19937_64 rng(11);
  ParamTensor a("a", testing::random_matrix(4, 4, rng));
  ParamTensor b("b", testing::random_matrix(4, 4, rng));
  const Matrix weights = testing::random_matrix(4, 4, rng);
  const std::vector<SparseEntry> sparse = {{0, 1, 0.5}, {1, 0, 0.5}, {2, 3, 0.25}, {3, 2, 0.25}, {3, 0, 0.9}};
  const std::vector<std::size_t> rows = {3, 1};

  using Op = std::function<ad::Var(ad::Var, ad::Var)>;
  const std::vector<std::pair<const char*, Op>> ops = {
      {"matmul", [](ad::Var x, ad::Var y) { return ad::matmul(x, y); }},
      {"softmax", [](ad::Var x, ad::Var y) { return ad::row_softmax(ad::mul(x, y)); }},
      {"sigmoid-tanh", [](ad::Var x, ad::Var y) { return ad::mul(ad::sigmoid(x), ad::tanh(y)); }},
      {"row_dot", [](ad::Var x, ad::Var y) { return ad::scale_rows(x, ad::row_dot(x, y)); }},
      {"sparse", [&](ad::Var x, ad::Var y) { return ad::add(ad::sparse_matmul(sparse, 4, x), y); }},
      {"pool", [](ad::Var x, ad::Var y) { return ad::sub(ad::column_mean(x), ad::column_max(y)); }},
      {"landmarks", [&](ad::Var x, ad::Var y) {
         return ad::matmul(ad::segment_means(x, 3), ad::transpose(ad::gather_rows(y, rows)));
       }},
      {"pinv", [](ad::Var x, ad::Var y) { return ad::pinv(ad::row_softmax(ad::add(x, y)), 20); }},
      {"bias", [](ad::Var x, ad::Var y) { return ad::add_row(x, ad::column_mean(y)); }},
  };
  for (const auto& [name, op] : ops) {
    CAPTURE(name);
    auto f = [&](bool record, Matrix* ga, Matrix* gb) {
      ad::Tape tape(record);
      ad::Var x = tape.variable(a.value);
      ad::Var y = tape.variable(b.value);
      ad::Var out = op(x, y);
      ad::Var w = tape.constant(Matrix(out.rows(), out.cols()));
      Matrix wv(out.rows(), out.cols());
      for (std::size_t i = 0; i < wv.size(); ++i) wv[i] = weights[i % weights.size()];
      ad::Var loss = ad::sum_squares(ad::mul(out, tape.constant(wv)));
      (void)w;
      if (record) {
        tape.backward(loss);
        *ga = tape.grad(x);
        *gb = tape.grad(y);
      }
      return loss.value()[0];
    };
    Matrix ga, gb;
    f(true, &ga, &gb);
    ParamTensor* ps[] = {&a, &b};
    const auto fd = finite_diff_grad([&] { return f(false, nullptr, nullptr); }, ps);
    CHECK(max_relative_error(ga, fd[0], 1e-6) <= 1e-5);
    CHECK(max_relative_error(gb, fd[1], 1e-6) <= 1e-5);
  }
}
