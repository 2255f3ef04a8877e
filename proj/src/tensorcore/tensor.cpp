#include "camil/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace camil {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

std::string Matrix::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape_str() + " by " + b.shape_str());
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Matrix out(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  if (!out.all_finite()) throw InvariantError("finite", "matmul: non-finite result");
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix row_softmax(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto in = a.row(i);
    auto o = out.row(i);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

double norm_1(const Matrix& a) {
  double best = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += std::abs(a(i, j));
    best = std::max(best, s);
  }
  return best;
}

double norm_inf(const Matrix& a) {
  double best = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (double v : a.row(i)) s += std::abs(v);
    best = std::max(best, s);
  }
  return best;
}

double max_abs(const Matrix& a) {
  double best = 0.0;
  for (double v : a.data()) best = std::max(best, std::abs(v));
  return best;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
  }
  double best = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) best = std::max(best, std::abs(a[i] - b[i]));
  return best;
}

Matrix pinv(const Matrix& a, int iters) {
  if (a.rows() != a.cols()) throw ShapeError("pinv: matrix must be square, got " + a.shape_str());
  if (iters < 1) throw ArgumentError("pinv: iters must be >= 1");
  const double scale = norm_1(a) * norm_inf(a);
  if (scale == 0.0) return Matrix(a.cols(), a.rows());
  Matrix z = scaled(transpose(a), 1.0 / scale);
  for (int k = 0; k < iters; ++k) {
    Matrix zaz = matmul(matmul(z, a), z);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = 2.0 * z[i] - zaz[i];
  }
  return z;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix elementwise(UnaryOp op, const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    switch (op) {
      case UnaryOp::kSigmoid: out[i] = sigmoid(a[i]); break;
      case UnaryOp::kTanh: out[i] = std::tanh(a[i]); break;
      case UnaryOp::kExp: out[i] = std::exp(a[i]); break;
    }
  }
  return out;
}

Matrix elementwise(BinaryOp op, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("elementwise: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    switch (op) {
      case BinaryOp::kMul: out[i] = a[i] * b[i]; break;
      case BinaryOp::kAdd: out[i] = a[i] + b[i]; break;
      case BinaryOp::kSub: out[i] = a[i] - b[i]; break;
    }
  }
  return out;
}

Matrix scaled(const Matrix& a, double s) {
  Matrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

CrossEntropy cross_entropy_logits(const Matrix& logits, std::size_t label) {
  if (logits.rows() != 1) throw ShapeError("cross_entropy_logits: expected 1xc, got " + logits.shape_str());
  if (label >= logits.cols()) {
    throw ArgumentError("cross_entropy_logits: label " + std::to_string(label) +
                        " out of range for " + std::to_string(logits.cols()) + " classes");
  }
  Matrix p = row_softmax(logits);
  const double mx = *std::max_element(logits.data().begin(), logits.data().end());
  double lse = 0.0;
  for (double v : logits.data()) lse += std::exp(v - mx);
  const double loss = -(logits[label] - mx - std::log(lse));
  p[label] -= 1.0;
  return {loss, std::move(p)};
}

void adam_step(ParamTensor& param, AdamState& state) {
  if (!state.first_moment.same_shape(param.value)) {
    state.first_moment = Matrix(param.value.rows(), param.value.cols());
    state.second_moment = Matrix(param.value.rows(), param.value.cols());
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.value.size(); ++i) {
    const double g = param.grad[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    param.value[i] -= state.lr * (m / bc1) / (std::sqrt(v / bc2) + state.eps);
  }
  param.zero_grad();
}

std::vector<Matrix> finite_diff_grad(const std::function<double()>& f,
                                     std::span<ParamTensor* const> params, double eps) {
  if (!(eps > 0)) throw ArgumentError("finite_diff_grad: eps must be positive");
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (ParamTensor* p : params) {
    Matrix g(p->value.rows(), p->value.cols());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double plus = f();
      p->value[i] = orig - eps;
      const double minus = f();
      p->value[i] = orig;
      g[i] = (plus - minus) / (2.0 * eps);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

std::vector<Matrix> richardson_diff_grad(const std::function<double()>& f,
                                         std::span<ParamTensor* const> params, double h) {
  std::vector<Matrix> coarse = finite_diff_grad(f, params, h);
  const std::vector<Matrix> fine = finite_diff_grad(f, params, h / 2.0);
  for (std::size_t i = 0; i < coarse.size(); ++i)
    for (std::size_t k = 0; k < coarse[i].size(); ++k) coarse[i][k] = (4.0 * fine[i][k] - coarse[i][k]) / 3.0;
  return coarse;
}

double max_relative_error(const Matrix& analytic, const Matrix& numeric, double floor) {
  if (!analytic.same_shape(numeric)) {
    throw ShapeError("max_relative_error: " + analytic.shape_str() + " vs " + numeric.shape_str());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], b = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(b), floor});
    worst = std::max(worst, std::abs(a - b) / denom);
  }
  return worst;
}

}  // namespace camil
