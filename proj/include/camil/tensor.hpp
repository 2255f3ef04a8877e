#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "camil/errors.hpp"

namespace camil {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_str() const;
  bool all_finite() const noexcept;
  void fill(double v);

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Entry of a sparse matrix given as a coordinate list.
struct SparseEntry {
  std::size_t row;
  std::size_t col;
  double value;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

/// Softmax along each row, with per-row max subtraction.
Matrix row_softmax(const Matrix& a);

/// Newton-Schulz approximation of the Moore-Penrose pseudo-inverse.
/// Starts from Z0 = A^T / (|A|_1 |A|_inf) and iterates Z <- 2Z - Z A Z.
Matrix pinv(const Matrix& a, int iters = 20);

/// Max absolute column sum.
double norm_1(const Matrix& a);
/// Max absolute row sum.
double norm_inf(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

enum class UnaryOp { kSigmoid, kTanh, kExp };
enum class BinaryOp { kMul, kAdd, kSub };

Matrix elementwise(UnaryOp op, const Matrix& a);
Matrix elementwise(BinaryOp op, const Matrix& a, const Matrix& b);

inline Matrix sigmoid(const Matrix& a) { return elementwise(UnaryOp::kSigmoid, a); }
inline Matrix tanh(const Matrix& a) { return elementwise(UnaryOp::kTanh, a); }
inline Matrix exp(const Matrix& a) { return elementwise(UnaryOp::kExp, a); }
inline Matrix hadamard(const Matrix& a, const Matrix& b) { return elementwise(BinaryOp::kMul, a, b); }
inline Matrix add(const Matrix& a, const Matrix& b) { return elementwise(BinaryOp::kAdd, a, b); }
inline Matrix sub(const Matrix& a, const Matrix& b) { return elementwise(BinaryOp::kSub, a, b); }

Matrix scaled(const Matrix& a, double s);

double sigmoid(double x);

struct CrossEntropy {
  double loss;
  Matrix dlogits;
};

/// Softmax cross-entropy on a 1 x c logit row.
CrossEntropy cross_entropy_logits(const Matrix& logits, std::size_t label);

/// Learnable matrix with its gradient slot.
struct ParamTensor {
  std::string name;
  Matrix value;
  Matrix grad;

  ParamTensor() = default;
  ParamTensor(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
  void zero_grad() { grad.fill(0.0); }
};

struct AdamState {
  Matrix first_moment;
  Matrix second_moment;
  std::int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(const ParamTensor& p, double learning_rate = 1e-3)
      : first_moment(p.value.rows(), p.value.cols()),
        second_moment(p.value.rows(), p.value.cols()),
        lr(learning_rate) {}
};

/// Bias-corrected Adam update. Zeroes param.grad afterwards.
void adam_step(ParamTensor& param, AdamState& state);

/// Central-difference gradient of `f` with respect to every entry of every
/// parameter. Parameters are restored to their original values on return.
std::vector<Matrix> finite_diff_grad(const std::function<double()>& f,
                                     std::span<ParamTensor* const> params,
                                     double eps = 1e-5);

/// (4 D(h/2) - D(h)) / 3 with D the central difference above. Truncation
/// error is O(h^4), so a larger h keeps round-off small as well.
std::vector<Matrix> richardson_diff_grad(const std::function<double()>& f,
                                         std::span<ParamTensor* const> params,
                                         double h = 1e-3);

/// Elementwise relative error |a-b| / max(|a|, |b|, floor), maximised.
double max_relative_error(const Matrix& analytic, const Matrix& numeric,
                          double floor = 1e-8);

}  // namespace camil
