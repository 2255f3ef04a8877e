#pragma once

// Reverse-mode differentiation over Matrix values. A Tape records every
// operation applied to its Vars; backward() replays the records in reverse.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "camil/tensor.hpp"

namespace camil::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  /// Receives the gradient flowing into the node and pushes it to inputs.
  using Backward = std::function<void(Tape&, const Matrix& grad)>;

  /// With record = false no backward closures are stored (inference mode).
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  // Vars hold a pointer to their tape, so a tape never moves.
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient accumulated at v by the last backward(); zeros if none reached it.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds a 1x1 root with 1 and propagates.
  void backward(Var root);
  void backward(Var root, const Matrix& seed);

  /// Adds `g` into the gradient of `v` if v participates in differentiation.
  void accumulate(Var v, const Matrix& g);

  /// Records an op result. `fn` is dropped when no input requires a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward fn);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  bool record_;
};

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var sigmoid(Var a);
Var tanh(Var a);
Var row_softmax(Var a);

/// a (n x k) plus a 1 x k bias broadcast over rows.
Var add_row(Var a, Var bias);
/// out(i, j) = a(i, j) * c(i), c an n x 1 column.
Var scale_rows(Var a, Var c);
/// out(i) = <a_i, b_i>, an n x 1 column.
Var row_dot(Var a, Var b);
/// out = S b for a constant sparse S given as coordinates.
Var sparse_matmul(std::span<const SparseEntry> s, std::size_t s_rows, Var b);

Var column_mean(Var a);
Var column_max(Var a);
/// Means of contiguous row segments of length `segment` (last may be shorter).
Var segment_means(Var a, std::size_t segment);
Var gather_rows(Var a, std::span<const std::size_t> idx);

/// Newton-Schulz start A^T / (|A|_1 |A|_inf), differentiated through both norms.
Var newton_schulz_init(Var a);
/// Iterative pseudo-inverse, differentiated through every iteration.
Var pinv(Var a, int iters);

/// Softmax cross-entropy of a 1 x c logit row, as a 1 x 1 Var.
Var cross_entropy(Var logits, std::size_t label);
/// Sum of squares of all entries, as a 1 x 1 Var.
Var sum_squares(Var a);

}  // namespace camil::ad
