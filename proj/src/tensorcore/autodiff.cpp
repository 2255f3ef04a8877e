#include "camil/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace camil::ad {

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, record_, {}});
  return {this, nodes_.size() - 1};
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.same_shape(n.value)) return n.grad;
  return Matrix(n.value.rows(), n.value.cols());
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (!n.grad.same_shape(n.value)) {
    n.grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward fn) {
  bool needs = false;
  if (record_) {
    for (Var in : inputs) needs = needs || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : Backward{}});
  return {this, nodes_.size() - 1};
}

void Tape::backward(Var root) { backward(root, Matrix(1, 1, 1.0)); }

void Tape::backward(Var root, const Matrix& seed) {
  if (!seed.same_shape(nodes_[root.id].value)) {
    throw ShapeError("backward: seed " + seed.shape_str() + " does not match root " +
                     nodes_[root.id].value.shape_str());
  }
  for (Node& n : nodes_) n.grad = Matrix();
  accumulate(root, seed);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || !n.grad.same_shape(n.value)) continue;
    const Matrix g = std::move(n.grad);
    n.grad = Matrix();
    n.backward(*this, g);
  }
}

namespace {

void require_same(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  return a.tape->record(camil::matmul(a.value(), b.value()), {a, b},
                        [a, b](Tape& t, const Matrix& g) {
                          if (t.requires_grad(a)) t.accumulate(a, camil::matmul(g, camil::transpose(b.value())));
                          if (t.requires_grad(b)) t.accumulate(b, camil::matmul(camil::transpose(a.value()), g));
                        });
}

Var transpose(Var a) {
  return a.tape->record(camil::transpose(a.value()), {a},
                        [a](Tape& t, const Matrix& g) { t.accumulate(a, camil::transpose(g)); });
}

Var add(Var a, Var b) {
  return a.tape->record(camil::add(a.value(), b.value()), {a, b},
                        [a, b](Tape& t, const Matrix& g) {
                          t.accumulate(a, g);
                          t.accumulate(b, g);
                        });
}

Var sub(Var a, Var b) {
  return a.tape->record(camil::sub(a.value(), b.value()), {a, b},
                        [a, b](Tape& t, const Matrix& g) {
                          t.accumulate(a, g);
                          if (t.requires_grad(b)) t.accumulate(b, camil::scaled(g, -1.0));
                        });
}

Var mul(Var a, Var b) {
  return a.tape->record(camil::hadamard(a.value(), b.value()), {a, b},
                        [a, b](Tape& t, const Matrix& g) {
                          if (t.requires_grad(a)) t.accumulate(a, camil::hadamard(g, b.value()));
                          if (t.requires_grad(b)) t.accumulate(b, camil::hadamard(g, a.value()));
                        });
}

Var scale(Var a, double s) {
  return a.tape->record(camil::scaled(a.value(), s), {a},
                        [a, s](Tape& t, const Matrix& g) { t.accumulate(a, camil::scaled(g, s)); });
}

Var sigmoid(Var a) {
  const Var self{a.tape, a.tape->size()};
  return a.tape->record(camil::sigmoid(a.value()), {a}, [a, self](Tape& t, const Matrix& g) {
    const Matrix& y = self.value();
    Matrix d(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * y[i] * (1.0 - y[i]);
    t.accumulate(a, d);
  });
}

Var tanh(Var a) {
  const Var self{a.tape, a.tape->size()};
  return a.tape->record(camil::tanh(a.value()), {a}, [a, self](Tape& t, const Matrix& g) {
    const Matrix& y = self.value();
    Matrix d(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * (1.0 - y[i] * y[i]);
    t.accumulate(a, d);
  });
}

Var row_softmax(Var a) {
  const Var self{a.tape, a.tape->size()};
  return a.tape->record(camil::row_softmax(a.value()), {a}, [a, self](Tape& t, const Matrix& g) {
    const Matrix& y = self.value();
    Matrix d(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) d(i, j) = y(i, j) * (g(i, j) - dot);
    }
    t.accumulate(a, d);
  });
}

Var add_row(Var a, Var bias) {
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw ShapeError("add_row: bias " + bv.shape_str() + " does not fit " + av.shape_str());
  }
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv[j];
  return a.tape->record(std::move(out), {a, bias}, [a, bias](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(bias)) {
      Matrix gb(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
      t.accumulate(bias, gb);
    }
  });
}

Var scale_rows(Var a, Var c) {
  const Matrix& av = a.value();
  const Matrix& cv = c.value();
  if (cv.rows() != av.rows() || cv.cols() != 1) {
    throw ShapeError("scale_rows: scale " + cv.shape_str() + " does not fit " + av.shape_str());
  }
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (double& v : out.row(i)) v *= cv[i];
  return a.tape->record(std::move(out), {a, c}, [a, c](Tape& t, const Matrix& g) {
    const Matrix& av = a.value();
    const Matrix& cv = c.value();
    if (t.requires_grad(a)) {
      Matrix ga = g;
      for (std::size_t i = 0; i < ga.rows(); ++i)
        for (double& v : ga.row(i)) v *= cv[i];
      t.accumulate(a, ga);
    }
    if (t.requires_grad(c)) {
      Matrix gc(cv.rows(), 1);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gc[i] += g(i, j) * av(i, j);
      t.accumulate(c, gc);
    }
  });
}

Var row_dot(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require_same(av, bv, "row_dot");
  Matrix out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out[i] += av(i, j) * bv(i, j);
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (t.requires_grad(a)) {
      Matrix ga(av.rows(), av.cols());
      for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) ga(i, j) = g[i] * bv(i, j);
      t.accumulate(a, ga);
    }
    if (t.requires_grad(b)) {
      Matrix gb(bv.rows(), bv.cols());
      for (std::size_t i = 0; i < bv.rows(); ++i)
        for (std::size_t j = 0; j < bv.cols(); ++j) gb(i, j) = g[i] * av(i, j);
      t.accumulate(b, gb);
    }
  });
}

Var sparse_matmul(std::span<const SparseEntry> s, std::size_t s_rows, Var b) {
  const Matrix& bv = b.value();
  Matrix out(s_rows, bv.cols());
  for (const SparseEntry& e : s) {
    if (e.row >= s_rows || e.col >= bv.rows()) {
      throw ShapeError("sparse_matmul: entry (" + std::to_string(e.row) + ", " +
                       std::to_string(e.col) + ") outside " + std::to_string(s_rows) + "x" +
                       std::to_string(bv.rows()));
    }
    auto o = out.row(e.row);
    auto in = bv.row(e.col);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] += e.value * in[j];
  }
  std::vector<SparseEntry> entries(s.begin(), s.end());
  return b.tape->record(std::move(out), {b}, [b, entries = std::move(entries)](Tape& t, const Matrix& g) {
    const Matrix& bv = b.value();
    Matrix gb(bv.rows(), bv.cols());
    for (const SparseEntry& e : entries) {
      auto o = gb.row(e.col);
      auto in = g.row(e.row);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += e.value * in[j];
    }
    t.accumulate(b, gb);
  });
}

Var column_mean(Var a) {
  const Matrix& av = a.value();
  if (av.rows() == 0) throw ShapeError("column_mean: empty matrix");
  Matrix out(1, av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out[j] += av(i, j);
  const double inv = 1.0 / static_cast<double>(av.rows());
  for (double& v : out.data()) v *= inv;
  return a.tape->record(std::move(out), {a}, [a, inv](Tape& t, const Matrix& g) {
    const Matrix& av = a.value();
    Matrix ga(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) ga(i, j) = g[j] * inv;
    t.accumulate(a, ga);
  });
}

Var column_max(Var a) {
  const Matrix& av = a.value();
  if (av.rows() == 0) throw ShapeError("column_max: empty matrix");
  Matrix out(1, av.cols(), -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> arg(av.cols(), 0);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j)
      if (av(i, j) > out[j]) {
        out[j] = av(i, j);
        arg[j] = i;
      }
  return a.tape->record(std::move(out), {a}, [a, arg = std::move(arg)](Tape& t, const Matrix& g) {
    const Matrix& av = a.value();
    Matrix ga(av.rows(), av.cols());
    for (std::size_t j = 0; j < av.cols(); ++j) ga(arg[j], j) = g[j];
    t.accumulate(a, ga);
  });
}

Var segment_means(Var a, std::size_t segment) {
  const Matrix& av = a.value();
  if (segment == 0) throw ArgumentError("segment_means: segment length must be positive");
  const std::size_t n = av.rows();
  const std::size_t count = (n + segment - 1) / segment;
  Matrix out(count, av.cols());
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t lo = s * segment, hi = std::min(n, lo + segment);
    auto o = out.row(s);
    for (std::size_t i = lo; i < hi; ++i) {
      auto in = av.row(i);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += in[j];
    }
    for (double& v : o) v /= static_cast<double>(hi - lo);
  }
  return a.tape->record(std::move(out), {a}, [a, segment](Tape& t, const Matrix& g) {
    const Matrix& av = a.value();
    const std::size_t n = av.rows();
    Matrix ga(n, av.cols());
    for (std::size_t s = 0; s < g.rows(); ++s) {
      const std::size_t lo = s * segment, hi = std::min(n, lo + segment);
      const double inv = 1.0 / static_cast<double>(hi - lo);
      auto in = g.row(s);
      for (std::size_t i = lo; i < hi; ++i) {
        auto o = ga.row(i);
        for (std::size_t j = 0; j < o.size(); ++j) o[j] = in[j] * inv;
      }
    }
    t.accumulate(a, ga);
  });
}

Var gather_rows(Var a, std::span<const std::size_t> idx) {
  const Matrix& av = a.value();
  Matrix out(idx.size(), av.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= av.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy(av.row(idx[r]).begin(), av.row(idx[r]).end(), out.row(r).begin());
  }
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  return a.tape->record(std::move(out), {a}, [a, rows = std::move(rows)](Tape& t, const Matrix& g) {
    const Matrix& av = a.value();
    Matrix ga(av.rows(), av.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      auto o = ga.row(rows[r]);
      auto in = g.row(r);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += in[j];
    }
    t.accumulate(a, ga);
  });
}

Var newton_schulz_init(Var a) {
  const Matrix& av = a.value();
  if (av.rows() != av.cols()) throw ShapeError("pinv: matrix must be square, got " + av.shape_str());
  const double n1 = norm_1(av);
  const double ninf = norm_inf(av);
  const double c = (n1 * ninf == 0.0) ? 0.0 : 1.0 / (n1 * ninf);
  return a.tape->record(camil::scaled(camil::transpose(av), c), {a}, [a, c, n1, ninf](Tape& t, const Matrix& g) {
    const Matrix& av = a.value();
    const std::size_t n = av.rows();
    Matrix ga = camil::scaled(camil::transpose(g), c);
    if (c != 0.0) {
      // d/dA of c = 1/(n1*ninf): -c * (dn1/n1 + dninf/ninf), with the norms'
      // subgradients taken at the maximising column / row.
      std::size_t jstar = 0, istar = 0;
      double best = -1.0;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += std::abs(av(i, j));
        if (s > best) { best = s; jstar = j; }
      }
      best = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += std::abs(av(i, j));
        if (s > best) { best = s; istar = i; }
      }
      double inner = 0.0;  // <G, A^T>
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) inner += g(i, j) * av(j, i);
      const double k = -inner * c;
      for (std::size_t i = 0; i < n; ++i) {
        const double sgn = av(i, jstar) > 0 ? 1.0 : (av(i, jstar) < 0 ? -1.0 : 0.0);
        ga(i, jstar) += k * sgn / n1;
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double sgn = av(istar, j) > 0 ? 1.0 : (av(istar, j) < 0 ? -1.0 : 0.0);
        ga(istar, j) += k * sgn / ninf;
      }
    }
    t.accumulate(a, ga);
  });
}

Var pinv(Var a, int iters) {
  if (iters < 1) throw ArgumentError("pinv: iters must be >= 1");
  Var z = newton_schulz_init(a);
  for (int k = 0; k < iters; ++k) {
    z = sub(scale(z, 2.0), matmul(matmul(z, a), z));
  }
  return z;
}

Var cross_entropy(Var logits, std::size_t label) {
  CrossEntropy ce = cross_entropy_logits(logits.value(), label);
  return logits.tape->record(Matrix(1, 1, ce.loss), {logits},
                             [logits, d = std::move(ce.dlogits)](Tape& t, const Matrix& g) {
                               t.accumulate(logits, camil::scaled(d, g[0]));
                             });
}

Var sum_squares(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  return a.tape->record(Matrix(1, 1, s), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, camil::scaled(a.value(), 2.0 * g[0]));
  });
}

}  // namespace camil::ad
