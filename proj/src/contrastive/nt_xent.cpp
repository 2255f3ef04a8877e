#include <cmath>

#include "camil/contrastive.hpp"

namespace camil {

NtXent nt_xent(const ContrastiveBatch& batch) {
  const Matrix& z = batch.embeddings;
  const std::size_t n = z.rows();
  if (n < 2 || n % 2 != 0) throw ArgumentError("nt_xent: need an even number (>= 2) of embeddings, got " + std::to_string(n));
  if (!(batch.tau > 0.0)) throw ArgumentError("nt_xent: tau must be > 0");
  const double tau = batch.tau;

  Matrix u = z;
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : z.row(i)) s += v * v;
    norms[i] = std::max(std::sqrt(s), 1e-12);
    for (double& v : u.row(i)) v /= norms[i];
  }
  const Matrix sim = scaled(matmul(u, transpose(u)), 1.0 / tau);

  // coef(i, k) = d loss / d sim(i, k)
  Matrix coef(n, n);
  double loss = 0.0;
  const double inv_count = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = i ^ 1U;
    double mx = -INFINITY;
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) mx = std::max(mx, sim(i, k));
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) denom += std::exp(sim(i, k) - mx);
    loss += -(sim(i, pos) - mx) + std::log(denom);
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      coef(i, k) = (std::exp(sim(i, k) - mx) / denom - (k == pos ? 1.0 : 0.0)) * inv_count;
    }
  }

  // sim = u u^T / tau, so d loss / d u = (coef + coef^T) u / tau.
  Matrix sym = add(coef, transpose(coef));
  const Matrix du = scaled(matmul(sym, u), 1.0 / tau);
  NtXent out{loss * inv_count, Matrix(n, z.cols())};
  for (std::size_t i = 0; i < n; ++i) {
    double proj = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) proj += u(i, c) * du(i, c);
    for (std::size_t c = 0; c < z.cols(); ++c) out.grad(i, c) = (du(i, c) - u(i, c) * proj) / norms[i];
  }
  return out;
}

}  // namespace camil
