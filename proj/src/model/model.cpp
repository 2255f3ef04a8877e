#include "camil/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace camil {

using ad::Var;

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kCamil: return "camil";
    case Variant::kCamilL: return "camil-l";
    case Variant::kCamilG: return "camil-g";
    case Variant::kMeanPool: return "mean";
    case Variant::kMaxPool: return "max";
  }
  return "?";
}

std::string_view variant_label(Variant v) {
  switch (v) {
    case Variant::kCamil: return "CAMIL";
    case Variant::kCamilL: return "CAMIL-L";
    case Variant::kCamilG: return "CAMIL-G";
    case Variant::kMeanPool: return "MEAN-POOL";
    case Variant::kMaxPool: return "MAX-POOL";
  }
  return "?";
}

std::optional<Variant> parse_variant(std::string_view s) {
  for (Variant v : kAllVariants)
    if (s == variant_name(v) || s == variant_label(v)) return v;
  return std::nullopt;
}

std::string_view landmark_strategy_name(LandmarkStrategy s) {
  return s == LandmarkStrategy::kSegmentMeans ? "segment" : "random";
}

std::optional<LandmarkStrategy> parse_landmark_strategy(std::string_view s) {
  if (s == "segment" || s == "segment-means") return LandmarkStrategy::kSegmentMeans;
  if (s == "random") return LandmarkStrategy::kRandom;
  return std::nullopt;
}

std::vector<ParamTensor*> ModelParams::tensors() {
  return {&nystrom.wq, &nystrom.wk, &nystrom.wv, &neighbor.wq, &neighbor.wk,
          &neighbor.wv, &gate.u,     &gate.v,     &gate.w,      &classifier.wc};
}

std::vector<const ParamTensor*> ModelParams::tensors() const {
  return {&nystrom.wq, &nystrom.wk, &nystrom.wv, &neighbor.wq, &neighbor.wk,
          &neighbor.wv, &gate.u,     &gate.v,     &gate.w,      &classifier.wc};
}

void ModelParams::zero_grad() {
  for (ParamTensor* p : tensors()) p->zero_grad();
}

ModelParams init_params(std::size_t d, std::size_t hdim, std::size_t classes, std::uint64_t seed) {
  if (d == 0 || hdim == 0) throw ArgumentError("init_params: d and hdim must be >= 1");
  if (classes < 2) throw ArgumentError("init_params: need at least 2 classes");
  std::mt19937_64 rng(seed);
  auto xavier = [&rng](std::string name, std::size_t rows, std::size_t cols) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = dist(rng);
    return ParamTensor(std::move(name), std::move(m));
  };
  ModelParams p;
  p.seed = seed;
  p.nystrom.wq = xavier("nystrom.wq", d, d);
  p.nystrom.wk = xavier("nystrom.wk", d, d);
  p.nystrom.wv = xavier("nystrom.wv", d, d);
  p.nystrom.landmark_seed = seed;
  p.neighbor.wq = xavier("neighbor.wq", d, d);
  p.neighbor.wk = xavier("neighbor.wk", d, d);
  p.neighbor.wv = xavier("neighbor.wv", d, d);
  p.gate.u = xavier("gate.u", hdim, d);
  p.gate.v = xavier("gate.v", hdim, d);
  p.gate.w = ParamTensor("gate.w", Matrix(hdim, 1));
  p.classifier.wc = xavier("classifier.wc", classes, d);
  return p;
}

namespace {

struct LandmarkPlan {
  bool segments = true;
  std::size_t segment = 1;
  std::vector<std::size_t> rows;
};

LandmarkPlan plan_landmarks(std::size_t n, std::size_t m, LandmarkStrategy strategy, std::mt19937_64& rng,
                            std::vector<std::string>* warnings) {
  if (n == 0) throw ArgumentError("select_landmarks: empty input");
  if (m == 0) throw ArgumentError("select_landmarks: landmark count must be >= 1");
  if (m > n) {
    if (warnings) {
      warnings->push_back("landmark count " + std::to_string(m) + " exceeds " + std::to_string(n) +
                          " rows; clamped");
    }
    m = n;
  }
  LandmarkPlan plan;
  if (strategy == LandmarkStrategy::kSegmentMeans) {
    plan.segment = (n + m - 1) / m;
    const std::size_t produced = (n + plan.segment - 1) / plan.segment;
    if (produced != m && warnings) {
      warnings->push_back("segment length " + std::to_string(plan.segment) + " yields " +
                          std::to_string(produced) + " landmarks instead of " + std::to_string(m));
    }
    return plan;
  }
  plan.segments = false;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  plan.rows.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(plan.rows.begin(), plan.rows.end());
  return plan;
}

Var apply_plan(const LandmarkPlan& plan, Var x) {
  return plan.segments ? ad::segment_means(x, plan.segment) : ad::gather_rows(x, plan.rows);
}

struct Leaves {
  Var nq, nk, nv, aq, ak, av, gu, gv, gw, wc;
};

Leaves make_leaves(ad::Tape& tape, const ModelParams& p) {
  auto leaf = [&tape](const ParamTensor& t) { return tape.variable(t.value); };
  return {leaf(p.nystrom.wq), leaf(p.nystrom.wk), leaf(p.nystrom.wv), leaf(p.neighbor.wq),
          leaf(p.neighbor.wk), leaf(p.neighbor.wv), leaf(p.gate.u),    leaf(p.gate.v),
          leaf(p.gate.w),      leaf(p.classifier.wc)};
}

Var nystrom_var(Var h, Var wq, Var wk, Var wv, const NystromParams& p, std::vector<std::string>* warnings) {
  const std::size_t n = h.rows();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(wq.cols()));
  const std::size_t m = p.landmarks == 0 ? std::min<std::size_t>(n, 64) : p.landmarks;
  std::mt19937_64 rng(p.landmark_seed);
  const LandmarkPlan plan = plan_landmarks(n, m, p.strategy, rng, warnings);

  Var q = ad::matmul(h, wq);
  Var k = ad::matmul(h, wk);
  Var v = ad::matmul(h, wv);
  Var q_land = apply_plan(plan, q);
  Var k_land = apply_plan(plan, k);

  Var kernel_left = ad::row_softmax(ad::scale(ad::matmul(q, ad::transpose(k_land)), inv_sqrt_d));       // n x m
  Var kernel_mid = ad::row_softmax(ad::scale(ad::matmul(q_land, ad::transpose(k_land)), inv_sqrt_d));   // m x m
  Var kernel_right = ad::row_softmax(ad::scale(ad::matmul(q_land, ad::transpose(k)), inv_sqrt_d));      // m x n
  // Right-to-left keeps every product at most n x max(m, d).
  Var right = ad::matmul(kernel_right, v);
  Var mid = ad::matmul(ad::pinv(kernel_mid, p.pinv_iters), right);
  return ad::matmul(kernel_left, mid);
}

struct NeighborVars {
  Var q, k, w, l;
};

NeighborVars neighbor_var(Var t, const SimilarityMask& mask, Var wq, Var wk, Var wv) {
  if (mask.n != t.rows()) {
    throw ShapeError("neighbor_attention: mask over " + std::to_string(mask.n) + " tiles, features have " +
                     std::to_string(t.rows()));
  }
  Var q = ad::matmul(t, wq);
  Var k = ad::matmul(t, wk);
  Var v = ad::matmul(t, wv);
  // score_i = sum_j s_ij <q_i, k_j> = <q_i, (S K)_i>
  Var score = ad::row_dot(q, ad::sparse_matmul(mask.entries, mask.n, k));
  Var w = ad::transpose(ad::row_softmax(ad::transpose(score)));
  Var l = ad::scale_rows(v, w);
  return {q, k, w, l};
}

Var fuse_var(Var l, Var t) {
  // sigma(l) * l + (1 - sigma(l)) * t, written as t + sigma(l) * (l - t)
  return ad::add(t, ad::mul(ad::sigmoid(l), ad::sub(l, t)));
}

struct PoolVars {
  Var a, z;
};

PoolVars pool_var(Var fused, Var t, Var u, Var v, Var w) {
  if (!fused.value().same_shape(t.value())) {
    throw ShapeError("gated_pool: fused " + fused.value().shape_str() + " vs t " + t.value().shape_str());
  }
  Var gate = ad::mul(ad::tanh(ad::matmul(t, ad::transpose(v))), ad::sigmoid(ad::matmul(t, ad::transpose(u))));
  Var e = ad::matmul(gate, w);  // n x 1
  Var a = ad::transpose(ad::row_softmax(ad::transpose(e)));
  Var z = ad::matmul(ad::transpose(a), fused);
  return {a, z};
}

std::vector<double> column_to_vector(const Matrix& m) { return {m.data().begin(), m.data().end()}; }

void check_param_shapes(const ModelParams& p, std::size_t d) {
  auto want = [](const ParamTensor& t, std::size_t r, std::size_t c) {
    if (t.value.rows() != r || t.value.cols() != c) {
      throw ShapeError(t.name + ": expected " + std::to_string(r) + "x" + std::to_string(c) + ", got " +
                       t.value.shape_str());
    }
  };
  const std::size_t hdim = p.hdim();
  for (const ParamTensor* t : {&p.nystrom.wq, &p.nystrom.wk, &p.nystrom.wv, &p.neighbor.wq, &p.neighbor.wk,
                               &p.neighbor.wv})
    want(*t, d, d);
  want(p.gate.u, hdim, d);
  want(p.gate.v, hdim, d);
  want(p.gate.w, hdim, 1);
  want(p.classifier.wc, p.classes(), d);
}

}  // namespace

namespace detail {
struct Graph {
  explicit Graph(bool record) : tape(record) {}
  ad::Tape tape;
  Leaves leaves{};
  Var logits{};
  std::size_t n = 0;
  std::size_t d = 0;
};
}  // namespace detail

LandmarkSelection select_landmarks(const Matrix& x, std::size_t m, LandmarkStrategy strategy,
                                   std::mt19937_64& rng) {
  LandmarkSelection out;
  const LandmarkPlan plan = plan_landmarks(x.rows(), m, strategy, rng, &out.warnings);
  ad::Tape tape(false);
  out.landmarks = apply_plan(plan, tape.constant(x)).value();
  return out;
}

ForwardTrace forward(const FeatureBag& bag, const SimilarityMask& mask, const ModelParams& params,
                     Variant variant, ForwardMode mode) {
  const std::size_t n = bag.n();
  if (n == 0) throw ArgumentError("forward: bag has no tiles");
  if (bag.d() != params.d()) {
    throw ShapeError("forward: bag has d=" + std::to_string(bag.d()) + ", model expects " +
                     std::to_string(params.d()));
  }
  check_param_shapes(params, bag.d());

  auto graph = std::make_shared<detail::Graph>(mode == ForwardMode::kTraining);
  ad::Tape& tape = graph->tape;
  graph->n = n;
  graph->d = bag.d();
  const Leaves& lv = graph->leaves = make_leaves(tape, params);

  ForwardTrace trace;
  trace.variant = variant;
  Var h = tape.constant(bag.features);
  const std::vector<double> uniform(n, 1.0 / static_cast<double>(n));

  Var z;
  switch (variant) {
    case Variant::kCamil:
    case Variant::kCamilL: {
      Var t = variant == Variant::kCamil ? nystrom_var(h, lv.nq, lv.nk, lv.nv, params.nystrom, &trace.warnings) : h;
      NeighborVars nb = neighbor_var(t, mask, lv.aq, lv.ak, lv.av);
      Var fused = fuse_var(nb.l, t);
      PoolVars pool = pool_var(fused, t, lv.gu, lv.gv, lv.gw);
      z = pool.z;
      trace.t = t.value();
      trace.w = column_to_vector(nb.w.value());
      trace.l = nb.l.value();
      trace.fused = fused.value();
      trace.a = column_to_vector(pool.a.value());
      const Matrix& q = nb.q.value();
      const Matrix& k = nb.k.value();
      trace.masked_scores.reserve(mask.entries.size());
      for (const SparseEntry& e : mask.entries) {
        double dot = 0.0;
        for (std::size_t c = 0; c < q.cols(); ++c) dot += q(e.row, c) * k(e.col, c);
        trace.masked_scores.push_back({e.row, e.col, dot * e.value});
      }
      break;
    }
    case Variant::kCamilG: {
      Var t = nystrom_var(h, lv.nq, lv.nk, lv.nv, params.nystrom, &trace.warnings);
      PoolVars pool = pool_var(t, t, lv.gu, lv.gv, lv.gw);
      z = pool.z;
      trace.t = t.value();
      trace.w = uniform;
      trace.l = Matrix(n, bag.d());
      trace.fused = t.value();
      trace.a = column_to_vector(pool.a.value());
      break;
    }
    case Variant::kMeanPool:
    case Variant::kMaxPool: {
      z = variant == Variant::kMeanPool ? ad::column_mean(h) : ad::column_max(h);
      trace.t = bag.features;
      trace.w = uniform;
      trace.l = Matrix(n, bag.d());
      trace.fused = bag.features;
      trace.a = uniform;
      break;
    }
  }
  graph->logits = ad::matmul(z, ad::transpose(lv.wc));
  trace.z = z.value();
  trace.logits = graph->logits.value();
  if (!trace.logits.all_finite()) throw InvariantError("finite-logits", "forward: non-finite logits");
  if (mode == ForwardMode::kTraining) trace.graph = std::move(graph);
  return trace;
}

Gradients backward(ForwardTrace& trace, const FeatureBag& bag, const SimilarityMask& mask,
                   const ModelParams& params, int label) {
  if (!trace.graph) throw ArgumentError("backward: trace was produced without recording gradients");
  detail::Graph& g = *trace.graph;
  if (g.n != bag.n() || g.d != bag.d() || mask.n != bag.n() || params.d() != g.d) {
    throw ArgumentError("backward: trace does not match the given bag/mask/params (stale trace)");
  }
  if (label < 0 || static_cast<std::size_t>(label) >= params.classes()) {
    throw ArgumentError("backward: label " + std::to_string(label) + " out of range");
  }
  Var loss = ad::cross_entropy(g.logits, static_cast<std::size_t>(label));
  g.tape.backward(loss);
  const Leaves& lv = g.leaves;
  Gradients out;
  out.loss = loss.value()[0];
  for (Var v : {lv.nq, lv.nk, lv.nv, lv.aq, lv.ak, lv.av, lv.gu, lv.gv, lv.gw, lv.wc}) {
    out.grads.push_back(g.tape.grad(v));
  }
  return out;
}

double loss(const FeatureBag& bag, const SimilarityMask& mask, const ModelParams& params, Variant variant,
            int label) {
  const ForwardTrace trace = forward(bag, mask, params, variant);
  return cross_entropy_logits(trace.logits, static_cast<std::size_t>(label)).loss;
}

std::vector<double> attention_scores(const ForwardTrace& trace, Variant variant) {
  (void)variant;  // every variant exposes its pooling weights through `a`
  const auto [lo, hi] = std::minmax_element(trace.a.begin(), trace.a.end());
  std::vector<double> scores(trace.a.size(), 0.5);
  if (trace.a.empty() || *hi - *lo <= 0.0) return scores;
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = (trace.a[i] - *lo) / span;
  return scores;
}

double positive_probability(const ForwardTrace& trace) {
  if (trace.logits.cols() < 2) throw ShapeError("positive_probability: need >= 2 logits");
  return row_softmax(trace.logits)[1];
}

Matrix nystrom_attention(const Matrix& h, const NystromParams& p, std::vector<std::string>* warnings) {
  ad::Tape tape(false);
  return nystrom_var(tape.constant(h), tape.constant(p.wq.value), tape.constant(p.wk.value),
                     tape.constant(p.wv.value), p, warnings)
      .value();
}

Matrix exact_attention(const Matrix& h, const NystromParams& p) {
  const Matrix q = matmul(h, p.wq.value);
  const Matrix k = matmul(h, p.wk.value);
  const Matrix v = matmul(h, p.wv.value);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.wq.value.cols()));
  return matmul(row_softmax(scaled(matmul(q, transpose(k)), inv_sqrt_d)), v);
}

NeighborAttention neighbor_attention(const Matrix& t, const SimilarityMask& mask, const NeighborAttentionParams& p) {
  ad::Tape tape(false);
  NeighborVars nb = neighbor_var(tape.constant(t), mask, tape.constant(p.wq.value), tape.constant(p.wk.value),
                                 tape.constant(p.wv.value));
  return {column_to_vector(nb.w.value()), nb.l.value()};
}

Matrix fuse(const Matrix& l, const Matrix& t) {
  if (!l.same_shape(t)) throw ShapeError("fuse: l " + l.shape_str() + " vs t " + t.shape_str());
  ad::Tape tape(false);
  return fuse_var(tape.constant(l), tape.constant(t)).value();
}

Pooled gated_pool(const Matrix& fused, const Matrix& t, const GatedPoolParams& p) {
  ad::Tape tape(false);
  PoolVars pool = pool_var(tape.constant(fused), tape.constant(t), tape.constant(p.u.value),
                           tape.constant(p.v.value), tape.constant(p.w.value));
  return {column_to_vector(pool.a.value()), pool.z.value()};
}

Matrix classify(const Matrix& z, const ClassifierParams& p) {
  if (z.rows() != 1 || z.cols() != p.wc.value.cols()) {
    throw ShapeError("classify: z " + z.shape_str() + " does not fit Wc " + p.wc.value.shape_str());
  }
  return matmul(z, transpose(p.wc.value));
}

std::vector<GradCheckEntry> gradient_check(const FeatureBag& bag, const SimilarityMask& mask, ModelParams params,
                                           Variant variant, int label, double h, bool corrupt) {
  ForwardTrace trace = forward(bag, mask, params, variant, ForwardMode::kTraining);
  Gradients analytic = backward(trace, bag, mask, params, label);
  if (corrupt) {
    for (Matrix& g : analytic.grads)
      for (double& v : g.data()) v = v * 1.5 + 1e-3;
  }
  const std::vector<ParamTensor*> tensors = params.tensors();
  const std::vector<Matrix> numeric =
      richardson_diff_grad([&] { return loss(bag, mask, params, variant, label); }, tensors, h);
  std::vector<GradCheckEntry> out;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    out.push_back({tensors[i]->name, max_relative_error(analytic.grads[i], numeric[i])});
  }
  return out;
}

}  // namespace camil
