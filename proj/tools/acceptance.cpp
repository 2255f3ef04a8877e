// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "commands.hpp"

namespace {

using namespace camil;
using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.data()) v = n(rng);
  return m;
}

FeatureBag grid_bag(int rows, int cols, std::size_t d, std::mt19937_64& rng) {
  FeatureBag bag;
  bag.grid.slide_id = "probe";
  bag.grid.width = cols;
  bag.grid.height = rows;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) bag.grid.tiles.push_back({r, c});
  bag.features = random_matrix(bag.grid.tiles.size(), d, rng);
  bag.slide_label = 1;
  return bag;
}

ModelParams random_params(std::size_t d, std::uint64_t seed, std::mt19937_64& rng) {
  ModelParams p = init_params(d, 16, 2, seed);
  for (double& v : p.gate.w.value.data()) v = std::normal_distribution<double>(0.0, 0.5)(rng);
  return p;
}

// ---- 1 ----------------------------------------------------------------------

Outcome gradient_correctness() {
  cli::RunConfig cfg;
  cfg.gradcheck_tiles = 12;
  cfg.gradcheck_d = 8;
  cfg.train.hdim = 16;
  const auto t0 = Clock::now();
  const cli::GradcheckReport r = cli::run_gradcheck(cfg);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string where;
  for (const auto& v : r.variants)
    for (const auto& e : v.entries)
      if (e.max_rel_error >= worst) {
        worst = e.max_rel_error;
        where = fmt::format("{} {}", variant_label(v.variant), e.name);
      }
  Outcome o;
  o.pass = r.passed() && r.variants.size() == 5 && secs < 30.0;
  o.detail = fmt::format("5 variants, n=12 d=8 hdim=16: worst rel err {:.2e} ({}) <= 1e-4; {:.1f} s < 30 s", worst,
                         where, secs);
  return o;
}

// ---- 2 ----------------------------------------------------------------------

Outcome nystrom_fidelity() {
  const auto t0 = Clock::now();
  cli::RunConfig cfg;
  cfg.propagate_seed();
  const std::vector<FeatureBag> bags = synth_dataset(cfg.synth, 50, 0.5);
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (const FeatureBag& full : bags) {
    const std::size_t n = 1 + rng() % std::min<std::size_t>(32, full.n());
    std::vector<std::size_t> rows(full.n());
    std::iota(rows.begin(), rows.end(), 0);
    std::shuffle(rows.begin(), rows.end(), rng);
    Matrix h(n, full.d());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < full.d(); ++k) h(i, k) = full.features(rows[i], k);
    NystromParams p = init_params(full.d(), 16, 2, rng()).nystrom;
    p.landmarks = n;
    p.pinv_iters = 20;
    p.strategy = LandmarkStrategy::kSegmentMeans;
    worst = std::max(worst, max_abs_diff(nystrom_attention(h, p), exact_attention(h, p)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-3 && secs < 10.0,
          fmt::format("50 synthetic bags, n<=32, m=n, initial weights: max abs err {:.2e} <= 1e-3; {:.2f} s < 10 s",
                      worst, secs)};
}

// ---- 3 ----------------------------------------------------------------------

// Median of `reps` samples; each sample is the mean per-call time over at
// least 20 ms of back-to-back calls, after one warm-up call.
double median_time(const std::function<void()>& f, int reps = 5) {
  f();
  std::vector<double> t;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    int calls = 0;
    do {
      f();
      ++calls;
    } while (seconds_since(t0) < 0.02);
    t.push_back(seconds_since(t0) / calls);
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

Outcome nystrom_scaling() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  const std::size_t d = 8;
  NystromParams p;
  p.wq = ParamTensor("wq", random_matrix(d, d, rng, 0.3));
  p.wk = ParamTensor("wk", random_matrix(d, d, rng, 0.3));
  p.wv = ParamTensor("wv", random_matrix(d, d, rng, 0.3));
  p.landmarks = 16;
  const Matrix small = random_matrix(1024, d, rng), large = random_matrix(4096, d, rng);
  volatile double sink = 0.0;
  auto ny = [&](const Matrix& h) { return [&] { sink = sink + nystrom_attention(h, p)[0]; }; };
  auto ex = [&](const Matrix& h) { return [&] { sink = sink + exact_attention(h, p)[0]; }; };
  const double ny_ratio = median_time(ny(large)) / median_time(ny(small));
  const double ex_ratio = median_time(ex(large)) / median_time(ex(small));
  const double secs = seconds_since(t0);
  return {ny_ratio <= 6.0 && ex_ratio > 10.0 && secs < 120.0,
          fmt::format("m=16, T(4096)/T(1024): Nystrom {:.2f} <= 6, exact {:.2f} > 10; {:.1f} s < 120 s", ny_ratio,
                      ex_ratio, secs)};
}

// ---- 4, 5, 8 ----------------------------------------------------------------

struct Experiment {
  std::vector<FeatureBag> raw;
  EvalReport camil, mean_pool, camil_g, contrastive, random_encoder;
  double main_secs = 0.0, contrastive_secs = 0.0;
};

EvalReport run_cv(const std::vector<FeatureBag>& bags, Variant v, unsigned threads) {
  cli::RunConfig cfg;
  cfg.propagate_seed();
  TrainConfig tc = cfg.train;
  tc.variant = v;
  const std::vector<SimilarityMask> masks = build_masks(bags, cfg.distance);
  return cross_validate(bags, masks, tc, threads).report;
}

std::string summary(const char* name, const EvalReport& r) {
  auto f = [](const std::optional<double>& v) { return v ? fmt::format("{:.3f}", *v) : std::string("n/a"); };
  return fmt::format("{} acc {} auc {} dice {} spec {}", name, f(r.mean.acc), f(r.mean.auc), f(r.mean.dice),
                     f(r.mean.specificity));
}

Outcome synthetic_experiment(Experiment& ex, unsigned threads) {
  const auto t0 = Clock::now();
  cli::RunConfig cfg;
  cfg.propagate_seed();
  ex.raw = synth_dataset(cfg.synth, cfg.n_slides, cfg.positive_rate);
  ex.camil = run_cv(ex.raw, Variant::kCamil, threads);
  std::printf("  %s\n", summary("CAMIL    ", ex.camil).c_str());
  ex.mean_pool = run_cv(ex.raw, Variant::kMeanPool, threads);
  std::printf("  %s\n", summary("MEAN-POOL", ex.mean_pool).c_str());
  ex.camil_g = run_cv(ex.raw, Variant::kCamilG, threads);
  std::printf("  %s\n", summary("CAMIL-G  ", ex.camil_g).c_str());
  ex.main_secs = seconds_since(t0);
  const double auc = ex.camil.mean.auc.value_or(0.0);
  const double mean_auc = ex.mean_pool.mean.auc.value_or(1.0);
  const double acc = ex.camil.mean.acc.value_or(0.0), g_acc = ex.camil_g.mean.acc.value_or(1.0);
  return {auc >= 0.90 && auc - mean_auc >= 0.05 && acc >= g_acc && ex.main_secs < 600.0,
          fmt::format("CAMIL AUC {:.3f} >= 0.90; minus mean-pool {:.3f} = {:.3f} >= 0.05; CAMIL ACC {:.3f} >= "
                      "CAMIL-G {:.3f}; {:.0f} s < 600 s on {} thread(s)",
                      auc, mean_auc, auc - mean_auc, acc, g_acc, ex.main_secs, threads)};
}

Outcome localization(const Experiment& ex) {
  const double dice = ex.camil.mean.dice.value_or(0.0), spec = ex.camil.mean.specificity.value_or(0.0);
  return {dice >= 0.50 && spec >= 0.95,
          fmt::format("CAMIL Dice {:.3f} >= 0.50 over cancerous slides, specificity {:.3f} >= 0.95 over normal", dice,
                      spec)};
}

// ---- 6 ----------------------------------------------------------------------

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(6);
  int auc_bad = 0, dice_bad = 0, spec_bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(30);
    std::vector<int> y(30);
    do {
      for (std::size_t i = 0; i < 30; ++i) {
        s[i] = static_cast<double>(rng() % 12) / 11.0;
        y[i] = static_cast<int>(rng() % 2);
      }
    } while (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0);
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < 30; ++i)
      for (std::size_t j = 0; j < 30; ++j)
        if (y[i] == 1 && y[j] == 0) {
          pairs += 1.0;
          wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    auc_bad += auc(s, y) != wins / pairs;

    TileMask p(50), g(50);
    std::set<std::size_t> ps, gs;
    for (std::size_t i = 0; i < 50; ++i) {
      p[i] = rng() % 3 == 0;
      g[i] = rng() % 4 == 0 || i == static_cast<std::size_t>(trial % 50);
      if (p[i]) ps.insert(i);
      if (g[i]) gs.insert(i);
    }
    std::vector<std::size_t> inter;
    std::set_intersection(ps.begin(), ps.end(), gs.begin(), gs.end(), std::back_inserter(inter));
    dice_bad += dice(p, g) != 2.0 * static_cast<double>(inter.size()) / static_cast<double>(ps.size() + gs.size());
    spec_bad += specificity(p, TileMask(50, false)) != static_cast<double>(50 - ps.size()) / 50.0;
  }
  const double secs = seconds_since(t0);
  return {auc_bad == 0 && dice_bad == 0 && spec_bad == 0 && secs < 5.0,
          fmt::format("mismatches: auc {}/100, dice {}/100, specificity {}/100 (exact equality); {:.2f} s < 5 s",
                      auc_bad, dice_bad, spec_bad, secs)};
}

// ---- 7 ----------------------------------------------------------------------

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  return std::equal(std::istreambuf_iterator<char>(fa), {}, std::istreambuf_iterator<char>(fb), {});
}

Outcome invariant_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(7);
  std::vector<std::string> failed;
  auto require = [&](bool ok, const char* what) {
    if (!ok && std::find(failed.begin(), failed.end(), what) == failed.end()) failed.push_back(what);
  };

  double sum_err = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const FeatureBag bag = grid_bag(2 + static_cast<int>(rng() % 6), 2 + static_cast<int>(rng() % 6), 8, rng);
    const SimilarityMask mask = similarity_mask(bag, build_adjacency(bag.grid));
    const ModelParams p = random_params(8, rng(), rng);
    for (Variant v : kAllVariants) {
      const ForwardTrace t = forward(bag, mask, p, v);
      sum_err = std::max(sum_err, std::abs(std::accumulate(t.w.begin(), t.w.end(), 0.0) - 1.0));
      sum_err = std::max(sum_err, std::abs(std::accumulate(t.a.begin(), t.a.end(), 0.0) - 1.0));
    }
  }
  require(sum_err <= 1e-9, "sum(w)=sum(a)=1");

  double perm_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureBag bag = grid_bag(4, 5, 8, rng);
    const ModelParams p = random_params(8, rng(), rng);
    std::vector<std::size_t> perm(bag.n());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    FeatureBag moved = bag;
    for (std::size_t i = 0; i < bag.n(); ++i) {
      moved.grid.tiles[i] = bag.grid.tiles[perm[i]];
      for (std::size_t k = 0; k < bag.d(); ++k) moved.features(i, k) = bag.features(perm[i], k);
    }
    const ForwardTrace a = forward(bag, similarity_mask(bag, build_adjacency(bag.grid)), p, Variant::kCamilL);
    const ForwardTrace b = forward(moved, similarity_mask(moved, build_adjacency(moved.grid)), p, Variant::kCamilL);
    perm_err = std::max(perm_err, max_abs_diff(a.logits, b.logits));
    for (std::size_t i = 0; i < bag.n(); ++i) {
      perm_err = std::max(perm_err, std::abs(b.w[i] - a.w[perm[i]]));
      perm_err = std::max(perm_err, std::abs(b.a[i] - a.a[perm[i]]));
    }
  }
  require(perm_err <= 1e-9, "CAMIL-L permutation equivariance");

  double shift_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x = random_matrix(3, 7, rng, 5.0);
    const double c = std::normal_distribution<double>(0.0, 100.0)(rng);
    Matrix y = x;
    for (double& v : y.data()) v += c;
    shift_err = std::max(shift_err, max_abs_diff(row_softmax(x), row_softmax(y)));
  }
  require(shift_err <= 1e-12, "softmax shift invariance");

  cli::RunConfig cfg;
  cfg.propagate_seed();
  SynthConfig sc = cfg.synth;
  const std::vector<FeatureBag> bags = synth_dataset(sc, 20, 0.5);
  for (const FeatureBag& bag : bags) {
    const SimilarityMask m = similarity_mask(bag, build_adjacency(bag.grid));
    bool ok = true;
    try {
      m.validate();
    } catch (const std::exception&) {
      ok = false;
    }
    for (std::size_t i = 0; i < m.n && ok; ++i) ok = m.degree(i) <= 8;
    for (const SparseEntry& e : m.entries) ok = ok && m.weight(e.col, e.row) == e.value && e.value > 0 && e.value <= 1;
    require(ok, "mask symmetry / degree <= 8 / weights in (0,1]");
  }

  const fs::path dir = fs::temp_directory_path() / fmt::format("camil_acceptance_{}", ::getpid());
  fs::create_directories(dir);
  save_bag(bags[0], dir / "a.bag");
  require(load_bag(dir / "a.bag") == bags[0], "bag round trip");
  save_bag(load_bag(dir / "a.bag"), dir / "b.bag");
  require(same_bytes(dir / "a.bag", dir / "b.bag"), "bag round trip");
  Checkpoint ck{random_params(8, 3, rng), Variant::kCamil};
  save_model(ck, dir / "m.bin");
  const Checkpoint back = load_model(dir / "m.bin");
  bool model_ok = back.variant == ck.variant;
  for (std::size_t t = 0; t < ck.params.tensors().size(); ++t)
    model_ok = model_ok && back.params.tensors()[t]->value == ck.params.tensors()[t]->value;
  require(model_ok, "model round trip");
  const EncoderParams enc = init_encoder(64, 16, 8, 4);
  save_encoder(enc, dir / "e.bin");
  const EncoderParams enc_back = load_encoder(dir / "e.bin");
  bool enc_ok = true;
  for (std::size_t t = 0; t < enc.tensors().size(); ++t)
    enc_ok = enc_ok && enc.tensors()[t]->value == enc_back.tensors()[t]->value;
  require(enc_ok, "encoder round trip");
  fs::remove_all(dir);

  require(synth_dataset(sc, 20, 0.5) == bags, "synth determinism");
  const std::vector<SimilarityMask> masks = build_masks(bags);
  std::vector<std::size_t> idx(bags.size());
  std::iota(idx.begin(), idx.end(), 0);
  TrainConfig tc;
  tc.epochs = 2;
  const TrainResult r1 = train(bags, masks, idx, {}, tc), r2 = train(bags, masks, idx, {}, tc);
  bool train_ok = r1.history.size() == r2.history.size();
  for (std::size_t e = 0; train_ok && e < r1.history.size(); ++e)
    train_ok = r1.history[e].train_loss == r2.history[e].train_loss;
  require(train_ok, "train determinism");
  const Evaluation e1 = evaluate(bags, masks, idx, r1.params, Variant::kCamil);
  const Evaluation e2 = evaluate(bags, masks, idx, r1.params, Variant::kCamil);
  bool eval_ok = e1.metrics.acc == e2.metrics.acc && e1.metrics.auc == e2.metrics.auc &&
                 e1.metrics.dice == e2.metrics.dice && e1.metrics.specificity == e2.metrics.specificity;
  for (std::size_t i = 0; i < e1.predictions.size(); ++i)
    eval_ok = eval_ok && e1.predictions[i].probability == e2.predictions[i].probability;
  require(eval_ok, "eval determinism");

  const double secs = seconds_since(t0);
  std::string detail = fmt::format("sum err {:.1e}, permutation err {:.1e}, softmax shift err {:.1e}; masks, round "
                                   "trips, determinism checked; {:.1f} s < 60 s",
                                   sum_err, perm_err, shift_err, secs);
  for (const std::string& f : failed) detail += "; FAILED: " + f;
  return {failed.empty() && secs < 60.0, detail};
}

// ---- 8 ----------------------------------------------------------------------

Outcome contrastive_sanity(Experiment& ex, unsigned threads) {
  const auto t0 = Clock::now();
  std::vector<std::string> failed;
  const double b1 = nt_xent({Matrix::from_rows({{0.3, -1.0, 2.0}, {1.5, 0.2, -0.7}}), 0.5}).loss;
  if (b1 != 0.0) failed.push_back("B=1 loss not exactly 0");
  const double tau = 0.5;
  const Matrix z = Matrix::from_rows({{2, 0, 0}, {1, 0, 0}, {0, 3, 0}, {0, 0.5, 0}});
  const double pos = std::exp(1.0 / tau), neg = std::exp(0.0);
  const double expected = -std::log(pos / (pos + 2.0 * neg));
  const double b2 = nt_xent({z, tau}).loss;
  if (std::abs(b2 - expected) > 1e-9) failed.push_back("B=2 orthogonal case");

  std::mt19937_64 rng(8);
  double grad_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    ParamTensor e("e", random_matrix(2 * (1 + rng() % 4), 1 + rng() % 6, rng));
    const NtXent r = nt_xent({e.value, tau});
    ParamTensor* ps[] = {&e};
    const auto fd = finite_diff_grad([&] { return nt_xent({e.value, tau}).loss; }, ps, 1e-6);
    grad_err = std::max(grad_err, max_relative_error(r.grad, fd[0], 1e-6));
  }
  if (grad_err > 1e-4) failed.push_back("NT-Xent gradient");

  cli::RunConfig cfg;
  cfg.propagate_seed();
  const PretrainResult pre = cli::pretrain(ex.raw, cfg);
  const fs::path enc_path = fs::temp_directory_path() / fmt::format("camil_acceptance_enc_{}.bin", ::getpid());
  save_encoder(pre.params, enc_path);
  cfg.encoder = enc_path;
  cfg.features = cli::Features::kContrastive;
  const std::vector<FeatureBag> contrastive_bags = cli::prepare_features(ex.raw, cfg);
  fs::remove(enc_path);
  cfg.features = cli::Features::kRandom;
  const std::vector<FeatureBag> random_bags = cli::prepare_features(ex.raw, cfg);
  ex.contrastive = run_cv(contrastive_bags, Variant::kCamil, threads);
  std::printf("  %s\n", summary("CAMIL contrastive features", ex.contrastive).c_str());
  ex.random_encoder = run_cv(random_bags, Variant::kCamil, threads);
  std::printf("  %s\n", summary("CAMIL random-encoder features", ex.random_encoder).c_str());
  const double c_auc = ex.contrastive.mean.auc.value_or(0.0), r_auc = ex.random_encoder.mean.auc.value_or(1.0);
  if (!(c_auc >= r_auc)) failed.push_back("contrastive AUC below random-encoder AUC");
  ex.contrastive_secs = seconds_since(t0);

  std::string detail = fmt::format(
      "B=1 loss {}; B=2 |{:.12f} - {:.12f}| <= 1e-9; grad rel err {:.1e} <= 1e-4; AUC contrastive {:.3f} >= "
      "random encoder {:.3f} ({:.0f} s)",
      b1, b2, expected, grad_err, c_auc, r_auc, ex.contrastive_secs);
  for (const std::string& f : failed) detail += "; FAILED: " + f;
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-8"};
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  std::vector<int> only;
  app.add_option("--threads", threads, "Folds trained concurrently");
  app.add_option("--only", only, "Run only these criteria (4, 5 and 8 share one experiment)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  int failures = 0;
  auto report = [&](int c, const char* title, const Outcome& o) {
    std::printf("criterion %d %s  %s: %s\n", c, o.pass ? "PASS" : "FAIL", title, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };
  auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("exception: ") + e.what()};
    }
  };

  if (wanted(1)) report(1, "gradient correctness", guarded(gradient_correctness));
  if (wanted(2)) report(2, "Nystrom fidelity", guarded(nystrom_fidelity));
  if (wanted(3)) report(3, "Nystrom scaling", guarded(nystrom_scaling));
  Experiment ex;
  if (wanted(4) || wanted(5) || wanted(8)) {
    const Outcome four = guarded([&] { return synthetic_experiment(ex, threads); });
    if (wanted(4)) report(4, "synthetic MIL experiment", four);
    if (wanted(5)) report(5, "localization", guarded([&] { return localization(ex); }));
  }
  if (wanted(6)) report(6, "metric oracles", guarded(metric_oracles));
  if (wanted(7)) report(7, "invariant suite", guarded(invariant_suite));
  if (wanted(8)) report(8, "contrastive sanity", guarded([&] { return contrastive_sanity(ex, threads); }));
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
