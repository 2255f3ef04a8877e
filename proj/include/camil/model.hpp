#pragma once

// Context-aware MIL model: a Nystrom self-attention layer for slide-wide
// context, neighbour-constrained attention for local context, sigmoid-gated
// fusion of the two, gated attention pooling and a linear classifier.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "camil/autodiff.hpp"
#include "camil/tensor.hpp"
#include "camil/wsi_graph.hpp"

namespace camil {

enum class Variant { kCamil, kCamilL, kCamilG, kMeanPool, kMaxPool };

inline constexpr Variant kAllVariants[] = {Variant::kCamil, Variant::kCamilL, Variant::kCamilG,
                                           Variant::kMeanPool, Variant::kMaxPool};

/// CLI spelling: camil, camil-l, camil-g, mean, max.
std::string_view variant_name(Variant v);
/// Table spelling: CAMIL, CAMIL-L, CAMIL-G, MEAN-POOL, MAX-POOL.
std::string_view variant_label(Variant v);
std::optional<Variant> parse_variant(std::string_view s);

enum class LandmarkStrategy { kSegmentMeans, kRandom };

std::string_view landmark_strategy_name(LandmarkStrategy s);
std::optional<LandmarkStrategy> parse_landmark_strategy(std::string_view s);

struct NystromParams {
  ParamTensor wq, wk, wv;  // d x d
  std::size_t landmarks = 0;  // 0 selects min(n, 64)
  int pinv_iters = 20;
  LandmarkStrategy strategy = LandmarkStrategy::kSegmentMeans;
  std::uint64_t landmark_seed = 0;
};

struct NeighborAttentionParams {
  ParamTensor wq, wk, wv;  // d x d
};

struct GatedPoolParams {
  ParamTensor u;  // hdim x d, sigmoid gate branch
  ParamTensor v;  // hdim x d, tanh branch
  ParamTensor w;  // hdim x 1
};

struct ClassifierParams {
  ParamTensor wc;  // c x d
};

struct ModelParams {
  NystromParams nystrom;
  NeighborAttentionParams neighbor;
  GatedPoolParams gate;
  ClassifierParams classifier;
  std::uint64_t seed = 0;

  std::size_t d() const { return classifier.wc.value.cols(); }
  std::size_t hdim() const { return gate.u.value.rows(); }
  std::size_t classes() const { return classifier.wc.value.rows(); }

  /// Every learnable tensor in declaration order.
  std::vector<ParamTensor*> tensors();
  std::vector<const ParamTensor*> tensors() const;
  void zero_grad();
};

/// Xavier-uniform weights from a seeded generator; the pooling vector w is zero.
ModelParams init_params(std::size_t d, std::size_t hdim, std::size_t classes, std::uint64_t seed);

struct LandmarkSelection {
  Matrix landmarks;
  std::vector<std::string> warnings;
};

/// segment-means: means of contiguous segments of ceil(n/m) rows.
/// random: m distinct rows drawn from `rng`, kept in row order.
LandmarkSelection select_landmarks(const Matrix& x, std::size_t m, LandmarkStrategy strategy,
                                   std::mt19937_64& rng);

namespace detail {
struct Graph;
}

/// Every intermediate of one forward pass.
struct ForwardTrace {
  Variant variant = Variant::kCamil;
  Matrix t;                                 // n x d
  std::vector<SparseEntry> masked_scores;   // <Q t_i, K t_j> s_ij per stored edge
  std::vector<double> w;                    // neighbour attention, sums to 1
  Matrix l;                                 // n x d
  Matrix fused;                             // n x d
  std::vector<double> a;                    // pooling weights, sums to 1
  Matrix z;                                 // 1 x d
  Matrix logits;                            // 1 x c
  std::vector<std::string> warnings;

  std::shared_ptr<detail::Graph> graph;     // present when gradients were recorded
};

enum class ForwardMode { kInference, kTraining };

ForwardTrace forward(const FeatureBag& bag, const SimilarityMask& mask, const ModelParams& params,
                     Variant variant, ForwardMode mode = ForwardMode::kInference);

/// Gradients of the cross-entropy loss, one matrix per ModelParams::tensors()
/// entry. Parameters the variant does not use get exact zeros.
struct Gradients {
  double loss = 0.0;
  std::vector<Matrix> grads;
};

Gradients backward(ForwardTrace& trace, const FeatureBag& bag, const SimilarityMask& mask,
                   const ModelParams& params, int label);

/// Cross-entropy of a forward pass without recording gradients.
double loss(const FeatureBag& bag, const SimilarityMask& mask, const ModelParams& params,
            Variant variant, int label);

/// Pooling weights min-max scaled to [0, 1] per slide; constant weights map to 0.5.
std::vector<double> attention_scores(const ForwardTrace& trace, Variant variant);

/// softmax(logits)[1].
double positive_probability(const ForwardTrace& trace);

// ---- Building blocks, usable on their own ----------------------------------

Matrix nystrom_attention(const Matrix& h, const NystromParams& p, std::vector<std::string>* warnings = nullptr);
/// softmax(Q K^T / sqrt(d)) V with Q, K, V projected by p's matrices.
Matrix exact_attention(const Matrix& h, const NystromParams& p);

struct NeighborAttention {
  std::vector<double> w;
  Matrix l;
};
NeighborAttention neighbor_attention(const Matrix& t, const SimilarityMask& mask,
                                     const NeighborAttentionParams& p);

Matrix fuse(const Matrix& l, const Matrix& t);

struct Pooled {
  std::vector<double> a;
  Matrix z;
};
Pooled gated_pool(const Matrix& fused, const Matrix& t, const GatedPoolParams& p);

Matrix classify(const Matrix& z, const ClassifierParams& p);

// ---- Gradient verification -------------------------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
};

/// Compares backward() with Richardson-extrapolated central differences
/// (step h) for every tensor. `corrupt` perturbs the analytic gradient
/// (negative-control hook).
std::vector<GradCheckEntry> gradient_check(const FeatureBag& bag, const SimilarityMask& mask,
                                           ModelParams params, Variant variant, int label,
                                           double h = 1e-3, bool corrupt = false);

// ---- Checkpoints -----------------------------------------------------------

struct Checkpoint {
  ModelParams params;
  Variant variant = Variant::kCamil;
};

void save_model(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_model(const std::filesystem::path& path);

}  // namespace camil
