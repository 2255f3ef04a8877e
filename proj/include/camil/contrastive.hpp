#pragma once

// Contrastive pretraining of a small tile encoder: augmentations, the NT-Xent
// loss, a two-layer perceptron backbone with a projection head, and a
// renderer that turns latent tile features into pixel patches.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "camil/tensor.hpp"
#include "camil/wsi_graph.hpp"

namespace camil {

/// A square grayscale patch, one Matrix entry per pixel.
using Patch = Matrix;

// ---- Augmentations ----------------------------------------------------------

Patch rotate90(const Patch& p, int k);
/// Mirrors columns (left-right).
Patch reflect(const Patch& p);
/// Adds `delta` to every pixel.
Patch jitter(const Patch& p, double delta);
/// Crops the centred (scale * size) square and resizes it back bilinearly.
Patch zoom_crop(const Patch& p, double scale);

enum class Augmentation { kJitter, kZoom, kRotate, kReflect };

struct AugmentConfig {
  double jitter = 0.4;      // |delta| bound
  double min_zoom = 0.6;    // crop scale drawn from [min_zoom, 1)
};

/// Two distinct augmentations with seeded parameters, applied in a seeded order.
Patch augment(const Patch& p, std::uint64_t seed, const AugmentConfig& cfg = {});

// ---- Loss ------------------------------------------------------------------

struct ContrastiveBatch {
  Matrix embeddings;  // 2B x e; rows 2k and 2k+1 are two views of one tile
  double tau = 0.5;
};

struct NtXent {
  double loss = 0.0;
  Matrix grad;  // d loss / d embeddings, before row normalisation
};

/// Mean over all 2B ordered positive pairs of
/// -log exp(sim_ij / tau) / sum_{k != i} exp(sim_ik / tau), sim = cosine.
NtXent nt_xent(const ContrastiveBatch& batch);

// ---- Encoder ---------------------------------------------------------------

struct EncoderParams {
  ParamTensor w1, b1;  // hidden x pixels, 1 x hidden
  ParamTensor w2, b2;  // e x hidden, 1 x e
  ParamTensor wp, bp;  // e_proj x e, 1 x e_proj

  std::size_t pixels() const { return w1.value.cols(); }
  std::size_t hidden() const { return w1.value.rows(); }
  std::size_t dim() const { return w2.value.rows(); }
  std::size_t proj_dim() const { return wp.value.rows(); }

  std::vector<ParamTensor*> tensors();
  std::vector<const ParamTensor*> tensors() const;
};

/// Xavier-uniform weights, zero biases. e_proj = 0 selects max(1, e / 2).
EncoderParams init_encoder(std::size_t pixels, std::size_t hidden, std::size_t e, std::uint64_t seed,
                           std::size_t e_proj = 0);

/// Backbone output tanh(x W1^T + b1) W2^T + b2, one row per patch. No
/// augmentation and no projection head.
Matrix encode(const std::vector<Patch>& tiles, const EncoderParams& params);

struct PretrainConfig {
  int epochs = 30;
  std::size_t batch_size = 32;  // tiles per batch; each contributes two views
  double lr = 1e-3;
  double tau = 0.5;
  std::uint64_t seed = 7;
  AugmentConfig augment;
};

struct PretrainResult {
  EncoderParams params;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

PretrainResult pretrain_encoder(const std::vector<Patch>& tiles, EncoderParams params, const PretrainConfig& cfg);

void save_encoder(const EncoderParams& params, const std::filesystem::path& path);
EncoderParams load_encoder(const std::filesystem::path& path);

// ---- Rendering -------------------------------------------------------------

struct RenderConfig {
  int patch_size = 8;
  double contrast = 1.0;         // gain on the latent patterns
  double brightness_sigma = 0.5; // per-tile additive nuisance
  double pixel_noise = 0.05;
  std::uint64_t seed = 7;
};

/// Fixed per-dataset pixel patterns, one per latent dimension, each invariant
/// under 90 degree rotations and reflections and scaled to unit norm.
std::vector<Patch> render_basis(std::size_t d, const RenderConfig& cfg);

/// Tile i becomes 0.5 + contrast * sum_k h_ik B_k + brightness + noise.
std::vector<Patch> render_tiles(const FeatureBag& bag, const std::vector<Patch>& basis, const RenderConfig& cfg,
                                std::uint64_t seed);

/// Copy of `bag` whose features are replaced by encoded rendered tiles.
FeatureBag encode_bag(const FeatureBag& bag, const std::vector<Patch>& tiles, const EncoderParams& params);

}  // namespace camil
