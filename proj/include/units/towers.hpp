#pragma once

#include <utility>
#include <vector>

#include "units/blocks.hpp"

namespace units {

enum class GenTarget { kGen, kSample };

/// Shared generative head: length-preserving DyLinear, residual MLP, then the
/// target segment rows are unpatchified into a series.
struct GenTower {
  DyLinearOp dyl;
  TensorPtr mlp_w1, mlp_b1;  // (d, 2d), (2d)
  TensorPtr mlp_w2, mlp_b2;  // (2d, d), (d)

  static GenTower create(ParameterRegistry& reg, const std::string& prefix, Index d,
                         Index dylinear_base, Rng& rng);
};

/// horizon: output timesteps (trims right padding); defaults to rows*k.
TensorPtr gen_tower_forward(const SegmentedTokens& z, const GenTower& tower,
                            const PatchEmbedding& emb, GenTarget target, Index horizon = -1);

/// Shared predictive head: cls token queries the full sequence by
/// cross-attention, then a residual MLP.
struct ClsTower {
  AttentionWeights cross;
  TensorPtr mlp_w1, mlp_b1;
  TensorPtr mlp_w2, mlp_b2;

  static ClsTower create(ParameterRegistry& reg, const std::string& prefix, Index d, Index heads,
                         Rng& rng);
};

/// Returns the processed cls token (1, v, d).
TensorPtr cls_tower_forward(const SegmentedTokens& z_pred, const ClsTower& tower);

enum class ClassEmbeddingMode { kTrained, kAveraged };

struct ClassEmbeddings {
  TensorPtr z_e;  // (n_classes, v, d)
  ClassEmbeddingMode mode = ClassEmbeddingMode::kTrained;

  Index n_classes() const { return z_e->shape[0]; }
};

/// Argmin over squared Euclidean distance summed over (v, d); ties toward the
/// lowest index. Also returns the per-class distances.
std::pair<Index, std::vector<double>> match_class(const TensorPtr& z_c,
                                                  const ClassEmbeddings& emb);

/// Differentiable logits for training: logits[i] = -||z_c - z_e[i]||^2.
TensorPtr class_logits(const TensorPtr& z_c, const ClassEmbeddings& emb);

/// Per-class arithmetic mean of cls tokens; every class needs >= 1 sample.
ClassEmbeddings average_class_embeddings(
    const std::vector<std::pair<TensorPtr, Index>>& labeled_tokens, Index n_classes);

}  // namespace units
