#pragma once

#include <vector>

#include "units/ops.hpp"
#include "units/registry.hpp"
#include "units/rng.hpp"

namespace units {

/// Patch projection shared by all tasks: series patches <-> embedding vectors.
struct PatchEmbedding {
  Index k = 16;              // timesteps per token
  Index d = 64;              // embedding dim
  Index max_positions = 64;  // positional table length
  TensorPtr proj_w;          // (k, d)
  TensorPtr proj_b;          // (d)
  TensorPtr pos;             // (max_positions, d), learnable
  TensorPtr unpatch_w;       // (d, k)
  TensorPtr unpatch_b;       // (k)

  static PatchEmbedding create(ParameterRegistry& reg, const std::string& prefix, Index k, Index d,
                               Index max_positions, Rng& rng);
};

/// Per-source learnable tokens. Forecast tasks of one source share a set.
struct TokenSet {
  std::string sharing_key;
  TensorPtr prompt;  // (p, v, d); p may be 0 -> null tensor
  TensorPtr gen;     // (1, v, d)
  TensorPtr cls;     // (1, v, d)
  Index p = 0;
  Index v = 0;

  static TokenSet create(ParameterRegistry& reg, const std::string& key, Index p, Index v, Index d,
                         Rng& rng);
};

/// Token sequence with contiguous segment spans [prompt | sample | gen | cls].
struct SegmentedTokens {
  TensorPtr data;  // (L, v, d)
  Index p = 0, s = 0, f = 0, c = 0;

  Index length() const { return p + s + f + c; }
  Index vars() const { return data->shape[1]; }
  void check() const;

  TensorPtr prompt_rows() const;
  TensorPtr sample_rows() const;
  TensorPtr gen_rows() const;
  TensorPtr cls_row() const;
};

enum class MaskScheme { kRandom, kRight };

struct MaskPlan {
  MaskScheme scheme = MaskScheme::kRandom;
  std::vector<Index> indices;  // masked token indices within the sample segment
  double ratio = 0.0;
  double truncation = 1.0;  // fraction of the series kept before patching
};

/// x: (t, v) raw series -> (s, v, d) sample tokens, s = ceil(t/k), right
/// zero-padded when k does not divide t. No positional embeddings here; they
/// are added over the full assembled sequence by add_positions.
SegmentedTokens patchify(const TensorPtr& x, const PatchEmbedding& emb);

/// tokens: (f, v, d) -> (horizon, v) series; horizon defaults to f*k and may
/// be smaller to trim padding.
TensorPtr unpatchify(const TensorPtr& tokens, const PatchEmbedding& emb, Index horizon = -1);

SegmentedTokens assemble_forecast(const SegmentedTokens& sample, const TokenSet& ts, Index f);
SegmentedTokens assemble_classify(const SegmentedTokens& sample, const TokenSet& ts);
SegmentedTokens assemble_impute(const SegmentedTokens& sample, const TokenSet& ts,
                                const std::vector<Index>& missing_token_indices);
SegmentedTokens assemble_anomaly(const SegmentedTokens& sample, const TokenSet& ts);

/// Adds learnable positional embeddings by absolute position over the full
/// assembled sequence, shared across variables.
SegmentedTokens add_positions(const SegmentedTokens& st, const PatchEmbedding& emb);

MaskPlan plan_mask(Index s, MaskScheme scheme, Rng& rng);
/// Test hook: same as plan_mask with the ratio pinned.
MaskPlan plan_mask_with_ratio(Index s, MaskScheme scheme, double ratio, Rng& rng);

/// Replaces sample tokens at plan indices with the GEN token.
SegmentedTokens apply_mask(const SegmentedTokens& sample, const TokenSet& ts,
                           const MaskPlan& plan);

}  // namespace units
