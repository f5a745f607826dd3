#pragma once

#include <vector>

#include "units/tokenizer.hpp"

namespace units {

/// Token-mixing linear map whose weight is bilinearly resized at call time to
/// match the requested input/output lengths.
struct DyLinearOp {
  TensorPtr w;  // (w_out, w_in)
  TensorPtr b;  // (w_out)

  static DyLinearOp create(ParameterRegistry& reg, const std::string& prefix, Index w_out,
                           Index w_in, Rng& rng);
};

/// z: (l_in, ...) -> (l_out, ...); the same mixing map for every trailing
/// element, gradients flow to w through the interpolation.
TensorPtr dylinear(const TensorPtr& z, const DyLinearOp& op, Index l_out);

struct AttentionWeights {
  Index heads = 4;
  TensorPtr wq, wk, wv, wo;  // (d, d)
  TensorPtr bq, bk, bv, bo;  // (d)

  static AttentionWeights create(ParameterRegistry& reg, const std::string& prefix, Index d,
                                 Index heads, Rng& rng);
};

/// Standard MHSA along the token axis, independently per variable.
TensorPtr time_mhsa(const TensorPtr& z, const AttentionWeights& aw);

/// Attention across variables with Q,K mean-pooled over the token axis; the
/// v x v map is shared by all positions.
TensorPtr variable_mhsa(const TensorPtr& z, const AttentionWeights& aw);

struct GateWeights {
  TensorPtr w;  // (d, 1)
  TensorPtr b;  // (1)

  static GateWeights create(ParameterRegistry& reg, const std::string& prefix, Index d);
};

/// Per-token scalar sigmoid rescaling.
TensorPtr gate(const TensorPtr& z, const GateWeights& gw);

struct DynamicFfn {
  TensorPtr conv_w;  // (3, d, d)
  TensorPtr conv_b;  // (d)
  DyLinearOp dyl_prompt;
  DyLinearOp dyl_sample;
  TensorPtr out_w;  // (d, d), zero-initialized
  TensorPtr out_b;  // (d)

  static DynamicFfn create(ParameterRegistry& reg, const std::string& prefix, Index d,
                           Index dylinear_base, Rng& rng);
};

/// Conv over time, channel split, length-preserving DyLinear on the first
/// half (prompt span and sample+gen span routed to separate operators, cls
/// row passed through), output linear.
SegmentedTokens dynamic_ffn(const SegmentedTokens& z, const DynamicFfn& ffn);

struct LayerNormWeights {
  TensorPtr gain;  // (d)
  TensorPtr bias;  // (d)

  static LayerNormWeights create(ParameterRegistry& reg, const std::string& prefix, Index d);
};

struct UniTSBlock {
  LayerNormWeights ln1, ln2;
  AttentionWeights time_attn, var_attn;
  GateWeights gate_time, gate_var, gate_ffn;
  DynamicFfn ffn;

  static UniTSBlock create(ParameterRegistry& reg, const std::string& prefix, Index d, Index heads,
                           Index dylinear_base, Rng& rng);
};

/// Pre-norm residual composition; spans preserved.
SegmentedTokens block_forward(const SegmentedTokens& z, const UniTSBlock& block);

struct Backbone {
  std::vector<UniTSBlock> blocks;

  static Backbone create(ParameterRegistry& reg, Index n_blocks, Index d, Index heads,
                         Index dylinear_base, Rng& rng);
};

SegmentedTokens backbone_forward(const SegmentedTokens& z, const Backbone& bb);

}  // namespace units
