#include "units/blocks.hpp"

#include <cmath>

namespace units {

DyLinearOp DyLinearOp::create(ParameterRegistry& reg, const std::string& prefix, Index w_out,
                              Index w_in, Rng& rng) {
  DyLinearOp op;
  op.w = reg.add(prefix + ".w", xavier_tensor(rng, {w_out, w_in}));
  op.b = reg.add(prefix + ".b", Tensor::zeros({w_out}));
  return op;
}

TensorPtr dylinear(const TensorPtr& z, const DyLinearOp& op, Index l_out) {
  if (z->rank() < 2) throw DimensionError("dylinear input must have rank >= 2");
  const Index l_in = z->shape[0];
  if (l_in < 1 || l_out < 1) throw DimensionError("dylinear lengths must be >= 1");
  auto w_interp = bilinear_resize(op.w, l_out, l_in);
  auto flat = reshape(z, {l_in, z->numel() / l_in});
  auto mixed = matmul(w_interp, flat);
  auto b_col = bilinear_resize(reshape(op.b, {op.b->numel(), 1}), l_out, 1);
  mixed = add_row_const(mixed, reshape(b_col, {l_out}));
  Shape out_shape = z->shape;
  out_shape[0] = l_out;
  return reshape(mixed, out_shape);
}

AttentionWeights AttentionWeights::create(ParameterRegistry& reg, const std::string& prefix,
                                          Index d, Index heads, Rng& rng) {
  if (d % heads != 0) {
    throw ConfigError("embedding dim " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  AttentionWeights aw;
  aw.heads = heads;
  aw.wq = reg.add(prefix + ".wq", xavier_tensor(rng, {d, d}));
  aw.bq = reg.add(prefix + ".bq", Tensor::zeros({d}));
  aw.wk = reg.add(prefix + ".wk", xavier_tensor(rng, {d, d}));
  aw.bk = reg.add(prefix + ".bk", Tensor::zeros({d}));
  aw.wv = reg.add(prefix + ".wv", xavier_tensor(rng, {d, d}));
  aw.bv = reg.add(prefix + ".bv", Tensor::zeros({d}));
  aw.wo = reg.add(prefix + ".wo", Tensor::zeros({d, d}));  // identity-leaning start
  aw.bo = reg.add(prefix + ".bo", Tensor::zeros({d}));
  return aw;
}

namespace {

struct Qkv {
  TensorPtr q, k, v;  // each (L, v, d)
};

Qkv project_qkv(const TensorPtr& z, const AttentionWeights& aw) {
  const Index L = z->shape[0], V = z->shape[1], d = z->shape[2];
  auto flat = reshape(z, {L * V, d});
  Qkv out;
  out.q = reshape(linear(flat, aw.wq, aw.bq), {L, V, d});
  out.k = reshape(linear(flat, aw.wk, aw.bk), {L, V, d});
  out.v = reshape(linear(flat, aw.wv, aw.bv), {L, V, d});
  return out;
}

}  // namespace

TensorPtr time_mhsa(const TensorPtr& z, const AttentionWeights& aw) {
  const Index L = z->shape[0], V = z->shape[1], d = z->shape[2];
  const Index h = aw.heads, dh = d / h;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Qkv qkv = project_qkv(z, aw);
  // (v, L, d) so per-variable blocks are contiguous.
  auto qv = permute(qkv.q, {1, 0, 2});
  auto kv = permute(qkv.k, {1, 0, 2});
  auto vv = permute(qkv.v, {1, 0, 2});
  std::vector<TensorPtr> per_var;
  per_var.reserve(static_cast<std::size_t>(V));
  for (Index vi = 0; vi < V; ++vi) {
    auto qm = reshape(slice(qv, 0, vi, 1), {L, d});
    auto km = reshape(slice(kv, 0, vi, 1), {L, d});
    auto vm = reshape(slice(vv, 0, vi, 1), {L, d});
    std::vector<TensorPtr> heads_out;
    heads_out.reserve(static_cast<std::size_t>(h));
    for (Index hi = 0; hi < h; ++hi) {
      auto qh = slice(qm, 1, hi * dh, dh);
      auto kh = slice(km, 1, hi * dh, dh);
      auto vh = slice(vm, 1, hi * dh, dh);
      auto attn = softmax(scale(matmul(qh, transpose(kh)), att_scale), 1);
      heads_out.push_back(matmul(attn, vh));
    }
    auto merged = h == 1 ? heads_out[0] : concat(heads_out, 1);  // (L, d)
    per_var.push_back(reshape(merged, {L, 1, d}));
  }
  auto stacked = V == 1 ? per_var[0] : concat(per_var, 1);  // (L, V, d)
  auto out = linear(reshape(stacked, {L * V, d}), aw.wo, aw.bo);
  return reshape(out, {L, V, d});
}

TensorPtr variable_mhsa(const TensorPtr& z, const AttentionWeights& aw) {
  const Index L = z->shape[0], V = z->shape[1], d = z->shape[2];
  const Index h = aw.heads, dh = d / h;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Qkv qkv = project_qkv(z, aw);
  auto q_pooled = mean_axis(qkv.q, 0);  // (V, d)
  auto k_pooled = mean_axis(qkv.k, 0);
  auto v_perm = permute(qkv.v, {1, 0, 2});  // (V, L, d)
  std::vector<TensorPtr> heads_out;
  heads_out.reserve(static_cast<std::size_t>(h));
  for (Index hi = 0; hi < h; ++hi) {
    auto qh = slice(q_pooled, 1, hi * dh, dh);
    auto kh = slice(k_pooled, 1, hi * dh, dh);
    auto attn = softmax(scale(matmul(qh, transpose(kh)), att_scale), 1);  // (V, V)
    auto vh = reshape(slice(v_perm, 2, hi * dh, dh), {V, L * dh});
    heads_out.push_back(reshape(matmul(attn, vh), {V, L, dh}));
  }
  auto merged = h == 1 ? heads_out[0] : concat(heads_out, 2);  // (V, L, d)
  auto out = linear(reshape(permute(merged, {1, 0, 2}), {L * V, d}), aw.wo, aw.bo);
  return reshape(out, {L, V, d});
}

GateWeights GateWeights::create(ParameterRegistry& reg, const std::string& prefix, Index d) {
  GateWeights gw;
  gw.w = reg.add(prefix + ".w", Tensor::zeros({d, 1}));
  gw.b = reg.add(prefix + ".b", Tensor::zeros({1}));
  return gw;
}

TensorPtr gate(const TensorPtr& z, const GateWeights& gw) {
  const Index L = z->shape[0], V = z->shape[1], d = z->shape[2];
  auto xg = sigmoid(linear(reshape(z, {L * V, d}), gw.w, gw.b));
  return scale_last(z, reshape(xg, {L, V, 1}));
}

DynamicFfn DynamicFfn::create(ParameterRegistry& reg, const std::string& prefix, Index d,
                              Index dylinear_base, Rng& rng) {
  if (d % 2 != 0) throw ConfigError("dynamic FFN requires even embedding dim");
  DynamicFfn ffn;
  ffn.conv_w = reg.add(prefix + ".conv_w", xavier_tensor(rng, {3, d, d}));
  ffn.conv_b = reg.add(prefix + ".conv_b", Tensor::zeros({d}));
  ffn.dyl_prompt = DyLinearOp::create(reg, prefix + ".dyl_prompt", dylinear_base, dylinear_base, rng);
  ffn.dyl_sample = DyLinearOp::create(reg, prefix + ".dyl_sample", dylinear_base, dylinear_base, rng);
  ffn.out_w = reg.add(prefix + ".out_w", Tensor::zeros({d, d}));  // identity-leaning start
  ffn.out_b = reg.add(prefix + ".out_b", Tensor::zeros({d}));
  return ffn;
}

SegmentedTokens dynamic_ffn(const SegmentedTokens& z, const DynamicFfn& ffn) {
  z.check();
  const Index L = z.length(), V = z.vars(), d = z.data->shape[2];
  if (d % 2 != 0) throw ConfigError("dynamic FFN requires even embedding dim");
  auto mid = conv1d_k3(z.data, ffn.conv_w, ffn.conv_b);
  auto halves = split(mid, 2, {d / 2, d / 2});
  // Route one: length-preserving DyLinear per segment, cls row skipped.
  std::vector<TensorPtr> route1;
  if (z.p > 0) route1.push_back(dylinear(slice(halves[0], 0, 0, z.p), ffn.dyl_prompt, z.p));
  const Index sg = z.s + z.f;
  if (sg > 0) route1.push_back(dylinear(slice(halves[0], 0, z.p, sg), ffn.dyl_sample, sg));
  if (z.c > 0) route1.push_back(slice(halves[0], 0, z.p + sg, 1));
  auto mixed = route1.size() == 1 ? route1[0] : concat(route1, 0);
  auto joined = concat({mixed, halves[1]}, 2);
  auto out = linear(reshape(joined, {L * V, d}), ffn.out_w, ffn.out_b);
  SegmentedTokens res = z;
  res.data = reshape(out, {L, V, d});
  return res;
}

LayerNormWeights LayerNormWeights::create(ParameterRegistry& reg, const std::string& prefix,
                                          Index d) {
  LayerNormWeights ln;
  ln.gain = reg.add(prefix + ".gain", Tensor::full({d}, 1.0));
  ln.bias = reg.add(prefix + ".bias", Tensor::zeros({d}));
  return ln;
}

UniTSBlock UniTSBlock::create(ParameterRegistry& reg, const std::string& prefix, Index d,
                              Index heads, Index dylinear_base, Rng& rng) {
  UniTSBlock b;
  b.ln1 = LayerNormWeights::create(reg, prefix + ".ln1", d);
  b.ln2 = LayerNormWeights::create(reg, prefix + ".ln2", d);
  b.time_attn = AttentionWeights::create(reg, prefix + ".time_attn", d, heads, rng);
  b.var_attn = AttentionWeights::create(reg, prefix + ".var_attn", d, heads, rng);
  b.gate_time = GateWeights::create(reg, prefix + ".gate_time", d);
  b.gate_var = GateWeights::create(reg, prefix + ".gate_var", d);
  b.gate_ffn = GateWeights::create(reg, prefix + ".gate_ffn", d);
  b.ffn = DynamicFfn::create(reg, prefix + ".ffn", d, dylinear_base, rng);
  return b;
}

SegmentedTokens block_forward(const SegmentedTokens& z, const UniTSBlock& block) {
  z.check();
  SegmentedTokens cur = z;
  auto h1 = layer_norm(cur.data, block.ln1.gain, block.ln1.bias);
  cur.data = add(cur.data, gate(time_mhsa(h1, block.time_attn), block.gate_time));
  cur.data = add(cur.data, gate(variable_mhsa(cur.data, block.var_attn), block.gate_var));
  SegmentedTokens normed = cur;
  normed.data = layer_norm(cur.data, block.ln2.gain, block.ln2.bias);
  cur.data = add(cur.data, gate(dynamic_ffn(normed, block.ffn).data, block.gate_ffn));
  return cur;
}

Backbone Backbone::create(ParameterRegistry& reg, Index n_blocks, Index d, Index heads,
                          Index dylinear_base, Rng& rng) {
  Backbone bb;
  for (Index i = 0; i < n_blocks; ++i) {
    bb.blocks.push_back(
        UniTSBlock::create(reg, "backbone.block" + std::to_string(i), d, heads, dylinear_base, rng));
  }
  return bb;
}

SegmentedTokens backbone_forward(const SegmentedTokens& z, const Backbone& bb) {
  SegmentedTokens cur = z;
  for (const auto& b : bb.blocks) cur = block_forward(cur, b);
  return cur;
}

}  // namespace units
