#include "units/tokenizer.hpp"

#include <algorithm>
#include <cmath>

namespace units {

PatchEmbedding PatchEmbedding::create(ParameterRegistry& reg, const std::string& prefix, Index k,
                                      Index d, Index max_positions, Rng& rng) {
  if (k < 1 || d < 1 || max_positions < 1) {
    throw ConfigError("patch embedding extents must be positive");
  }
  PatchEmbedding emb;
  emb.k = k;
  emb.d = d;
  emb.max_positions = max_positions;
  emb.proj_w = reg.add(prefix + ".proj_w", xavier_tensor(rng, {k, d}));
  emb.proj_b = reg.add(prefix + ".proj_b", Tensor::zeros({d}));
  emb.pos = reg.add(prefix + ".pos", randn_tensor(rng, {max_positions, d}, 0.02));
  emb.unpatch_w = reg.add(prefix + ".unpatch_w", xavier_tensor(rng, {d, k}));
  emb.unpatch_b = reg.add(prefix + ".unpatch_b", Tensor::zeros({k}));
  return emb;
}

TokenSet TokenSet::create(ParameterRegistry& reg, const std::string& key, Index p, Index v, Index d,
                          Rng& rng) {
  if (p < 0 || v < 1) throw ConfigError("token set needs p >= 0, v >= 1");
  TokenSet ts;
  ts.sharing_key = key;
  ts.p = p;
  ts.v = v;
  if (p > 0) ts.prompt = reg.add("tokens." + key + ".prompt", randn_tensor(rng, {p, v, d}, 0.02));
  ts.gen = reg.add("tokens." + key + ".gen", randn_tensor(rng, {1, v, d}, 0.02));
  ts.cls = reg.add("tokens." + key + ".cls", randn_tensor(rng, {1, v, d}, 0.02));
  return ts;
}

void SegmentedTokens::check() const {
  if (!data) throw ContractError("segmented tokens without data");
  if (data->rank() != 3) throw DimensionError("tokens must be (L,v,d), got " + shape_str(data->shape));
  if (p < 0 || s < 0 || f < 0 || c < 0 || c > 1) throw ContractError("invalid segment spans");
  if (length() != data->shape[0]) {
    throw ContractError("segment spans sum " + std::to_string(length()) + " vs L=" +
                        std::to_string(data->shape[0]));
  }
}

TensorPtr SegmentedTokens::prompt_rows() const {
  if (p == 0) throw ContractError("empty prompt segment");
  return slice(data, 0, 0, p);
}

TensorPtr SegmentedTokens::sample_rows() const {
  if (s == 0) throw ContractError("empty sample segment");
  return slice(data, 0, p, s);
}

TensorPtr SegmentedTokens::gen_rows() const {
  if (f == 0) throw ContractError("empty gen segment");
  return slice(data, 0, p + s, f);
}

TensorPtr SegmentedTokens::cls_row() const {
  if (c == 0) throw ContractError("missing cls segment");
  return slice(data, 0, p + s + f, 1);
}

SegmentedTokens patchify(const TensorPtr& x, const PatchEmbedding& emb) {
  if (x->rank() != 2) throw DimensionError("patchify input must be (t,v), got " + shape_str(x->shape));
  const Index t = x->shape[0], v = x->shape[1];
  if (t < 1) throw DataError("patchify on empty series");
  const Index s = (t + emb.k - 1) / emb.k;
  // Rearrangement of the raw (non-trainable) input into (s*v, k) patch rows,
  // right zero-padded.
  Eigen::VectorXd patches = Eigen::VectorXd::Zero(s * v * emb.k);
  for (Index i = 0; i < s; ++i) {
    for (Index vv = 0; vv < v; ++vv) {
      for (Index j = 0; j < emb.k; ++j) {
        const Index tt = i * emb.k + j;
        if (tt < t) patches[(i * v + vv) * emb.k + j] = x->value[tt * v + vv];
      }
    }
  }
  auto pmat = Tensor::create({s * v, emb.k}, std::move(patches));
  pmat->requires_grad = x->requires_grad;
  auto tokens = reshape(linear(pmat, emb.proj_w, emb.proj_b), {s, v, emb.d});
  SegmentedTokens st;
  st.data = tokens;
  st.s = s;
  return st;
}

TensorPtr unpatchify(const TensorPtr& tokens, const PatchEmbedding& emb, Index horizon) {
  if (tokens->rank() != 3) {
    throw DimensionError("unpatchify input must be (f,v,d), got " + shape_str(tokens->shape));
  }
  const Index f = tokens->shape[0], v = tokens->shape[1];
  if (horizon < 0) horizon = f * emb.k;
  if (horizon < 1 || horizon > f * emb.k) {
    throw DimensionError("unpatchify horizon " + std::to_string(horizon) + " vs capacity " +
                         std::to_string(f * emb.k));
  }
  auto flat = reshape(tokens, {f * v, emb.d});
  auto patches = linear(flat, emb.unpatch_w, emb.unpatch_b);  // (f*v, k)
  auto series = reshape(permute(reshape(patches, {f, v, emb.k}), {0, 2, 1}), {f * emb.k, v});
  if (horizon == f * emb.k) return series;
  return slice(series, 0, 0, horizon);
}

namespace {

SegmentedTokens assemble(const SegmentedTokens& sample, const TokenSet& ts,
                         const TensorPtr& gen_seg, Index f, const TensorPtr& cls_seg) {
  if (sample.vars() != ts.v) {
    throw DimensionError("sample has v=" + std::to_string(sample.vars()) + " but token set has v=" +
                         std::to_string(ts.v));
  }
  std::vector<TensorPtr> parts;
  if (ts.p > 0) parts.push_back(ts.prompt);
  parts.push_back(sample.data);
  if (gen_seg) parts.push_back(gen_seg);
  if (cls_seg) parts.push_back(cls_seg);
  SegmentedTokens out;
  out.data = parts.size() == 1 ? parts[0] : concat(parts, 0);
  out.p = ts.p;
  out.s = sample.s;
  out.f = f;
  out.c = cls_seg ? 1 : 0;
  out.check();
  return out;
}

}  // namespace

SegmentedTokens assemble_forecast(const SegmentedTokens& sample, const TokenSet& ts, Index f) {
  if (f < 1) throw ContractError("forecast assembly needs f >= 1");
  std::vector<TensorPtr> reps(static_cast<std::size_t>(f), ts.gen);
  auto gen_seg = f == 1 ? ts.gen : concat(reps, 0);
  return assemble(sample, ts, gen_seg, f, nullptr);
}

SegmentedTokens assemble_classify(const SegmentedTokens& sample, const TokenSet& ts) {
  return assemble(sample, ts, nullptr, 0, ts.cls);
}

SegmentedTokens assemble_impute(const SegmentedTokens& sample, const TokenSet& ts,
                                const std::vector<Index>& missing_token_indices) {
  for (Index i : missing_token_indices) {
    if (i < 0 || i >= sample.s) {
      throw ContractError("missing token index " + std::to_string(i) + " outside sample segment");
    }
  }
  MaskPlan plan;
  plan.indices = missing_token_indices;
  auto masked = apply_mask(sample, ts, plan);
  return assemble(masked, ts, nullptr, 0, nullptr);
}

SegmentedTokens assemble_anomaly(const SegmentedTokens& sample, const TokenSet& ts) {
  return assemble(sample, ts, nullptr, 0, nullptr);
}

SegmentedTokens add_positions(const SegmentedTokens& st, const PatchEmbedding& emb) {
  const Index L = st.length(), v = st.vars(), d = st.data->shape[2];
  if (L > emb.max_positions) {
    throw ConfigError("sequence length " + std::to_string(L) + " exceeds positional table " +
                      std::to_string(emb.max_positions));
  }
  auto pos_rows = reshape(slice(emb.pos, 0, 0, L), {L, 1, d});
  TensorPtr rep = pos_rows;
  if (v > 1) {
    std::vector<TensorPtr> copies(static_cast<std::size_t>(v), pos_rows);
    rep = concat(copies, 1);
  }
  SegmentedTokens out = st;
  out.data = add(st.data, rep);
  return out;
}

MaskPlan plan_mask(Index s, MaskScheme scheme, Rng& rng) {
  if (s < 2) throw ContractError("mask planning needs at least 2 sample tokens");
  const double ratio = rng.uniform(0.70, 0.80);
  MaskPlan plan = plan_mask_with_ratio(s, scheme, ratio, rng);
  plan.truncation = rng.uniform(0.5, 1.0);
  return plan;
}

MaskPlan plan_mask_with_ratio(Index s, MaskScheme scheme, double ratio, Rng& rng) {
  if (s < 2) throw ContractError("mask planning needs at least 2 sample tokens");
  MaskPlan plan;
  plan.scheme = scheme;
  plan.ratio = ratio;
  const Index count = static_cast<Index>(std::llround(ratio * static_cast<double>(s)));
  if (count == 0) return plan;
  if (scheme == MaskScheme::kRight) {
    for (Index i = s - count; i < s; ++i) plan.indices.push_back(i);
  } else {
    // Partial Fisher-Yates draw without replacement.
    std::vector<Index> pool(s);
    for (Index i = 0; i < s; ++i) pool[i] = i;
    for (Index i = 0; i < count; ++i) {
      const Index j = i + static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(s - i)));
      std::swap(pool[i], pool[j]);
    }
    plan.indices.assign(pool.begin(), pool.begin() + count);
    std::sort(plan.indices.begin(), plan.indices.end());
  }
  return plan;
}

SegmentedTokens apply_mask(const SegmentedTokens& sample, const TokenSet& ts,
                           const MaskPlan& plan) {
  if (plan.indices.empty()) return sample;
  const Index s = sample.s, v = sample.vars();
  Eigen::VectorXd keep = Eigen::VectorXd::Ones(s * v);
  Eigen::VectorXd drop = Eigen::VectorXd::Zero(s * v);
  for (Index i : plan.indices) {
    if (i < 0 || i >= s) throw ContractError("mask index outside sample segment");
    keep.segment(i * v, v).setZero();
    drop.segment(i * v, v).setOnes();
  }
  auto keep_t = Tensor::create({s, v, 1}, std::move(keep));
  auto drop_t = Tensor::create({s, v, 1}, std::move(drop));
  std::vector<TensorPtr> reps(static_cast<std::size_t>(s), ts.gen);
  auto gen_rep = s == 1 ? ts.gen : concat(reps, 0);
  SegmentedTokens out = sample;
  out.data = add(scale_last(sample.data, keep_t), scale_last(gen_rep, drop_t));
  return out;
}

}  // namespace units
