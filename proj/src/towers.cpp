#include "units/towers.hpp"

#include <cmath>
#include <limits>

namespace units {

GenTower GenTower::create(ParameterRegistry& reg, const std::string& prefix, Index d,
                          Index dylinear_base, Rng& rng) {
  GenTower t;
  t.dyl = DyLinearOp::create(reg, prefix + ".dyl", dylinear_base, dylinear_base, rng);
  t.mlp_w1 = reg.add(prefix + ".mlp_w1", xavier_tensor(rng, {d, 2 * d}));
  t.mlp_b1 = reg.add(prefix + ".mlp_b1", Tensor::zeros({2 * d}));
  t.mlp_w2 = reg.add(prefix + ".mlp_w2", xavier_tensor(rng, {2 * d, d}));
  t.mlp_b2 = reg.add(prefix + ".mlp_b2", Tensor::zeros({d}));
  return t;
}

TensorPtr gen_tower_forward(const SegmentedTokens& z, const GenTower& tower,
                            const PatchEmbedding& emb, GenTarget target, Index horizon) {
  z.check();
  const Index L = z.length(), V = z.vars(), d = z.data->shape[2];
  auto h = add(z.data, dylinear(z.data, tower.dyl, L));
  auto flat = reshape(h, {L * V, d});
  auto mlp = linear(gelu(linear(flat, tower.mlp_w1, tower.mlp_b1)), tower.mlp_w2, tower.mlp_b2);
  auto res = reshape(add(flat, mlp), {L, V, d});
  SegmentedTokens refined = z;
  refined.data = res;
  TensorPtr rows;
  if (target == GenTarget::kGen) {
    if (z.f == 0) throw ContractError("gen tower asked for an empty gen segment");
    rows = refined.gen_rows();
  } else {
    if (z.s == 0) throw ContractError("gen tower asked for an empty sample segment");
    rows = refined.sample_rows();
  }
  return unpatchify(rows, emb, horizon);
}

ClsTower ClsTower::create(ParameterRegistry& reg, const std::string& prefix, Index d, Index heads,
                          Rng& rng) {
  ClsTower t;
  t.cross = AttentionWeights::create(reg, prefix + ".cross", d, heads, rng);
  t.mlp_w1 = reg.add(prefix + ".mlp_w1", xavier_tensor(rng, {d, 2 * d}));
  t.mlp_b1 = reg.add(prefix + ".mlp_b1", Tensor::zeros({2 * d}));
  t.mlp_w2 = reg.add(prefix + ".mlp_w2", xavier_tensor(rng, {2 * d, d}));
  t.mlp_b2 = reg.add(prefix + ".mlp_b2", Tensor::zeros({d}));
  return t;
}

TensorPtr cls_tower_forward(const SegmentedTokens& z_pred, const ClsTower& tower) {
  z_pred.check();
  if (z_pred.c == 0) throw ContractError("cls tower requires a cls segment");
  const Index L = z_pred.length(), V = z_pred.vars(), d = z_pred.data->shape[2];
  const Index h = tower.cross.heads, dh = d / h;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto query = z_pred.cls_row();  // (1, V, d)
  auto qf = linear(reshape(query, {V, d}), tower.cross.wq, tower.cross.bq);  // (V, d)
  auto flat = reshape(z_pred.data, {L * V, d});
  auto kf = reshape(linear(flat, tower.cross.wk, tower.cross.bk), {L, V, d});
  auto vf = reshape(linear(flat, tower.cross.wv, tower.cross.bv), {L, V, d});
  auto kp = permute(kf, {1, 0, 2});  // (V, L, d)
  auto vp = permute(vf, {1, 0, 2});
  std::vector<TensorPtr> per_var;
  per_var.reserve(static_cast<std::size_t>(V));
  for (Index vi = 0; vi < V; ++vi) {
    auto qrow = slice(qf, 0, vi, 1);                      // (1, d)
    auto kmat = reshape(slice(kp, 0, vi, 1), {L, d});     // (L, d)
    auto vmat = reshape(slice(vp, 0, vi, 1), {L, d});
    std::vector<TensorPtr> heads_out;
    heads_out.reserve(static_cast<std::size_t>(h));
    for (Index hi = 0; hi < h; ++hi) {
      auto qh = slice(qrow, 1, hi * dh, dh);
      auto kh = slice(kmat, 1, hi * dh, dh);
      auto vh = slice(vmat, 1, hi * dh, dh);
      auto attn = softmax(scale(matmul(qh, transpose(kh)), att_scale), 1);  // (1, L)
      heads_out.push_back(matmul(attn, vh));
    }
    per_var.push_back(h == 1 ? heads_out[0] : concat(heads_out, 1));  // (1, d)
  }
  auto stacked = V == 1 ? per_var[0] : concat(per_var, 0);  // (V, d)
  auto attended = linear(stacked, tower.cross.wo, tower.cross.bo);
  auto zc2 = add(reshape(query, {V, d}), attended);  // z_c''
  auto mlp = linear(gelu(linear(zc2, tower.mlp_w1, tower.mlp_b1)), tower.mlp_w2, tower.mlp_b2);
  return reshape(add(zc2, mlp), {1, V, d});
}

std::pair<Index, std::vector<double>> match_class(const TensorPtr& z_c,
                                                  const ClassEmbeddings& emb) {
  const Index n = emb.n_classes();
  const Index m = z_c->numel();
  if (emb.z_e->numel() != n * m) {
    throw DimensionError("class embeddings " + shape_str(emb.z_e->shape) + " vs cls token " +
                         shape_str(z_c->shape));
  }
  std::vector<double> dist(static_cast<std::size_t>(n));
  Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) {
    const double di = (emb.z_e->value.segment(i * m, m) - z_c->value).squaredNorm();
    dist[static_cast<std::size_t>(i)] = di;
    if (di < best_d) {
      best_d = di;
      best = i;
    }
  }
  return {best, dist};
}

TensorPtr class_logits(const TensorPtr& z_c, const ClassEmbeddings& emb) {
  const Index n = emb.n_classes();
  auto flat_c = reshape(z_c, {z_c->numel()});
  std::vector<TensorPtr> logits;
  logits.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto ei = reshape(slice(emb.z_e, 0, i, 1), {z_c->numel()});
    auto diff = sub(flat_c, ei);
    logits.push_back(scale(sum_all(mul(diff, diff)), -1.0));
  }
  return n == 1 ? logits[0] : concat(logits, 0);
}

ClassEmbeddings average_class_embeddings(
    const std::vector<std::pair<TensorPtr, Index>>& labeled_tokens, Index n_classes) {
  if (labeled_tokens.empty()) throw DataError("no cls tokens to average");
  const Index m = labeled_tokens.front().first->numel();
  const Shape token_shape = labeled_tokens.front().first->shape;
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n_classes, m);
  std::vector<Index> counts(static_cast<std::size_t>(n_classes), 0);
  for (const auto& [tok, label] : labeled_tokens) {
    if (label < 0 || label >= n_classes) throw DataError("label out of range");
    sums.row(label) += tok->value.transpose();
    ++counts[static_cast<std::size_t>(label)];
  }
  Eigen::VectorXd vals(n_classes * m);
  for (Index i = 0; i < n_classes; ++i) {
    if (counts[static_cast<std::size_t>(i)] == 0) {
      throw DataError("class " + std::to_string(i) + " has no samples to average");
    }
    vals.segment(i * m, m) =
        sums.row(i).transpose() / static_cast<double>(counts[static_cast<std::size_t>(i)]);
  }
  ClassEmbeddings out;
  // token shape is (1, v, d); embeddings are (n_classes, v, d).
  out.z_e = Tensor::create({n_classes, token_shape[1], token_shape[2]}, std::move(vals));
  out.mode = ClassEmbeddingMode::kAveraged;
  return out;
}

}  // namespace units
