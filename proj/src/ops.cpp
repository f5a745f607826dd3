#include "units/ops.hpp"

#include <algorithm>
#include <cmath>

namespace units {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void check_finite(const TensorPtr& t) {
#ifndef NDEBUG
  if (!t->value.allFinite()) {
    throw StateError("non-finite values in forward result of shape " + shape_str(t->shape));
  }
#else
  (void)t;
#endif
}

Index axis_outer(const Shape& s, Index axis) {
  Index o = 1;
  for (Index i = 0; i < axis; ++i) o *= s[i];
  return o;
}

Index axis_inner(const Shape& s, Index axis) {
  Index in = 1;
  for (Index i = axis + 1; i < static_cast<Index>(s.size()); ++i) in *= s[i];
  return in;
}

void require_axis(const TensorPtr& a, Index axis) {
  if (axis < 0 || axis >= a->rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(a->shape));
  }
}

TensorPtr make_out(Shape s, Eigen::VectorXd v) {
  auto out = Tensor::create(std::move(s), std::move(v));
  check_finite(out);
  return out;
}

bool want_tape(std::initializer_list<const TensorPtr*> ins) {
  if (!Tape::active()) return false;
  for (const TensorPtr* p : ins) {
    if ((*p)->requires_grad) return true;
  }
  return false;
}

// Coordinate mapping for corner-aligned bilinear interpolation.
struct LerpIndex {
  Index lo, hi;
  double w_hi;  // weight on hi; (1 - w_hi) on lo
};

LerpIndex lerp_index(Index i, Index n_out, Index n_in) {
  if (n_in == 1) return {0, 0, 0.0};
  double pos = (n_out == 1) ? 0.5 * static_cast<double>(n_in - 1)
                            : static_cast<double>(i) * static_cast<double>(n_in - 1) /
                                  static_cast<double>(n_out - 1);
  Index lo = static_cast<Index>(std::floor(pos));
  if (lo >= n_in - 1) lo = n_in - 2;
  return {lo, lo + 1, pos - static_cast<double>(lo)};
}

TensorPtr elementwise_binary(const TensorPtr& a, const TensorPtr& b, const char* name,
                             Eigen::VectorXd vals,
                             std::function<void(const TensorPtr&, const TensorPtr&,
                                                const TensorPtr&)> record) {
  if (a->shape != b->shape) {
    throw DimensionError(std::string(name) + ": " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
  }
  auto out = make_out(a->shape, std::move(vals));
  if (want_tape({&a, &b})) {
    out->requires_grad = true;
    record(a, b, out);
  }
  return out;
}

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  return elementwise_binary(a, b, "add", a->value + b->value,
                            [](const TensorPtr& a, const TensorPtr& b, const TensorPtr& out) {
                              Tape::active()->record([a, b, out] {
                                if (!out->has_grad()) return;
                                if (a->requires_grad) a->accum_grad(out->grad);
                                if (b->requires_grad) b->accum_grad(out->grad);
                              });
                            });
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  return elementwise_binary(a, b, "sub", a->value - b->value,
                            [](const TensorPtr& a, const TensorPtr& b, const TensorPtr& out) {
                              Tape::active()->record([a, b, out] {
                                if (!out->has_grad()) return;
                                if (a->requires_grad) a->accum_grad(out->grad);
                                if (b->requires_grad) b->accum_grad(-out->grad);
                              });
                            });
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  return elementwise_binary(
      a, b, "mul", a->value.cwiseProduct(b->value),
      [](const TensorPtr& a, const TensorPtr& b, const TensorPtr& out) {
        Tape::active()->record([a, b, out] {
          if (!out->has_grad()) return;
          if (a->requires_grad) a->accum_grad(out->grad.cwiseProduct(b->value));
          if (b->requires_grad) b->accum_grad(out->grad.cwiseProduct(a->value));
        });
      });
}

TensorPtr scale(const TensorPtr& a, double c) {
  auto out = make_out(a->shape, a->value * c);
  if (want_tape({&a})) {
    out->requires_grad = true;
    Tape::active()->record([a, out, c] {
      if (out->has_grad()) a->accum_grad(out->grad * c);
    });
  }
  return out;
}

TensorPtr sigmoid(const TensorPtr& a) {
  Eigen::VectorXd y = a->value.unaryExpr([](double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  auto out = make_out(a->shape, std::move(y));
  if (want_tape({&a})) {
    out->requires_grad = true;
    Tape::active()->record([a, out] {
      if (!out->has_grad()) return;
      Eigen::VectorXd d = out->value.cwiseProduct(Eigen::VectorXd::Ones(out->numel()) - out->value);
      a->accum_grad(out->grad.cwiseProduct(d));
    });
  }
  return out;
}

TensorPtr gelu(const TensorPtr& a) {
  Eigen::VectorXd y = a->value.unaryExpr(
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); });
  auto out = make_out(a->shape, std::move(y));
  if (want_tape({&a})) {
    out->requires_grad = true;
    Tape::active()->record([a, out] {
      if (!out->has_grad()) return;
      Eigen::VectorXd d = a->value.unaryExpr([](double x) {
        const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        return cdf + x * pdf;
      });
      a->accum_grad(out->grad.cwiseProduct(d));
    });
  }
  return out;
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2 || a->shape[1] != b->shape[0]) {
    throw DimensionError("matmul: " + shape_str(a->shape) + " x " + shape_str(b->shape));
  }
  const Index m = a->shape[0], n = a->shape[1], p = b->shape[1];
  Eigen::VectorXd vals(m * p);
  MapMat(vals.data(), m, p) = a->mat() * b->mat();
  auto out = make_out({m, p}, std::move(vals));
  if (want_tape({&a, &b})) {
    out->requires_grad = true;
    Tape::active()->record([a, b, out, m, n, p] {
      if (!out->has_grad()) return;
      CMapMat g(out->grad.data(), m, p);
      if (a->requires_grad) {
        Eigen::VectorXd ga(m * n);
        MapMat(ga.data(), m, n) = g * b->mat().transpose();
        a->accum_grad(ga);
      }
      if (b->requires_grad) {
        Eigen::VectorXd gb(n * p);
        MapMat(gb.data(), n, p) = a->mat().transpose() * g;
        b->accum_grad(gb);
      }
    });
  }
  return out;
}

TensorPtr transpose(const TensorPtr& a) {
  if (a->rank() != 2) throw DimensionError("transpose: rank-2 required, got " + shape_str(a->shape));
  return permute(a, {1, 0});
}

TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  return add_bias(matmul(x, w), b);
}

TensorPtr reshape(const TensorPtr& a, Shape s) {
  if (shape_numel(s) != a->numel()) {
    throw DimensionError("reshape " + shape_str(a->shape) + " -> " + shape_str(s));
  }
  auto out = make_out(std::move(s), a->value);
  if (want_tape({&a})) {
    out->requires_grad = true;
    Tape::active()->record([a, out] {
      if (out->has_grad()) a->accum_grad(out->grad);
    });
  }
  return out;
}

namespace {

Eigen::VectorXd permute_values(const Eigen::VectorXd& v, const Shape& in_shape,
                               const std::vector<Index>& perm) {
  const Index r = static_cast<Index>(in_shape.size());
  Shape out_shape(r);
  for (Index i = 0; i < r; ++i) out_shape[i] = in_shape[perm[i]];
  std::vector<Index> in_strides(r, 1), out_strides(r, 1);
  for (Index i = r - 2; i >= 0; --i) {
    in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
  }
  Eigen::VectorXd out(v.size());
  std::vector<Index> idx(r, 0);
  for (Index flat = 0; flat < v.size(); ++flat) {
    Index src = 0;
    for (Index i = 0; i < r; ++i) src += idx[i] * in_strides[perm[i]];
    out[flat] = v[src];
    for (Index i = r - 1; i >= 0; --i) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}

}  // namespace

TensorPtr permute(const TensorPtr& a, const std::vector<Index>& perm) {
  const Index r = a->rank();
  if (static_cast<Index>(perm.size()) != r) {
    throw DimensionError("permute: perm size vs rank of " + shape_str(a->shape));
  }
  Shape out_shape(r);
  for (Index i = 0; i < r; ++i) out_shape[i] = a->shape[perm[i]];
  auto out = make_out(out_shape, permute_values(a->value, a->shape, perm));
  if (want_tape({&a})) {
    out->requires_grad = true;
    std::vector<Index> inv(perm.size());
    for (Index i = 0; i < r; ++i) inv[perm[i]] = i;
    Shape oshape = out->shape;
    Tape::active()->record([a, out, inv, oshape] {
      if (out->has_grad()) a->accum_grad(permute_values(out->grad, oshape, inv));
    });
  }
  return out;
}

TensorPtr concat(const std::vector<TensorPtr>& parts, Index axis) {
  if (parts.empty()) throw DimensionError("concat: empty part list");
  require_axis(parts[0], axis);
  Shape s = parts[0]->shape;
  Index total = 0;
  for (const auto& p : parts) {
    if (p->rank() != parts[0]->rank()) throw DimensionError("concat: rank mismatch");
    for (Index i = 0; i < p->rank(); ++i) {
      if (i != axis && p->shape[i] != s[i]) {
        throw DimensionError("concat: " + shape_str(p->shape) + " vs " + shape_str(s));
      }
    }
    total += p->shape[axis];
  }
  s[axis] = total;
  const Index outer = axis_outer(s, axis), inner = axis_inner(s, axis);
  Eigen::VectorXd vals(shape_numel(s));
  for (Index o = 0; o < outer; ++o) {
    Index off = o * total * inner;
    for (const auto& p : parts) {
      const Index blk = p->shape[axis] * inner;
      vals.segment(off, blk) = p->value.segment(o * blk, blk);
      off += blk;
    }
  }
  auto out = make_out(s, std::move(vals));
  bool any = false;
  for (const auto& p : parts) any = any || p->requires_grad;
  if (Tape::active() && any) {
    out->requires_grad = true;
    std::vector<TensorPtr> held = parts;
    Tape::active()->record([held, out, outer, inner, total] {
      if (!out->has_grad()) return;
      Index part_off = 0;
      for (const auto& p : held) {
        const Index pa = p->numel() / (outer * inner);
        if (p->requires_grad) {
          Eigen::VectorXd gp(p->numel());
          for (Index o = 0; o < outer; ++o) {
            gp.segment(o * pa * inner, pa * inner) =
                out->grad.segment(o * total * inner + part_off * inner, pa * inner);
          }
          p->accum_grad(gp);
        }
        part_off += pa;
      }
    });
  }
  return out;
}

TensorPtr slice(const TensorPtr& a, Index axis, Index start, Index len) {
  require_axis(a, axis);
  if (start < 0 || len < 1 || start + len > a->shape[axis]) {
    throw DimensionError("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") on axis " + std::to_string(axis) + " of " + shape_str(a->shape));
  }
  const Index outer = axis_outer(a->shape, axis), inner = axis_inner(a->shape, axis);
  const Index n = a->shape[axis];
  Shape s = a->shape;
  s[axis] = len;
  Eigen::VectorXd vals(shape_numel(s));
  for (Index o = 0; o < outer; ++o) {
    vals.segment(o * len * inner, len * inner) =
        a->value.segment((o * n + start) * inner, len * inner);
  }
  auto out = make_out(s, std::move(vals));
  if (want_tape({&a})) {
    out->requires_grad = true;
    Tape::active()->record([a, out, outer, inner, n, start, len] {
      if (!out->has_grad()) return;
      Eigen::VectorXd ga = Eigen::VectorXd::Zero(a->numel());
      for (Index o = 0; o < outer; ++o) {
        ga.segment((o * n + start) * inner, len * inner) =
            out->grad.segment(o * len * inner, len * inner);
      }
      a->accum_grad(ga);
    });
  }
  return out;
}

std::vector<TensorPtr> split(const TensorPtr& a, Index axis, const std::vector<Index>& sizes) {
  require_axis(a, axis);
  Index total = 0;
  for (Index s : sizes) total += s;
  if (total != a->shape[axis]) {
    throw DimensionError("split sizes sum " + std::to_string(total) + " vs axis extent " +
                         std::to_string(a->shape[axis]));
  }
  std::vector<TensorPtr> out;
  Index off = 0;
  for (Index s : sizes) {
    out.push_back(slice(a, axis, off, s));
    off += s;
  }
  return out;
}

TensorPtr softmax(const TensorPtr& a, Index axis) {
  require_axis(a, axis);
  const Index outer = axis_outer(a->shape, axis), inner = axis_inner(a->shape, axis);
  const Index n = a->shape[axis];
  Eigen::VectorXd vals(a->numel());
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Index j = 0; j < n; ++j) mx = std::max(mx, a->value[(o * n + j) * inner + i]);
      double denom = 0.0;
      for (Index j = 0; j < n; ++j) {
        const double e = std::exp(a->value[(o * n + j) * inner + i] - mx);
        vals[(o * n + j) * inner + i] = e;
        denom += e;
      }
      for (Index j = 0; j < n; ++j) vals[(o * n + j) * inner + i] /= denom;
    }
  }
  auto out = make_out(a->shape, std::move(vals));
  if (want_tape({&a})) {
    out->requires_grad = true;
    Tape::active()->record([a, out, outer, inner, n] {
      if (!out->has_grad()) return;
      Eigen::VectorXd ga(a->numel());
      for (Index o = 0; o < outer; ++o) {
        for (Index i = 0; i < inner; ++i) {
          double dot = 0.0;
          for (Index j = 0; j < n; ++j) {
            const Index k = (o * n + j) * inner + i;
            dot += out->grad[k] * out->value[k];
          }
          for (Index j = 0; j < n; ++j) {
            const Index k = (o * n + j) * inner + i;
            ga[k] = out->value[k] * (out->grad[k] - dot);
          }
        }
      }
      a->accum_grad(ga);
    });
  }
  return out;
}

TensorPtr mean_axis(const TensorPtr& a, Index axis) {
  require_axis(a, axis);
  const Index outer = axis_outer(a->shape, axis), inner = axis_inner(a->shape, axis);
  const Index n = a->shape[axis];
  Shape s;
  for (Index i = 0; i < a->rank(); ++i) {
    if (i != axis) s.push_back(a->shape[i]);
  }
  if (s.empty()) s.push_back(1);
  Eigen::VectorXd vals = Eigen::VectorXd::Zero(outer * inner);
  for (Index o = 0; o < outer; ++o) {
    for (Index j = 0; j < n; ++j) {
      vals.segment(o * inner, inner) += a->value.segment((o * n + j) * inner, inner);
    }
  }
  vals /= static_cast<double>(n);
  auto out = make_out(s, std::move(vals));
  if (want_tape({&a})) {
    out->requires_grad = true;
    Tape::active()->record([a, out, outer, inner, n] {
      if (!out->has_grad()) return;
      Eigen::VectorXd ga(a->numel());
      const double inv = 1.0 / static_cast<double>(n);
      for (Index o = 0; o < outer; ++o) {
        for (Index j = 0; j < n; ++j) {
          ga.segment((o * n + j) * inner, inner) = out->grad.segment(o * inner, inner) * inv;
        }
      }
      a->accum_grad(ga);
    });
  }
  return out;
}

TensorPtr sum_all(const TensorPtr& a) {
  auto out = make_out({1}, Eigen::VectorXd::Constant(1, a->value.sum()));
  if (want_tape({&a})) {
    out->requires_grad = true;
    Tape::active()->record([a, out] {
      if (out->has_grad()) {
        a->accum_grad(Eigen::VectorXd::Constant(a->numel(), out->grad[0]));
      }
    });
  }
  return out;
}

TensorPtr layer_norm(const TensorPtr& a, const TensorPtr& gain, const TensorPtr& bias, double eps) {
  const Index d = a->shape.back();
  if (gain->numel() != d || bias->numel() != d) {
    throw DimensionError("layer_norm affine params must have extent " + std::to_string(d));
  }
  const Index rows = a->numel() / d;
  Eigen::VectorXd vals(a->numel());
  Eigen::VectorXd xhat(a->numel());
  Eigen::VectorXd inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    auto xr = a->value.segment(r * d, d);
    const double mu = xr.mean();
    const double var = (xr.array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    xhat.segment(r * d, d) = (xr.array() - mu) * is;
    vals.segment(r * d, d) =
        xhat.segment(r * d, d).cwiseProduct(gain->value) + bias->value;
  }
  auto out = make_out(a->shape, std::move(vals));
  if (want_tape({&a, &gain, &bias})) {
    out->requires_grad = true;
    Tape::active()->record([a, gain, bias, out, xhat, inv_std, rows, d] {
      if (!out->has_grad()) return;
      if (gain->requires_grad || bias->requires_grad) {
        Eigen::VectorXd gg = Eigen::VectorXd::Zero(d), gb = Eigen::VectorXd::Zero(d);
        for (Index r = 0; r < rows; ++r) {
          gg += out->grad.segment(r * d, d).cwiseProduct(xhat.segment(r * d, d));
          gb += out->grad.segment(r * d, d);
        }
        if (gain->requires_grad) gain->accum_grad(gg);
        if (bias->requires_grad) bias->accum_grad(gb);
      }
      if (a->requires_grad) {
        Eigen::VectorXd ga(a->numel());
        for (Index r = 0; r < rows; ++r) {
          Eigen::VectorXd g = out->grad.segment(r * d, d).cwiseProduct(gain->value);
          auto xh = xhat.segment(r * d, d);
          const double gmean = g.mean();
          const double gxmean = g.cwiseProduct(xh).mean();
          ga.segment(r * d, d) =
              inv_std[r] * (g.array() - gmean - xh.array() * gxmean).matrix();
        }
        a->accum_grad(ga);
      }
    });
  }
  return out;
}

TensorPtr conv1d_k3(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  if (x->rank() != 3) throw DimensionError("conv1d_k3 input must be (L,v,d), got " + shape_str(x->shape));
  if (w->rank() != 3 || w->shape[0] != 3) {
    throw DimensionError("conv1d_k3 weight must be (3,d_in,d_out), got " + shape_str(w->shape));
  }
  const Index L = x->shape[0], V = x->shape[1], din = x->shape[2], dout = w->shape[2];
  if (w->shape[1] != din || b->numel() != dout) {
    throw DimensionError("conv1d_k3 weight/bias incompatible with input " + shape_str(x->shape));
  }
  Eigen::VectorXd vals(L * V * dout);
  {
    MapMat out_m(vals.data(), L * V, dout);
    out_m.rowwise() = b->value.transpose();
    CMapMat xm(x->value.data(), L * V, din);
    for (Index tap = 0; tap < 3; ++tap) {
      const Index shift = tap - 1;  // source row offset l+shift
      CMapMat wt(w->value.data() + tap * din * dout, din, dout);
      const Index lo = std::max<Index>(0, -shift), hi = std::min<Index>(L, L - shift);
      if (lo >= hi) continue;
      out_m.middleRows(lo * V, (hi - lo) * V).noalias() +=
          xm.middleRows((lo + shift) * V, (hi - lo) * V) * wt;
    }
  }
  auto out = make_out({L, V, dout}, std::move(vals));
  if (want_tape({&x, &w, &b})) {
    out->requires_grad = true;
    Tape::active()->record([x, w, b, out, L, V, din, dout] {
      if (!out->has_grad()) return;
      CMapMat g(out->grad.data(), L * V, dout);
      CMapMat xm(x->value.data(), L * V, din);
      if (b->requires_grad) b->accum_grad(g.colwise().sum().transpose());
      if (x->requires_grad || w->requires_grad) {
        Eigen::VectorXd gx = Eigen::VectorXd::Zero(L * V * din);
        Eigen::VectorXd gw = Eigen::VectorXd::Zero(3 * din * dout);
        MapMat gxm(gx.data(), L * V, din);
        for (Index tap = 0; tap < 3; ++tap) {
          const Index shift = tap - 1;
          CMapMat wt(w->value.data() + tap * din * dout, din, dout);
          MapMat gwt(gw.data() + tap * din * dout, din, dout);
          const Index lo = std::max<Index>(0, -shift), hi = std::min<Index>(L, L - shift);
          if (lo >= hi) continue;
          auto gsub = g.middleRows(lo * V, (hi - lo) * V);
          auto xsub = xm.middleRows((lo + shift) * V, (hi - lo) * V);
          gwt.noalias() += xsub.transpose() * gsub;
          gxm.middleRows((lo + shift) * V, (hi - lo) * V).noalias() += gsub * wt.transpose();
        }
        if (x->requires_grad) x->accum_grad(gx);
        if (w->requires_grad) w->accum_grad(gw);
      }
    });
  }
  return out;
}

TensorPtr bilinear_resize(const TensorPtr& w, Index rows, Index cols) {
  if (w->rank() != 2) throw DimensionError("bilinear_resize needs rank-2, got " + shape_str(w->shape));
  if (rows < 1 || cols < 1) {
    throw DimensionError("bilinear_resize to zero extent (" + std::to_string(rows) + "x" +
                         std::to_string(cols) + ")");
  }
  const Index r0 = w->shape[0], c0 = w->shape[1];
  Eigen::VectorXd vals(rows * cols);
  for (Index i = 0; i < rows; ++i) {
    const LerpIndex ri = lerp_index(i, rows, r0);
    for (Index j = 0; j < cols; ++j) {
      const LerpIndex cj = lerp_index(j, cols, c0);
      vals[i * cols + j] = (1 - ri.w_hi) * (1 - cj.w_hi) * w->value[ri.lo * c0 + cj.lo] +
                           (1 - ri.w_hi) * cj.w_hi * w->value[ri.lo * c0 + cj.hi] +
                           ri.w_hi * (1 - cj.w_hi) * w->value[ri.hi * c0 + cj.lo] +
                           ri.w_hi * cj.w_hi * w->value[ri.hi * c0 + cj.hi];
    }
  }
  auto out = make_out({rows, cols}, std::move(vals));
  if (want_tape({&w})) {
    out->requires_grad = true;
    Tape::active()->record([w, out, rows, cols, r0, c0] {
      if (!out->has_grad()) return;
      Eigen::VectorXd gw = Eigen::VectorXd::Zero(r0 * c0);
      for (Index i = 0; i < rows; ++i) {
        const LerpIndex ri = lerp_index(i, rows, r0);
        for (Index j = 0; j < cols; ++j) {
          const LerpIndex cj = lerp_index(j, cols, c0);
          const double g = out->grad[i * cols + j];
          gw[ri.lo * c0 + cj.lo] += (1 - ri.w_hi) * (1 - cj.w_hi) * g;
          gw[ri.lo * c0 + cj.hi] += (1 - ri.w_hi) * cj.w_hi * g;
          gw[ri.hi * c0 + cj.lo] += ri.w_hi * (1 - cj.w_hi) * g;
          gw[ri.hi * c0 + cj.hi] += ri.w_hi * cj.w_hi * g;
        }
      }
      w->accum_grad(gw);
    });
  }
  return out;
}

TensorPtr scale_last(const TensorPtr& a, const TensorPtr& s) {
  Shape expect = a->shape;
  expect.back() = 1;
  if (s->shape != expect) {
    throw DimensionError("scale_last: scale shape " + shape_str(s->shape) + " vs expected " +
                         shape_str(expect));
  }
  const Index d = a->shape.back();
  const Index rows = a->numel() / d;
  Eigen::VectorXd vals(a->numel());
  for (Index r = 0; r < rows; ++r) {
    vals.segment(r * d, d) = a->value.segment(r * d, d) * s->value[r];
  }
  auto out = make_out(a->shape, std::move(vals));
  if (want_tape({&a, &s})) {
    out->requires_grad = true;
    Tape::active()->record([a, s, out, rows, d] {
      if (!out->has_grad()) return;
      if (a->requires_grad) {
        Eigen::VectorXd ga(a->numel());
        for (Index r = 0; r < rows; ++r) {
          ga.segment(r * d, d) = out->grad.segment(r * d, d) * s->value[r];
        }
        a->accum_grad(ga);
      }
      if (s->requires_grad) {
        Eigen::VectorXd gs(rows);
        for (Index r = 0; r < rows; ++r) {
          gs[r] = out->grad.segment(r * d, d).dot(a->value.segment(r * d, d));
        }
        s->accum_grad(gs);
      }
    });
  }
  return out;
}

TensorPtr add_bias(const TensorPtr& a, const TensorPtr& b) {
  const Index d = a->shape.back();
  if (b->numel() != d) {
    throw DimensionError("add_bias: bias size " + std::to_string(b->numel()) + " vs last extent " +
                         std::to_string(d));
  }
  const Index rows = a->numel() / d;
  Eigen::VectorXd vals(a->numel());
  for (Index r = 0; r < rows; ++r) {
    vals.segment(r * d, d) = a->value.segment(r * d, d) + b->value;
  }
  auto out = make_out(a->shape, std::move(vals));
  if (want_tape({&a, &b})) {
    out->requires_grad = true;
    Tape::active()->record([a, b, out, rows, d] {
      if (!out->has_grad()) return;
      if (a->requires_grad) a->accum_grad(out->grad);
      if (b->requires_grad) {
        Eigen::VectorXd gb = Eigen::VectorXd::Zero(d);
        for (Index r = 0; r < rows; ++r) gb += out->grad.segment(r * d, d);
        b->accum_grad(gb);
      }
    });
  }
  return out;
}

TensorPtr add_row_const(const TensorPtr& a, const TensorPtr& c) {
  const Index m = a->shape[0];
  if (c->numel() != m) {
    throw DimensionError("add_row_const: " + std::to_string(c->numel()) + " vs first extent " +
                         std::to_string(m));
  }
  const Index inner = a->numel() / m;
  Eigen::VectorXd vals(a->numel());
  for (Index r = 0; r < m; ++r) {
    vals.segment(r * inner, inner) = a->value.segment(r * inner, inner).array() + c->value[r];
  }
  auto out = make_out(a->shape, std::move(vals));
  if (want_tape({&a, &c})) {
    out->requires_grad = true;
    Tape::active()->record([a, c, out, m, inner] {
      if (!out->has_grad()) return;
      if (a->requires_grad) a->accum_grad(out->grad);
      if (c->requires_grad) {
        Eigen::VectorXd gc(m);
        for (Index r = 0; r < m; ++r) gc[r] = out->grad.segment(r * inner, inner).sum();
        c->accum_grad(gc);
      }
    });
  }
  return out;
}

TensorPtr mse(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape != b->shape) {
    throw DimensionError("mse: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  }
  const double n = static_cast<double>(a->numel());
  Eigen::VectorXd diff = a->value - b->value;
  auto out = make_out({1}, Eigen::VectorXd::Constant(1, diff.squaredNorm() / n));
  if (want_tape({&a, &b})) {
    out->requires_grad = true;
    Tape::active()->record([a, b, out, diff, n] {
      if (!out->has_grad()) return;
      Eigen::VectorXd g = (2.0 / n) * out->grad[0] * diff;
      if (a->requires_grad) a->accum_grad(g);
      if (b->requires_grad) b->accum_grad(-g);
    });
  }
  return out;
}

TensorPtr cross_entropy(const TensorPtr& logits, Index label) {
  if (logits->rank() != 1) {
    throw DimensionError("cross_entropy expects rank-1 logits, got " + shape_str(logits->shape));
  }
  const Index n = logits->numel();
  if (label < 0 || label >= n) {
    throw ContractError("cross_entropy label " + std::to_string(label) + " out of [0," +
                        std::to_string(n) + ")");
  }
  const double mx = logits->value.maxCoeff();
  Eigen::VectorXd p = (logits->value.array() - mx).exp();
  const double z = p.sum();
  p /= z;
  const double loss = std::log(z) + mx - logits->value[label];
  auto out = make_out({1}, Eigen::VectorXd::Constant(1, loss));
  if (want_tape({&logits})) {
    out->requires_grad = true;
    Tape::active()->record([logits, out, p, label] {
      if (!out->has_grad()) return;
      Eigen::VectorXd g = p * out->grad[0];
      g[label] -= out->grad[0];
      logits->accum_grad(g);
    });
  }
  return out;
}

TensorPtr randn_tensor(Rng& rng, const Shape& s, double stddev, double mean) {
  Eigen::VectorXd v(shape_numel(s));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.normal(mean, stddev);
  return Tensor::create(s, std::move(v));
}

TensorPtr xavier_tensor(Rng& rng, const Shape& s) {
  const Index fan_in = s.size() >= 2 ? s[s.size() - 2] : s[0];
  const Index fan_out = s.back();
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Eigen::VectorXd v(shape_numel(s));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-limit, limit);
  return Tensor::create(s, std::move(v));
}

}  // namespace units
