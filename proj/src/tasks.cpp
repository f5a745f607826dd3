#include "units/tasks.hpp"

#include <algorithm>
#include <cmath>

namespace units {

std::string task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kForecast: return "forecast";
    case TaskKind::kClassify: return "classify";
    case TaskKind::kImpute: return "impute";
    case TaskKind::kAnomaly: return "anomaly";
  }
  return "?";
}

TaskKind task_kind_from_name(const std::string& name) {
  if (name == "forecast") return TaskKind::kForecast;
  if (name == "classify") return TaskKind::kClassify;
  if (name == "impute") return TaskKind::kImpute;
  if (name == "anomaly") return TaskKind::kAnomaly;
  throw ConfigError("unknown task kind: " + name);
}

void TaskSpec::validate() const {
  if (name.empty() || source_key.empty()) throw ConfigError("task needs name and source key");
  switch (kind) {
    case TaskKind::kForecast:
      if (f < 1) throw ConfigError("forecast task '" + name + "' needs f >= 1");
      break;
    case TaskKind::kClassify:
      if (n_classes < 2) throw ConfigError("classify task '" + name + "' needs >= 2 classes");
      break;
    case TaskKind::kImpute:
      break;
    case TaskKind::kAnomaly:
      if (anomaly_ratio <= 0.0 || anomaly_ratio >= 1.0) {
        throw ConfigError("anomaly task '" + name + "' needs ratio in (0,1)");
      }
      break;
  }
}

TaskSpec TaskSpec::forecast(std::string name, std::string source, Index f, double lambda) {
  TaskSpec s;
  s.kind = TaskKind::kForecast;
  s.name = std::move(name);
  s.source_key = std::move(source);
  s.f = f;
  s.lambda = lambda;
  s.normalize = true;
  s.validate();
  return s;
}

TaskSpec TaskSpec::classify(std::string name, std::string source, Index n_classes, double lambda) {
  TaskSpec s;
  s.kind = TaskKind::kClassify;
  s.name = std::move(name);
  s.source_key = std::move(source);
  s.n_classes = n_classes;
  s.lambda = lambda;
  s.normalize = false;
  s.validate();
  return s;
}

TaskSpec TaskSpec::impute(std::string name, std::string source, double lambda) {
  TaskSpec s;
  s.kind = TaskKind::kImpute;
  s.name = std::move(name);
  s.source_key = std::move(source);
  s.lambda = lambda;
  s.normalize = true;
  s.validate();
  return s;
}

TaskSpec TaskSpec::anomaly(std::string name, std::string source, double ratio, double lambda) {
  TaskSpec s;
  s.kind = TaskKind::kAnomaly;
  s.name = std::move(name);
  s.source_key = std::move(source);
  s.anomaly_ratio = ratio;
  s.lambda = lambda;
  s.normalize = false;
  s.validate();
  return s;
}

TensorPtr series_tensor(const Eigen::MatrixXd& x) {
  Eigen::VectorXd flat(x.size());
  for (Index i = 0; i < x.rows(); ++i) {
    flat.segment(i * x.cols(), x.cols()) = x.row(i).transpose();
  }
  return Tensor::create({x.rows(), x.cols()}, std::move(flat));
}

Eigen::MatrixXd tensor_series(const TensorPtr& t) {
  if (t->rank() != 2) throw DimensionError("series tensor must be rank-2");
  Eigen::MatrixXd out(t->shape[0], t->shape[1]);
  for (Index i = 0; i < out.rows(); ++i) {
    out.row(i) = t->value.segment(i * out.cols(), out.cols()).transpose();
  }
  return out;
}

namespace {

struct SeriesNorm {
  Eigen::VectorXd mean;  // per variable
  Eigen::VectorXd stddev;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd out = x;
    for (Index j = 0; j < x.cols(); ++j) {
      out.col(j) = (x.col(j).array() - mean[j]) / stddev[j];
    }
    return out;
  }

  Eigen::MatrixXd invert(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd out = x;
    for (Index j = 0; j < x.cols(); ++j) {
      out.col(j) = x.col(j).array() * stddev[j] + mean[j];
    }
    return out;
  }

  static SeriesNorm identity(Index v) {
    return {Eigen::VectorXd::Zero(v), Eigen::VectorXd::Ones(v)};
  }

  /// Stats over rows with mask[i]==false (or all rows when mask is empty).
  static SeriesNorm fit(const Eigen::MatrixXd& x, const std::vector<bool>& skip = {}) {
    const Index v = x.cols();
    SeriesNorm n{Eigen::VectorXd::Zero(v), Eigen::VectorXd::Ones(v)};
    for (Index j = 0; j < v; ++j) {
      double sum = 0.0, sq = 0.0;
      Index cnt = 0;
      for (Index i = 0; i < x.rows(); ++i) {
        if (!skip.empty() && skip[static_cast<std::size_t>(i)]) continue;
        sum += x(i, j);
        sq += x(i, j) * x(i, j);
        ++cnt;
      }
      if (cnt == 0) throw DataError("no observed timesteps to normalize against");
      const double mu = sum / static_cast<double>(cnt);
      const double var = std::max(0.0, sq / static_cast<double>(cnt) - mu * mu);
      n.mean[j] = mu;
      n.stddev[j] = std::max(std::sqrt(var), 1e-8);
    }
    return n;
  }
};

const TokenSet& source_tokens(const UnitsModel& model, const TaskSpec& spec) {
  return model.token_set(spec.source_key);
}

}  // namespace

Eigen::MatrixXd forecast(const UnitsModel& model, const TaskSpec& spec, const Eigen::MatrixXd& x,
                         Index f_override) {
  const Index f = f_override > 0 ? f_override : spec.f;
  if (f < 1) throw ContractError("forecast needs f >= 1");
  const auto& ts = source_tokens(model, spec);
  const SeriesNorm norm =
      spec.normalize ? SeriesNorm::fit(x) : SeriesNorm::identity(x.cols());
  auto sample = patchify(series_tensor(norm.apply(x)), model.embedding());
  auto assembled = assemble_forecast(sample, ts, f);
  auto encoded = model.encode(assembled);
  auto series = gen_tower_forward(encoded, model.gen_tower(), model.embedding(), GenTarget::kGen);
  return norm.invert(tensor_series(series));
}

std::pair<Index, std::vector<double>> classify(const UnitsModel& model, const TaskSpec& spec,
                                               const Eigen::MatrixXd& x) {
  const auto& ts = source_tokens(model, spec);
  const SeriesNorm norm =
      spec.normalize ? SeriesNorm::fit(x) : SeriesNorm::identity(x.cols());
  auto sample = patchify(series_tensor(norm.apply(x)), model.embedding());
  auto encoded = model.encode(assemble_classify(sample, ts));
  auto z_c = cls_tower_forward(encoded, model.cls_tower());
  return match_class(z_c, model.class_embeddings(spec.name));
}

namespace {

std::vector<Index> missing_token_indices(const std::vector<bool>& missing, Index t, Index k) {
  const Index s = (t + k - 1) / k;
  std::vector<Index> idx;
  for (Index i = 0; i < s; ++i) {
    bool any = false;
    for (Index j = i * k; j < std::min(t, (i + 1) * k); ++j) {
      any = any || missing[static_cast<std::size_t>(j)];
    }
    if (any) idx.push_back(i);
  }
  return idx;
}

Eigen::MatrixXd zero_missing(const Eigen::MatrixXd& x, const std::vector<bool>& missing) {
  Eigen::MatrixXd out = x;
  for (Index i = 0; i < x.rows(); ++i) {
    if (missing[static_cast<std::size_t>(i)]) out.row(i).setZero();
  }
  return out;
}

}  // namespace

Eigen::MatrixXd impute(const UnitsModel& model, const TaskSpec& spec, const Eigen::MatrixXd& x,
                       const std::vector<bool>& missing) {
  const Index t = x.rows();
  if (static_cast<Index>(missing.size()) != t) {
    throw ContractError("missing mask length vs series length");
  }
  if (std::all_of(missing.begin(), missing.end(), [](bool b) { return b; })) {
    throw ContractError("imputation with an all-missing mask");
  }
  if (std::none_of(missing.begin(), missing.end(), [](bool b) { return b; })) {
    return x;  // copy-through
  }
  const auto& ts = source_tokens(model, spec);
  const SeriesNorm norm =
      spec.normalize ? SeriesNorm::fit(x, missing) : SeriesNorm::identity(x.cols());
  const Eigen::MatrixXd xn = zero_missing(norm.apply(x), missing);
  auto sample = patchify(series_tensor(xn), model.embedding());
  auto assembled = assemble_impute(sample, ts, missing_token_indices(missing, t, model.config().k));
  auto encoded = model.encode(assembled);
  auto recon = tensor_series(
      gen_tower_forward(encoded, model.gen_tower(), model.embedding(), GenTarget::kSample, t));
  const Eigen::MatrixXd filled = norm.invert(recon);
  Eigen::MatrixXd out = x;
  for (Index i = 0; i < t; ++i) {
    if (missing[static_cast<std::size_t>(i)]) out.row(i) = filled.row(i);
  }
  return out;
}

Eigen::MatrixXd reconstruct(const UnitsModel& model, const TaskSpec& spec,
                            const Eigen::MatrixXd& x) {
  const auto& ts = source_tokens(model, spec);
  const SeriesNorm norm =
      spec.normalize ? SeriesNorm::fit(x) : SeriesNorm::identity(x.cols());
  auto sample = patchify(series_tensor(norm.apply(x)), model.embedding());
  auto encoded = model.encode(assemble_anomaly(sample, ts));
  auto recon = tensor_series(gen_tower_forward(encoded, model.gen_tower(), model.embedding(),
                                               GenTarget::kSample, x.rows()));
  return norm.invert(recon);
}

std::vector<double> reconstruction_errors(const UnitsModel& model, const TaskSpec& spec,
                                          const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd recon = reconstruct(model, spec, x);
  std::vector<double> errs(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) {
    errs[static_cast<std::size_t>(i)] = (x.row(i) - recon.row(i)).squaredNorm() /
                                        static_cast<double>(x.cols());
  }
  return errs;
}

AnomalyThreshold fit_anomaly_threshold(std::vector<double> errors, double ratio) {
  if (errors.empty()) throw DataError("no reconstruction errors to fit a threshold on");
  if (ratio <= 0.0 || ratio >= 1.0) throw ContractError("anomaly ratio must be in (0,1)");
  std::sort(errors.begin(), errors.end());
  const auto n = static_cast<double>(errors.size());
  Index idx = static_cast<Index>(std::ceil((1.0 - ratio) * n)) - 1;
  idx = std::clamp<Index>(idx, 0, static_cast<Index>(errors.size()) - 1);
  return {errors[static_cast<std::size_t>(idx)], ratio};
}

std::vector<bool> detect_anomalies(const UnitsModel& model, const TaskSpec& spec,
                                   const Eigen::MatrixXd& x, const AnomalyThreshold& threshold) {
  const auto errs = reconstruction_errors(model, spec, x);
  std::vector<bool> flags(errs.size());
  for (std::size_t i = 0; i < errs.size(); ++i) flags[i] = errs[i] > threshold.threshold;
  return flags;
}

std::pair<std::vector<std::string>, Eigen::MatrixXd> prompt_similarity(const UnitsModel& model) {
  std::vector<std::string> keys;
  std::vector<Eigen::VectorXd> pooled;
  for (const auto& [key, ts] : model.token_sets()) {
    if (ts.p == 0) continue;
    // Mean over prompt tokens and variables -> one d-vector per source.
    const Index p = ts.p, v = ts.v, d = ts.prompt->shape[2];
    Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
    for (Index i = 0; i < p * v; ++i) m += ts.prompt->value.segment(i * d, d);
    m /= static_cast<double>(p * v);
    keys.push_back(key);
    pooled.push_back(std::move(m));
  }
  if (keys.size() < 2) throw ContractError("prompt similarity needs at least 2 token sets");
  const Index n = static_cast<Index>(keys.size());
  Eigen::MatrixXd sim(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double denom = pooled[i].norm() * pooled[j].norm();
      sim(i, j) = denom > 0.0 ? pooled[i].dot(pooled[j]) / denom : 0.0;
    }
    sim(i, i) = 1.0;
  }
  return {keys, sim};
}

TensorPtr forecast_loss(const UnitsModel& model, const TaskSpec& spec, const Eigen::MatrixXd& x_ctx,
                        const Eigen::MatrixXd& y_target) {
  const Index f = spec.f;
  const auto& ts = source_tokens(model, spec);
  const SeriesNorm norm =
      spec.normalize ? SeriesNorm::fit(x_ctx) : SeriesNorm::identity(x_ctx.cols());
  auto sample = patchify(series_tensor(norm.apply(x_ctx)), model.embedding());
  auto encoded = model.encode(assemble_forecast(sample, ts, f));
  auto series = gen_tower_forward(encoded, model.gen_tower(), model.embedding(), GenTarget::kGen,
                                  y_target.rows());
  return mse(series, series_tensor(norm.apply(y_target)));
}

TensorPtr classify_loss(const UnitsModel& model, const TaskSpec& spec, const Eigen::MatrixXd& x,
                        Index label) {
  const auto& ts = source_tokens(model, spec);
  const SeriesNorm norm =
      spec.normalize ? SeriesNorm::fit(x) : SeriesNorm::identity(x.cols());
  auto sample = patchify(series_tensor(norm.apply(x)), model.embedding());
  auto encoded = model.encode(assemble_classify(sample, ts));
  auto z_c = cls_tower_forward(encoded, model.cls_tower());
  auto logits = class_logits(z_c, model.class_embeddings(spec.name));
  return cross_entropy(logits, label);
}

TensorPtr imputation_loss(const UnitsModel& model, const TaskSpec& spec, const Eigen::MatrixXd& x,
                          const std::vector<bool>& missing) {
  const Index t = x.rows();
  const auto& ts = source_tokens(model, spec);
  const SeriesNorm norm =
      spec.normalize ? SeriesNorm::fit(x, missing) : SeriesNorm::identity(x.cols());
  const Eigen::MatrixXd xn = norm.apply(x);
  auto sample = patchify(series_tensor(zero_missing(xn, missing)), model.embedding());
  auto assembled = assemble_impute(sample, ts, missing_token_indices(missing, t, model.config().k));
  auto encoded = model.encode(assembled);
  auto recon =
      gen_tower_forward(encoded, model.gen_tower(), model.embedding(), GenTarget::kSample, t);
  return mse(recon, series_tensor(xn));
}

TensorPtr reconstruction_loss(const UnitsModel& model, const TaskSpec& spec,
                              const Eigen::MatrixXd& x) {
  const auto& ts = source_tokens(model, spec);
  const SeriesNorm norm =
      spec.normalize ? SeriesNorm::fit(x) : SeriesNorm::identity(x.cols());
  const Eigen::MatrixXd xn = norm.apply(x);
  auto sample = patchify(series_tensor(xn), model.embedding());
  auto encoded = model.encode(assemble_anomaly(sample, ts));
  auto recon = gen_tower_forward(encoded, model.gen_tower(), model.embedding(),
                                 GenTarget::kSample, x.rows());
  return mse(recon, series_tensor(xn));
}

Index truncated_length(Index t, Index k, double fraction) {
  Index t_trunc = static_cast<Index>(std::llround(fraction * static_cast<double>(t)));
  return std::clamp<Index>(t_trunc, std::min<Index>(t, 2 * k), t);
}

TensorPtr pretrain_loss(const UnitsModel& model, const std::string& source_key,
                        const Eigen::MatrixXd& x, const MaskPlan& plan, bool allow_empty_plan) {
  if (plan.indices.empty() && !allow_empty_plan) {
    throw ContractError("pretraining requires a non-empty mask plan");
  }
  const auto& ts = model.token_set(source_key);
  const Index k = model.config().k;
  const Index t_trunc = truncated_length(x.rows(), k, plan.truncation);
  const Eigen::MatrixXd xt = x.topRows(t_trunc);
  const SeriesNorm norm = SeriesNorm::fit(xt);
  const Eigen::MatrixXd xn = norm.apply(xt);
  auto sample = patchify(series_tensor(xn), model.embedding());
  auto masked = apply_mask(sample, ts, plan);
  auto encoded = model.encode(assemble_classify(masked, ts));
  auto target = series_tensor(xn);
  // GEN route: reconstruct the full sample from prompt+sample tokens.
  auto recon1 = gen_tower_forward(encoded, model.gen_tower(), model.embedding(),
                                  GenTarget::kSample, t_trunc);
  auto loss = mse(recon1, target);
  // CLS route: the processed cls token plus the sample tokens feed the
  // pretraining twin tower.
  auto z_c = cls_tower_forward(encoded, model.cls_tower());
  SegmentedTokens twin;
  twin.data = concat({z_c, encoded.sample_rows()}, 0);
  twin.p = 1;
  twin.s = encoded.s;
  auto recon2 = gen_tower_forward(twin, model.pretrain_tower(), model.embedding(),
                                  GenTarget::kSample, t_trunc);
  return add(loss, mse(recon2, target));
}

}  // namespace units
