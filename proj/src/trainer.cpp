#include "units/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace units {

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::kPretrain: return "pretrain";
    case Regime::kSupervised: return "supervised";
    case Regime::kPromptTune: return "prompt_tune";
    case Regime::kSingleTask: return "single_task";
  }
  return "?";
}

Regime regime_from_name(const std::string& name) {
  if (name == "pretrain") return Regime::kPretrain;
  if (name == "supervised") return Regime::kSupervised;
  if (name == "prompt_tune") return Regime::kPromptTune;
  if (name == "single_task") return Regime::kSingleTask;
  throw ConfigError("unknown training regime: " + name);
}

LrSchedule schedule_from_name(const std::string& name) {
  if (name == "multistep") return LrSchedule::kMultistep;
  if (name == "cosine") return LrSchedule::kCosine;
  throw ConfigError("unknown lr schedule: " + name);
}

std::string schedule_name(LrSchedule s) {
  return s == LrSchedule::kMultistep ? "multistep" : "cosine";
}

void TrainingConfig::validate() const {
  if (steps < 1) throw ConfigError("training needs at least one step");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (effective_batch < batch_size || effective_batch % batch_size != 0) {
    throw ConfigError("effective batch must be a positive multiple of batch size");
  }
  if (!(base_lr > 0.0)) throw ConfigError("base learning rate must be positive");
}

double lr_at(const TrainingConfig& cfg, Index step) {
  if (step > cfg.steps) throw ContractError("lr queried past the end of the schedule");
  if (cfg.schedule == LrSchedule::kCosine) {
    return cfg.base_lr *
           (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(cfg.steps))) /
           2.0;
  }
  double lr = cfg.base_lr;
  if (step >= cfg.steps / 2) lr *= 0.1;
  if (step >= (cfg.steps * 3) / 4) lr *= 0.1;
  return lr;
}

void Optimizer::step(ParameterRegistry& reg, double lr) {
  bool any = false;
  for (const auto& [name, t] : reg.items()) {
    if (!reg.is_frozen(name) && t->has_grad()) {
      any = true;
      break;
    }
  }
  if (!any) throw ContractError("optimizer step with no gradients on any trainable parameter");
  ++step_;
  for (const auto& [name, t] : reg.items()) {
    if (reg.is_frozen(name)) continue;
    if (!t->has_grad()) continue;
    if (plain_gradient_) {
      t->value -= lr * t->grad;
      continue;
    }
    auto& mom = state_[name];
    if (mom.m.size() == 0) {
      mom.m = Eigen::VectorXd::Zero(t->numel());
      mom.v = Eigen::VectorXd::Zero(t->numel());
    }
    mom.m = kBeta1 * mom.m + (1.0 - kBeta1) * t->grad;
    mom.v = kBeta2 * mom.v + (1.0 - kBeta2) * t->grad.cwiseProduct(t->grad);
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));
    const Eigen::VectorXd m_hat = mom.m / bc1;
    const Eigen::VectorXd v_hat = mom.v / bc2;
    t->value -= lr * (m_hat.array() / (v_hat.array().sqrt() + kEps)).matrix();
  }
  for (const auto& [name, t] : reg.items()) t->zero_grad();
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write metrics CSV: " + path);
  out << "step,dataset,loss,lr\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%s,%.17g,%.17g\n", static_cast<long long>(r.step),
                  r.dataset.c_str(), r.loss, r.lr);
    out << buf;
  }
}

std::uint64_t frozen_checksum(const ParameterRegistry& reg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : reg.items()) {
    if (!reg.is_frozen(name)) continue;
    mix(name.data(), name.size());
    mix(t->value.data(), static_cast<std::size_t>(t->numel()) * sizeof(double));
  }
  return h;
}

Index sample_dataset(Index n_datasets, Rng& rng) {
  if (n_datasets < 1) throw ConfigError("dataset sampling over an empty registry");
  return static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(n_datasets)));
}

Trainer::Trainer(UnitsModel& model, TrainingConfig cfg)
    : model_(model), cfg_(cfg), rng_(Rng(cfg.seed).fork(fnv1a64("trainer"))) {
  cfg_.validate();
}

void Trainer::add_dataset(TaskSpec spec, TimeSeriesDataset data) {
  if (prepared_) throw StateError("datasets must be added before prepare()");
  spec.validate();
  data.check();
  datasets_.push_back({std::move(spec), std::move(data)});
}

void Trainer::prepare() {
  if (datasets_.empty()) throw ConfigError("trainer has no datasets");
  auto& reg = model_.registry();
  for (auto& td : datasets_) {
    const Index v = td.data.v();
    if (!model_.has_token_set(td.spec.source_key)) {
      model_.add_token_set(td.spec.source_key, v);
    }
    if (td.spec.kind == TaskKind::kClassify && !model_.has_class_embeddings(td.spec.name)) {
      model_.add_class_embeddings(td.spec.name, td.spec.n_classes, v);
    }
  }
  switch (cfg_.regime) {
    case Regime::kPretrain:
      if (!model_.has_pretrain_tower()) model_.add_pretrain_tower();
      reg.set_frozen_prefix("", false);
      break;
    case Regime::kSupervised:
    case Regime::kSingleTask:
      if (model_.has_pretrain_tower()) model_.remove_pretrain_tower();
      reg.set_frozen_prefix("", false);
      break;
    case Regime::kPromptTune: {
      if (model_.has_pretrain_tower()) model_.remove_pretrain_tower();
      reg.freeze_all();
      for (const auto& td : datasets_) {
        reg.set_frozen_prefix("tokens." + td.spec.source_key + ".", false);
        if (td.spec.kind == TaskKind::kClassify) {
          reg.set_frozen_prefix("class_embeddings." + td.spec.name, false);
        }
      }
      break;
    }
  }
  frozen_audit_ = frozen_checksum(reg);
  // Per-epoch repetition balances dataset sizes against the largest one.
  std::size_t largest = 0;
  for (const auto& td : datasets_) largest = std::max(largest, td.data.samples.size());
  iters_.clear();
  for (std::size_t i = 0; i < datasets_.size(); ++i) {
    const Index rep = static_cast<Index>(largest / datasets_[i].data.samples.size());
    iters_.emplace_back(datasets_[i].data, cfg_.batch_size,
                        cfg_.seed ^ fnv1a64("iter:" + datasets_[i].spec.name),
                        std::max<Index>(1, rep));
  }
  prepared_ = true;
}

TensorPtr Trainer::sample_loss(const TaskSpec& spec, const Sample& sample, Rng& rng) {
  const Index k = model_.config().k;
  if (cfg_.regime == Regime::kPretrain) {
    const Index t = sample.series.rows();
    const double fraction = rng.uniform(0.5, 1.0);
    const Index t_trunc = truncated_length(t, k, fraction);
    const Index s = (t_trunc + k - 1) / k;
    const MaskScheme scheme = rng.uniform() < 0.5 ? MaskScheme::kRandom : MaskScheme::kRight;
    MaskPlan plan = plan_mask(s, scheme, rng);
    plan.truncation = fraction;
    return pretrain_loss(model_, spec.source_key, sample.series, plan);
  }
  switch (spec.kind) {
    case TaskKind::kForecast: {
      const Index horizon = spec.f * k;
      const Index ctx = sample.context_len > 0 ? sample.context_len
                                               : sample.series.rows() - horizon;
      if (ctx < 1 || ctx + horizon > sample.series.rows()) {
        throw DataError("forecast sample shorter than context plus horizon");
      }
      return forecast_loss(model_, spec, sample.series.topRows(ctx),
                           sample.series.middleRows(ctx, horizon));
    }
    case TaskKind::kClassify:
      if (sample.label < 0) throw DataError("classification sample without a label");
      return classify_loss(model_, spec, sample.series, sample.label);
    case TaskKind::kImpute:
      return imputation_loss(model_, spec, sample.series, sample.missing);
    case TaskKind::kAnomaly:
      return reconstruction_loss(model_, spec, sample.series);
  }
  throw ContractError("unknown task kind");
}

MetricsRow Trainer::run_step(Index step) {
  if (!prepared_) prepare();
  const Index ds_idx = sample_dataset(static_cast<Index>(datasets_.size()), rng_);
  const auto& td = datasets_[static_cast<std::size_t>(ds_idx)];
  const Index micro = cfg_.effective_batch / cfg_.batch_size;

  std::vector<const Sample*> samples;
  for (Index g = 0; g < micro; ++g) {
    auto batch = iters_[static_cast<std::size_t>(ds_idx)].next();
    samples.insert(samples.end(), batch.begin(), batch.end());
  }
  const double inv_n = 1.0 / static_cast<double>(samples.size());

  double total = 0.0;
  for (const Sample* s : samples) {
    Tape tape;
    TapeScope scope(tape);
    auto loss = scale(sample_loss(td.spec, *s, rng_), td.spec.lambda * inv_n);
    total += loss->value[0];
    tape.backward(loss);
  }
  const double lr = lr_at(cfg_, step);
  opt_.step(model_.registry(), lr);
  if (cfg_.regime == Regime::kPromptTune) {
    if (frozen_checksum(model_.registry()) != frozen_audit_) {
      throw StateError("frozen parameters changed during prompt tuning");
    }
  }
  return {step, td.spec.name, total, lr};
}

std::vector<MetricsRow> Trainer::run() {
  if (!prepared_) prepare();
  std::vector<MetricsRow> rows;
  rows.reserve(static_cast<std::size_t>(cfg_.steps));
  for (Index step = 0; step < cfg_.steps; ++step) rows.push_back(run_step(step));
  return rows;
}

std::vector<std::string> Trainer::trainable_names() const {
  std::vector<std::string> names;
  for (const auto& [name, t] : model_.registry().items()) {
    if (!model_.registry().is_frozen(name)) names.push_back(name);
  }
  return names;
}

}  // namespace units
