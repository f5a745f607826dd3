#pragma once

#include <map>
#include <string>
#include <vector>

#include "units/data.hpp"
#include "units/tasks.hpp"

namespace units {

enum class Regime { kPretrain, kSupervised, kPromptTune, kSingleTask };
enum class LrSchedule { kMultistep, kCosine };

std::string regime_name(Regime r);
Regime regime_from_name(const std::string& name);
LrSchedule schedule_from_name(const std::string& name);
std::string schedule_name(LrSchedule s);

struct TrainingConfig {
  Regime regime = Regime::kSupervised;
  Index steps = 1000;
  Index batch_size = 32;
  Index effective_batch = 32;  // gradient accumulation target; multiple of batch_size
  double base_lr = 3.2e-2;
  LrSchedule schedule = LrSchedule::kMultistep;
  std::uint64_t seed = 0;

  void validate() const;
};

/// multistep: base x0.1 at 50% and 75% of total steps.
/// cosine: base * (1 + cos(pi * step / total)) / 2.
double lr_at(const TrainingConfig& cfg, Index step);

/// Adaptive-moment optimizer over a parameter registry. Frozen entries are
/// skipped and carry no state; gradients are cleared after each step.
class Optimizer {
 public:
  Optimizer() = default;

  /// Test hook: theta -= lr * grad with no moment tracking.
  void set_plain_gradient(bool on) { plain_gradient_ = on; }

  /// Applies one update using whatever gradients are populated. Throws a
  /// contract error when no trainable parameter has a gradient at all.
  void step(ParameterRegistry& reg, double lr);

  Index step_count() const { return step_; }

 private:
  struct Moments {
    Eigen::VectorXd m, v;
  };
  std::map<std::string, Moments> state_;
  Index step_ = 0;
  bool plain_gradient_ = false;
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
};

struct MetricsRow {
  Index step = 0;
  std::string dataset;
  double loss = 0.0;
  double lr = 0.0;
};

/// CSV with header `step,dataset,loss,lr`; numeric formatting is fixed so
/// identical runs produce identical bytes.
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

/// FNV-1a over the raw value bytes of every frozen parameter, in registry
/// order. Used to audit freeze contracts.
std::uint64_t frozen_checksum(const ParameterRegistry& reg);

struct TrainerDataset {
  TaskSpec spec;
  TimeSeriesDataset data;
};

/// Uniform over datasets (not over samples).
Index sample_dataset(Index n_datasets, Rng& rng);

/// Drives one regime over a set of datasets. One optimizer step per effective
/// batch; datasets sampled uniformly per step; per-sample losses are averaged
/// so accumulation matches a single concatenated batch exactly.
class Trainer {
 public:
  Trainer(UnitsModel& model, TrainingConfig cfg);

  void add_dataset(TaskSpec spec, TimeSeriesDataset data);

  /// Freezes/unfreezes parameters for the configured regime and, for
  /// pretraining, attaches the reconstruction twin tower.
  void prepare();

  MetricsRow run_step(Index step);
  std::vector<MetricsRow> run();

  /// Names the trainer will update this regime (unfrozen registry entries).
  std::vector<std::string> trainable_names() const;

  Optimizer& optimizer() { return opt_; }

 private:
  TensorPtr sample_loss(const TaskSpec& spec, const Sample& sample, Rng& rng);

  UnitsModel& model_;
  TrainingConfig cfg_;
  std::vector<TrainerDataset> datasets_;
  std::vector<BatchIterator> iters_;
  Optimizer opt_;
  Rng rng_;
  std::uint64_t frozen_audit_ = 0;
  bool prepared_ = false;
};

}  // namespace units
