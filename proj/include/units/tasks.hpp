#pragma once

#include <utility>
#include <vector>

#include "units/model.hpp"

namespace units {

enum class TaskKind { kForecast, kClassify, kImpute, kAnomaly };

std::string task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::kForecast;
  std::string name;        // unique task id
  std::string source_key;  // token-set sharing key (same-source tasks share tokens)
  Index f = 0;             // forecast tokens
  Index n_classes = 0;
  double anomaly_ratio = 0.0;
  double lambda = 1.0;
  // Per-sample z-score normalization of inputs (de-normalized at output).
  bool normalize = true;

  Index horizon_steps(Index k) const { return f * k; }
  void validate() const;

  static TaskSpec forecast(std::string name, std::string source, Index f, double lambda = 1.0);
  static TaskSpec classify(std::string name, std::string source, Index n_classes,
                           double lambda = 1.0);
  static TaskSpec impute(std::string name, std::string source, double lambda = 1.0);
  static TaskSpec anomaly(std::string name, std::string source, double ratio, double lambda = 1.0);
};

struct AnomalyThreshold {
  double threshold = 0.0;
  double ratio = 0.0;
};

// ---- Inference pipelines (pure given frozen parameters) ----

/// Direct multi-step forecast: one forward pass for any f.
Eigen::MatrixXd forecast(const UnitsModel& model, const TaskSpec& spec, const Eigen::MatrixXd& x,
                         Index f_override = -1);

std::pair<Index, std::vector<double>> classify(const UnitsModel& model, const TaskSpec& spec,
                                               const Eigen::MatrixXd& x);

/// missing: per-timestep flags; observed timesteps are returned bit-identical.
Eigen::MatrixXd impute(const UnitsModel& model, const TaskSpec& spec, const Eigen::MatrixXd& x,
                       const std::vector<bool>& missing);

/// Full-series reconstruction through the anomaly token layout.
Eigen::MatrixXd reconstruct(const UnitsModel& model, const TaskSpec& spec,
                            const Eigen::MatrixXd& x);

/// Per-timestep reconstruction error (squared error averaged over variables).
std::vector<double> reconstruction_errors(const UnitsModel& model, const TaskSpec& spec,
                                          const Eigen::MatrixXd& x);

/// Nearest-rank quantile of pooled ascending-sorted errors.
AnomalyThreshold fit_anomaly_threshold(std::vector<double> errors, double ratio);

/// Flags timesteps with error strictly above the threshold.
std::vector<bool> detect_anomalies(const UnitsModel& model, const TaskSpec& spec,
                                   const Eigen::MatrixXd& x, const AnomalyThreshold& threshold);

/// Cosine similarity of mean-pooled prompt tokens across token sets;
/// symmetric with a unit diagonal. Returns (keys, matrix).
std::pair<std::vector<std::string>, Eigen::MatrixXd> prompt_similarity(const UnitsModel& model);

// ---- Loss builders (record on the active tape) ----

TensorPtr forecast_loss(const UnitsModel& model, const TaskSpec& spec, const Eigen::MatrixXd& x_ctx,
                        const Eigen::MatrixXd& y_target);
TensorPtr classify_loss(const UnitsModel& model, const TaskSpec& spec, const Eigen::MatrixXd& x,
                        Index label);
TensorPtr imputation_loss(const UnitsModel& model, const TaskSpec& spec, const Eigen::MatrixXd& x,
                          const std::vector<bool>& missing);
TensorPtr reconstruction_loss(const UnitsModel& model, const TaskSpec& spec,
                              const Eigen::MatrixXd& x);

/// Series length after applying a pretraining truncation fraction; never
/// shorter than two patches (or the full series when that is already shorter).
Index truncated_length(Index t, Index k, double fraction);

/// Unified masked-reconstruction loss: GEN-tower term plus the pretraining
/// twin's term through the CLS tower.
TensorPtr pretrain_loss(const UnitsModel& model, const std::string& source_key,
                        const Eigen::MatrixXd& x, const MaskPlan& plan,
                        bool allow_empty_plan = false);

// Conversion helpers.
TensorPtr series_tensor(const Eigen::MatrixXd& x);
Eigen::MatrixXd tensor_series(const TensorPtr& t);

}  // namespace units
