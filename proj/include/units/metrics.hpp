#pragma once

#include <map>
#include <string>
#include <vector>

#include "units/data.hpp"
#include "units/tasks.hpp"

namespace units {

double mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);
double mae(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);
double accuracy(const std::vector<Index>& pred, const std::vector<Index>& target);

struct BinaryCounts {
  Index tp = 0, fp = 0, fn = 0, tn = 0;
};

BinaryCounts count_binary(const std::vector<bool>& pred, const std::vector<bool>& target);
double precision(const BinaryCounts& c);
double recall(const BinaryCounts& c);
double f1_score(const BinaryCounts& c);

/// Per-task evaluation over a dataset. Forecast/impute report MSE and MAE
/// (in normalized units when the task normalizes inputs); classify reports
/// accuracy; anomaly reports precision/recall/F1 with the threshold fitted on
/// the errors of the eval set pooled with `fit_data` when given.
std::map<std::string, double> evaluate_task(const UnitsModel& model, const TaskSpec& spec,
                                            const TimeSeriesDataset& data,
                                            const TimeSeriesDataset* fit_data = nullptr);

void write_report_csv(const std::string& path, const std::string& task,
                      const std::map<std::string, double>& report);

}  // namespace units
