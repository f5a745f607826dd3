#include "units/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace units {

namespace {

void check_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("metric inputs differ in shape");
  }
  if (a.size() == 0) throw ContractError("metric over empty matrices");
}

/// Per-variable z-scoring with the same statistics convention the task
/// pipelines use (population variance, floored standard deviation).
void zscore_inplace(Eigen::MatrixXd& x, const Eigen::MatrixXd& ref) {
  for (Index j = 0; j < x.cols(); ++j) {
    const double mu = ref.col(j).mean();
    const double var =
        std::max(0.0, ref.col(j).squaredNorm() / static_cast<double>(ref.rows()) - mu * mu);
    const double sd = std::max(std::sqrt(var), 1e-8);
    x.col(j) = (x.col(j).array() - mu) / sd;
  }
}

}  // namespace

double mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  check_same_shape(pred, target);
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

double mae(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  check_same_shape(pred, target);
  return (pred - target).cwiseAbs().sum() / static_cast<double>(pred.size());
}

double accuracy(const std::vector<Index>& pred, const std::vector<Index>& target) {
  if (pred.size() != target.size() || pred.empty()) {
    throw ContractError("accuracy needs equal-length nonempty label lists");
  }
  Index hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == target[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

BinaryCounts count_binary(const std::vector<bool>& pred, const std::vector<bool>& target) {
  if (pred.size() != target.size()) throw ContractError("binary counts need equal lengths");
  BinaryCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && target[i]) ++c.tp;
    else if (pred[i] && !target[i]) ++c.fp;
    else if (!pred[i] && target[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double precision(const BinaryCounts& c) {
  return c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double recall(const BinaryCounts& c) {
  return c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double f1_score(const BinaryCounts& c) {
  const double p = precision(c), r = recall(c);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

std::map<std::string, double> evaluate_task(const UnitsModel& model, const TaskSpec& spec,
                                            const TimeSeriesDataset& data,
                                            const TimeSeriesDataset* fit_data) {
  std::map<std::string, double> report;
  switch (spec.kind) {
    case TaskKind::kForecast: {
      double se = 0.0, ae = 0.0;
      Index n = 0;
      for (const auto& s : data.samples) {
        const Index horizon = spec.f * model.config().k;
        const Index ctx =
            s.context_len > 0 ? s.context_len : s.series.rows() - horizon;
        const Eigen::MatrixXd x = s.series.topRows(ctx);
        Eigen::MatrixXd pred = forecast(model, spec, x);
        Eigen::MatrixXd target = s.series.middleRows(ctx, horizon);
        if (spec.normalize) {
          zscore_inplace(pred, x);
          zscore_inplace(target, x);
        }
        se += (pred - target).squaredNorm();
        ae += (pred - target).cwiseAbs().sum();
        n += pred.size();
      }
      report["mse"] = se / static_cast<double>(n);
      report["mae"] = ae / static_cast<double>(n);
      break;
    }
    case TaskKind::kClassify: {
      std::vector<Index> pred, target;
      for (const auto& s : data.samples) {
        pred.push_back(classify(model, spec, s.series).first);
        target.push_back(s.label);
      }
      report["accuracy"] = accuracy(pred, target);
      break;
    }
    case TaskKind::kImpute: {
      double se = 0.0, ae = 0.0;
      Index n = 0;
      for (const auto& s : data.samples) {
        Eigen::MatrixXd filled = impute(model, spec, s.series, s.missing);
        Eigen::MatrixXd target = s.series;
        if (spec.normalize) {
          // Statistics over observed rows only, mirroring the pipeline.
          Eigen::MatrixXd observed(s.series.rows(), s.series.cols());
          Index rows = 0;
          for (Index i = 0; i < s.series.rows(); ++i) {
            if (s.missing.empty() || !s.missing[static_cast<std::size_t>(i)]) {
              observed.row(rows++) = s.series.row(i);
            }
          }
          observed.conservativeResize(rows, Eigen::NoChange);
          zscore_inplace(filled, observed);
          zscore_inplace(target, observed);
        }
        for (Index i = 0; i < s.series.rows(); ++i) {
          if (s.missing.empty() || !s.missing[static_cast<std::size_t>(i)]) continue;
          se += (filled.row(i) - target.row(i)).squaredNorm();
          ae += (filled.row(i) - target.row(i)).cwiseAbs().sum();
          n += s.series.cols();
        }
      }
      if (n == 0) throw ContractError("imputation eval set has no masked timesteps");
      report["mse"] = se / static_cast<double>(n);
      report["mae"] = ae / static_cast<double>(n);
      break;
    }
    case TaskKind::kAnomaly: {
      // The threshold is fitted transductively: errors are pooled over the
      // fit set (when given) and the eval set together.
      std::vector<double> errors;
      for (const auto& s : data.samples) {
        auto e = reconstruction_errors(model, spec, s.series);
        errors.insert(errors.end(), e.begin(), e.end());
      }
      if (fit_data) {
        for (const auto& s : fit_data->samples) {
          auto e = reconstruction_errors(model, spec, s.series);
          errors.insert(errors.end(), e.begin(), e.end());
        }
      }
      const auto threshold = fit_anomaly_threshold(std::move(errors), spec.anomaly_ratio);
      std::vector<bool> pred, target;
      for (const auto& s : data.samples) {
        auto flags = detect_anomalies(model, spec, s.series, threshold);
        pred.insert(pred.end(), flags.begin(), flags.end());
        target.insert(target.end(), s.anomaly.begin(), s.anomaly.end());
      }
      const auto counts = count_binary(pred, target);
      report["precision"] = precision(counts);
      report["recall"] = recall(counts);
      report["f1"] = f1_score(counts);
      report["threshold"] = threshold.threshold;
      break;
    }
  }
  return report;
}

void write_report_csv(const std::string& path, const std::string& task,
                      const std::map<std::string, double>& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report CSV: " + path);
  out << "task,metric,value\n";
  char buf[128];
  for (const auto& [metric, value] : report) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%.17g\n", task.c_str(), metric.c_str(), value);
    out << buf;
  }
}

}  // namespace units
