#pragma once

#include <optional>
#include <string>
#include <vector>

#include "units/rng.hpp"
#include "units/tasks.hpp"

namespace units {

enum class Split { kTrain, kVal, kTest };

std::string split_name(Split s);

struct Sample {
  Eigen::MatrixXd series;             // t x v; for forecast tasks includes the horizon
  Index context_len = 0;              // forecast: rows of context (0 = whole series)
  Index label = -1;                   // classify
  std::vector<bool> anomaly;          // per-timestep, anomaly datasets
  std::vector<bool> missing;          // per-timestep, imputation datasets
};

struct TimeSeriesDataset {
  std::string source;
  Split split = Split::kTrain;
  std::vector<Sample> samples;

  Index v() const;
  void check() const;
};

struct SplitFractions {
  double train = 0.7, val = 0.1, test = 0.2;
  void validate() const;
};

struct CsvSpec {
  std::string path;
  Index window = 32;
  Index stride = 32;
  SplitFractions fractions;
  bool has_label_column = false;  // leading `label` column, one label per window start row
};

/// Windows are cut from split-disjoint row intervals; no window crosses a
/// split boundary.
TimeSeriesDataset load_csv(const CsvSpec& spec, Split split);

/// Writes a plain numeric CSV (header row, one row per timestep).
void write_series_csv(const std::string& path, const Eigen::MatrixXd& x,
                      const std::vector<std::string>& columns = {});
Eigen::MatrixXd read_series_csv(const std::string& path);

enum class SyntheticKind { kSineForecast, kTwoClass, kSpikeAnomaly, kImputeSine };

SyntheticKind synthetic_kind_from_name(const std::string& name);

struct SyntheticParams {
  Index n_samples = 64;
  Index t = 32;       // context length (and window length for non-forecast kinds)
  Index horizon = 0;  // forecast: extra target timesteps appended
  Index v = 1;
  double noise = 0.05;
  double spike_rate = 0.05;      // spike_anomaly
  double spike_magnitude = 5.0;  // in units of `noise`
  double mask_fraction = 0.25;   // impute_sine block mask
  double freq_lo = 1.0, freq_hi = 3.0;  // cycles per window
};

TimeSeriesDataset make_synthetic(SyntheticKind kind, std::uint64_t seed,
                                 const SyntheticParams& params, Split split = Split::kTrain);

/// Shuffled mini-batches; epoch `e` reshuffles with a deterministic
/// (seed, epoch)-keyed permutation; the final partial batch is kept; the
/// repetition factor repeats the dataset within each epoch.
class BatchIterator {
 public:
  BatchIterator(const TimeSeriesDataset& ds, Index batch_size, std::uint64_t seed,
                Index repetition = 1);

  std::vector<const Sample*> next();
  Index epoch() const { return epoch_; }

 private:
  void reshuffle();
  const TimeSeriesDataset* ds_;
  Index batch_size_;
  std::uint64_t seed_;
  Index repetition_;
  Index epoch_ = -1;
  std::size_t cursor_ = 0;
  std::vector<Index> order_;
};

struct ManifestEntry {
  std::string name;
  TaskSpec spec;
  // Exactly one of csv / generator is set.
  std::optional<CsvSpec> csv;
  std::optional<SyntheticKind> generator;
  std::uint64_t generator_seed = 0;
  SyntheticParams params;

  TimeSeriesDataset load(Split split) const;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  static DatasetManifest from_file(const std::string& path);
  void validate() const;
};

}  // namespace units
