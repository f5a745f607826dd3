#include "units/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace units {

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Index TimeSeriesDataset::v() const {
  if (samples.empty()) throw DataError("dataset '" + source + "' is empty");
  return samples.front().series.cols();
}

void TimeSeriesDataset::check() const {
  const Index vv = v();
  for (const auto& s : samples) {
    if (s.series.cols() != vv) {
      throw DataError("dataset '" + source + "' mixes variable counts");
    }
  }
}

void SplitFractions::validate() const {
  if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be nonnegative and sum to 1");
  }
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

double parse_cell(const std::string& cell, std::size_t line_no, std::size_t col) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(cell, &pos);
    while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
    if (pos != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw DataError("non-numeric cell '" + cell + "' at line " + std::to_string(line_no) +
                    ", column " + std::to_string(col + 1));
  }
}

struct CsvContents {
  std::vector<std::string> header;
  Eigen::MatrixXd values;           // rows x cols (label column excluded)
  std::vector<Index> labels;        // per row, when present
  bool has_labels = false;
};

CsvContents read_csv_table(const std::string& path, bool expect_label) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file: " + path);
  std::string line;
  std::size_t line_no = 0;
  CsvContents out;
  std::vector<std::vector<double>> rows;
  std::size_t n_cols = 0;
  Index label_col = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (line_no == 1) {
      out.header = cells;
      n_cols = cells.size();
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] == "label") label_col = static_cast<Index>(i);
      }
      if (expect_label && label_col != 0) {
        throw DataError("CSV " + path + " requires a leading 'label' column");
      }
      continue;
    }
    if (cells.size() != n_cols) {
      throw DataError("ragged row at line " + std::to_string(line_no) + ": expected " +
                      std::to_string(n_cols) + " cells, got " + std::to_string(cells.size()));
    }
    std::vector<double> row;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const double v = parse_cell(cells[c], line_no, c);
      if (static_cast<Index>(c) == label_col && expect_label) {
        out.labels.push_back(static_cast<Index>(std::llround(v)));
      } else {
        row.push_back(v);
      }
    }
    rows.push_back(std::move(row));
  }
  if (out.header.empty()) throw DataError("empty CSV file: " + path);
  if (rows.empty()) throw DataError("CSV has a header but no data rows: " + path);
  out.has_labels = expect_label;
  const Index nc = static_cast<Index>(rows.front().size());
  out.values.resize(static_cast<Index>(rows.size()), nc);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (Index c = 0; c < nc; ++c) out.values(static_cast<Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  }
  return out;
}

}  // namespace

TimeSeriesDataset load_csv(const CsvSpec& spec, Split split) {
  spec.fractions.validate();
  if (spec.window < 1 || spec.stride < 1) throw ConfigError("window and stride must be >= 1");
  CsvContents table = read_csv_table(spec.path, spec.has_label_column);
  const Index n = table.values.rows();
  const Index n_train = static_cast<Index>(std::floor(spec.fractions.train * static_cast<double>(n)));
  const Index n_val = static_cast<Index>(std::floor(spec.fractions.val * static_cast<double>(n)));
  Index begin = 0, end = n;
  switch (split) {
    case Split::kTrain: begin = 0; end = n_train; break;
    case Split::kVal: begin = n_train; end = n_train + n_val; break;
    case Split::kTest: begin = n_train + n_val; end = n; break;
  }
  TimeSeriesDataset ds;
  ds.source = spec.path;
  ds.split = split;
  for (Index start = begin; start + spec.window <= end; start += spec.stride) {
    Sample s;
    s.series = table.values.middleRows(start, spec.window);
    if (table.has_labels) s.label = table.labels[static_cast<std::size_t>(start)];
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) {
    throw DataError("no windows of length " + std::to_string(spec.window) + " fit in the " +
                    split_name(split) + " split of " + spec.path);
  }
  ds.check();
  return ds;
}

void write_series_csv(const std::string& path, const Eigen::MatrixXd& x,
                      const std::vector<std::string>& columns) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write CSV file: " + path);
  for (Index c = 0; c < x.cols(); ++c) {
    if (c) out << ",";
    if (c < static_cast<Index>(columns.size())) {
      out << columns[static_cast<std::size_t>(c)];
    } else {
      out << "v" << c;
    }
  }
  out << "\n";
  char buf[64];
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) {
      if (c) out << ",";
      std::snprintf(buf, sizeof(buf), "%.17g", x(r, c));
      out << buf;
    }
    out << "\n";
  }
}

Eigen::MatrixXd read_series_csv(const std::string& path) {
  return read_csv_table(path, false).values;
}

SyntheticKind synthetic_kind_from_name(const std::string& name) {
  if (name == "sine_forecast") return SyntheticKind::kSineForecast;
  if (name == "two_class") return SyntheticKind::kTwoClass;
  if (name == "spike_anomaly") return SyntheticKind::kSpikeAnomaly;
  if (name == "impute_sine") return SyntheticKind::kImputeSine;
  throw ConfigError("unknown synthetic generator: " + name);
}

namespace {

/// Sum of `m` fixed-frequency sinusoids with per-sample random phase and
/// amplitude, plus Gaussian noise.
Eigen::MatrixXd sine_mixture(Rng& rng, Index len, Index v, const std::vector<double>& freqs,
                             Index window, double noise) {
  Eigen::MatrixXd x(len, v);
  for (Index j = 0; j < v; ++j) {
    std::vector<double> amp(freqs.size()), phase(freqs.size());
    for (std::size_t m = 0; m < freqs.size(); ++m) {
      amp[m] = rng.uniform(0.5, 1.0) / static_cast<double>(freqs.size());
      phase[m] = rng.uniform(0.0, 2.0 * M_PI);
    }
    for (Index i = 0; i < len; ++i) {
      double val = 0.0;
      for (std::size_t m = 0; m < freqs.size(); ++m) {
        val += amp[m] * std::sin(2.0 * M_PI * freqs[m] * static_cast<double>(i) /
                                     static_cast<double>(window) +
                                 phase[m]);
      }
      x(i, j) = val + rng.normal(0.0, noise);
    }
  }
  return x;
}

}  // namespace

TimeSeriesDataset make_synthetic(SyntheticKind kind, std::uint64_t seed,
                                 const SyntheticParams& params, Split split) {
  if (params.n_samples < 1 || params.t < 1 || params.v < 1) {
    throw ConfigError("synthetic generator needs positive sample count and extents");
  }
  Rng rng = Rng(seed).fork(static_cast<std::uint64_t>(split) + 101);
  TimeSeriesDataset ds;
  ds.split = split;
  switch (kind) {
    case SyntheticKind::kSineForecast: {
      ds.source = "sine_forecast";
      // Dataset-fixed frequency family of 2 or 3 components.
      const Index m = 2 + static_cast<Index>(Rng(seed).uniform_int(2));
      std::vector<double> freqs(static_cast<std::size_t>(m));
      for (Index i = 0; i < m; ++i) {
        freqs[static_cast<std::size_t>(i)] =
            params.freq_lo + (params.freq_hi - params.freq_lo) * static_cast<double>(i) /
                                 static_cast<double>(std::max<Index>(1, m - 1));
      }
      for (Index n = 0; n < params.n_samples; ++n) {
        Sample s;
        s.series = sine_mixture(rng, params.t + params.horizon, params.v, freqs, params.t,
                                params.noise);
        s.context_len = params.t;
        ds.samples.push_back(std::move(s));
      }
      break;
    }
    case SyntheticKind::kTwoClass: {
      ds.source = "two_class";
      for (Index n = 0; n < params.n_samples; ++n) {
        Sample s;
        s.label = n % 2;  // exact balance
        const double freq = s.label == 0 ? params.freq_lo : params.freq_hi;
        s.series = sine_mixture(rng, params.t, params.v, {freq}, params.t, params.noise);
        ds.samples.push_back(std::move(s));
      }
      break;
    }
    case SyntheticKind::kSpikeAnomaly: {
      ds.source = "spike_anomaly";
      const double mid = 0.5 * (params.freq_lo + params.freq_hi);
      for (Index n = 0; n < params.n_samples; ++n) {
        Sample s;
        s.series = sine_mixture(rng, params.t, params.v, {mid}, params.t, params.noise);
        s.anomaly.assign(static_cast<std::size_t>(params.t), false);
        for (Index i = 0; i < params.t; ++i) {
          if (rng.uniform() < params.spike_rate) {
            const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            s.series.row(i).array() += sign * params.spike_magnitude * params.noise;
            s.anomaly[static_cast<std::size_t>(i)] = true;
          }
        }
        ds.samples.push_back(std::move(s));
      }
      break;
    }
    case SyntheticKind::kImputeSine: {
      ds.source = "impute_sine";
      const double mid = 0.5 * (params.freq_lo + params.freq_hi);
      const Index block = std::max<Index>(1, static_cast<Index>(std::floor(
                                                 params.mask_fraction *
                                                 static_cast<double>(params.t))));
      for (Index n = 0; n < params.n_samples; ++n) {
        Sample s;
        s.series = sine_mixture(rng, params.t, params.v, {mid}, params.t, params.noise);
        s.missing.assign(static_cast<std::size_t>(params.t), false);
        const Index start = static_cast<Index>(
            rng.uniform_int(static_cast<std::uint64_t>(params.t - block + 1)));
        for (Index i = start; i < start + block; ++i) s.missing[static_cast<std::size_t>(i)] = true;
        ds.samples.push_back(std::move(s));
      }
      break;
    }
  }
  return ds;
}

BatchIterator::BatchIterator(const TimeSeriesDataset& ds, Index batch_size, std::uint64_t seed,
                             Index repetition)
    : ds_(&ds), batch_size_(batch_size), seed_(seed), repetition_(std::max<Index>(1, repetition)) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (ds.samples.empty()) throw DataError("batching an empty dataset");
  reshuffle();
}

void BatchIterator::reshuffle() {
  ++epoch_;
  const Index n = static_cast<Index>(ds_->samples.size());
  order_.clear();
  order_.reserve(static_cast<std::size_t>(n * repetition_));
  for (Index r = 0; r < repetition_; ++r) {
    for (Index i = 0; i < n; ++i) order_.push_back(i);
  }
  Rng rng(seed_ ^ fnv1a64("epoch:" + std::to_string(epoch_)));
  // Fisher-Yates over the repeated index list.
  for (Index i = static_cast<Index>(order_.size()) - 1; i > 0; --i) {
    const Index j = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
    std::swap(order_[static_cast<std::size_t>(i)], order_[static_cast<std::size_t>(j)]);
  }
  cursor_ = 0;
}

std::vector<const Sample*> BatchIterator::next() {
  if (cursor_ >= order_.size()) reshuffle();
  std::vector<const Sample*> batch;
  while (cursor_ < order_.size() && static_cast<Index>(batch.size()) < batch_size_) {
    batch.push_back(&ds_->samples[static_cast<std::size_t>(order_[cursor_])]);
    ++cursor_;
  }
  return batch;
}

TimeSeriesDataset ManifestEntry::load(Split split) const {
  TimeSeriesDataset ds;
  if (csv) {
    ds = load_csv(*csv, split);
  } else if (generator) {
    ds = make_synthetic(*generator, generator_seed, params, split);
  } else {
    throw ConfigError("manifest entry '" + name + "' has neither csv nor generator");
  }
  ds.source = spec.source_key;
  return ds;
}

namespace {

using nlohmann::json;

TaskSpec parse_task(const json& j, const std::string& name, const std::string& source) {
  const auto kind = task_kind_from_name(j.at("kind").get<std::string>());
  TaskSpec spec;
  switch (kind) {
    case TaskKind::kForecast:
      spec = TaskSpec::forecast(name, source, j.at("horizon_tokens").get<Index>());
      break;
    case TaskKind::kClassify:
      spec = TaskSpec::classify(name, source, j.at("n_classes").get<Index>());
      break;
    case TaskKind::kImpute:
      spec = TaskSpec::impute(name, source);
      break;
    case TaskKind::kAnomaly:
      spec = TaskSpec::anomaly(name, source, j.at("anomaly_ratio").get<double>());
      break;
  }
  if (j.contains("lambda")) spec.lambda = j.at("lambda").get<double>();
  if (j.contains("normalize")) spec.normalize = j.at("normalize").get<bool>();
  spec.validate();
  return spec;
}

SyntheticParams parse_params(const json& j) {
  SyntheticParams p;
  if (j.contains("n_samples")) p.n_samples = j.at("n_samples").get<Index>();
  if (j.contains("t")) p.t = j.at("t").get<Index>();
  if (j.contains("horizon")) p.horizon = j.at("horizon").get<Index>();
  if (j.contains("v")) p.v = j.at("v").get<Index>();
  if (j.contains("noise")) p.noise = j.at("noise").get<double>();
  if (j.contains("spike_rate")) p.spike_rate = j.at("spike_rate").get<double>();
  if (j.contains("spike_magnitude")) p.spike_magnitude = j.at("spike_magnitude").get<double>();
  if (j.contains("mask_fraction")) p.mask_fraction = j.at("mask_fraction").get<double>();
  if (j.contains("freq_lo")) p.freq_lo = j.at("freq_lo").get<double>();
  if (j.contains("freq_hi")) p.freq_hi = j.at("freq_hi").get<double>();
  return p;
}

}  // namespace

DatasetManifest DatasetManifest::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw DataError("manifest parse error in " + path + ": " + e.what());
  }
  DatasetManifest manifest;
  try {
    for (const auto& jd : root.at("datasets")) {
      ManifestEntry e;
      e.name = jd.at("name").get<std::string>();
      const std::string source = jd.value("source", e.name);
      e.spec = parse_task(jd.at("task"), e.name, source);
      if (jd.contains("csv")) {
        const auto& jc = jd.at("csv");
        CsvSpec c;
        c.path = jc.at("path").get<std::string>();
        c.window = jc.value("window", Index{32});
        c.stride = jc.value("stride", c.window);
        c.has_label_column = jc.value("label_column", false);
        if (jc.contains("fractions")) {
          const auto& jf = jc.at("fractions");
          c.fractions.train = jf.value("train", 0.7);
          c.fractions.val = jf.value("val", 0.1);
          c.fractions.test = jf.value("test", 0.2);
        }
        c.fractions.validate();
        e.csv = c;
      } else if (jd.contains("generator")) {
        const auto& jg = jd.at("generator");
        e.generator = synthetic_kind_from_name(jg.at("kind").get<std::string>());
        e.generator_seed = jg.value("seed", std::uint64_t{0});
        if (jg.contains("params")) e.params = parse_params(jg.at("params"));
      } else {
        throw ConfigError("manifest entry '" + e.name + "' needs a csv or generator block");
      }
      manifest.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw DataError("manifest field error in " + path + ": " + e.what());
  }
  manifest.validate();
  return manifest;
}

void DatasetManifest::validate() const {
  if (entries.empty()) throw ConfigError("manifest has no datasets");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (std::size_t j = i + 1; j < entries.size(); ++j) {
      if (entries[i].name == entries[j].name) {
        throw ConfigError("duplicate dataset name: " + entries[i].name);
      }
    }
  }
}

}  // namespace units
