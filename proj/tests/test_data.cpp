#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "doctest.h"
#include "units/data.hpp"

using namespace units;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("units_data_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

}  // namespace

TEST_CASE("csv loading: window arithmetic and split disjointness") {
  TempDir tmp;
  std::string csv = "a,b,c\n";
  for (int i = 0; i < 200; ++i) {
    csv += std::to_string(i) + "," + std::to_string(i * 2) + "," + std::to_string(i * 3) + "\n";
  }
  const auto path = tmp.file("series.csv");
  write_file(path, csv);

  CsvSpec spec;
  spec.path = path;
  spec.window = 32;
  spec.stride = 32;

  SUBCASE("100% train fraction yields 6 windows of 32 from 200 rows") {
    spec.fractions = {1.0, 0.0, 0.0};
    auto ds = load_csv(spec, Split::kTrain);
    CHECK(ds.samples.size() == 6);
    CHECK(ds.v() == 3);
    CHECK(ds.samples[0].series(0, 0) == 0.0);
    CHECK(ds.samples[5].series(31, 2) == doctest::Approx(191 * 3));
  }

  SUBCASE("train and test windows never overlap in time") {
    spec.fractions = {0.7, 0.0, 0.3};
    auto train = load_csv(spec, Split::kTrain);
    auto test = load_csv(spec, Split::kTest);
    double max_train = -1.0, min_test = 1e18;
    for (const auto& s : train.samples) max_train = std::max(max_train, s.series(31, 0));
    for (const auto& s : test.samples) min_test = std::min(min_test, s.series(0, 0));
    CHECK(max_train < min_test);
  }
}

TEST_CASE("csv parse errors carry line numbers") {
  TempDir tmp;
  const auto ragged = tmp.file("ragged.csv");
  write_file(ragged, "a,b\n1,2\n3\n");
  CsvSpec spec;
  spec.path = ragged;
  spec.window = 1;
  spec.fractions = {1.0, 0.0, 0.0};
  try {
    load_csv(spec, Split::kTrain);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  const auto alpha = tmp.file("alpha.csv");
  write_file(alpha, "a,b\n1,2\n3,oops\n");
  spec.path = alpha;
  try {
    load_csv(spec, Split::kTrain);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    CHECK(std::string(e.what()).find("oops") != std::string::npos);
  }

  const auto header_only = tmp.file("header.csv");
  write_file(header_only, "a,b\n");
  spec.path = header_only;
  CHECK_THROWS_AS(load_csv(spec, Split::kTrain), DataError);
}

TEST_CASE("series CSV round trip") {
  TempDir tmp;
  Eigen::MatrixXd x(5, 2);
  x << 1.5, -2.25, 0.001953125, 3.0, 4.0, 5.5, -6.0, 7.125, 8.0, 9.75;
  const auto path = tmp.file("rt.csv");
  write_series_csv(path, x, {"u", "w"});
  auto back = read_series_csv(path);
  CHECK(back.rows() == 5);
  CHECK(back.cols() == 2);
  CHECK((back - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("labeled CSV windows take the label at the window start") {
  TempDir tmp;
  std::string csv = "label,x\n";
  for (int i = 0; i < 8; ++i) csv += std::to_string(i / 4) + "," + std::to_string(i) + "\n";
  const auto path = tmp.file("labeled.csv");
  write_file(path, csv);
  CsvSpec spec;
  spec.path = path;
  spec.window = 4;
  spec.stride = 4;
  spec.has_label_column = true;
  spec.fractions = {1.0, 0.0, 0.0};
  auto ds = load_csv(spec, Split::kTrain);
  CHECK(ds.samples.size() == 2);
  CHECK(ds.samples[0].label == 0);
  CHECK(ds.samples[1].label == 1);
  CHECK(ds.v() == 1);
}

TEST_CASE("synthetic generators: determinism and construction contracts") {
  SyntheticParams params;
  params.n_samples = 16;
  params.t = 32;

  SUBCASE("seed-fixed generation is bit-reproducible") {
    for (auto kind : {SyntheticKind::kSineForecast, SyntheticKind::kTwoClass,
                      SyntheticKind::kSpikeAnomaly, SyntheticKind::kImputeSine}) {
      SyntheticParams p = params;
      if (kind == SyntheticKind::kSineForecast) p.horizon = 16;
      auto a = make_synthetic(kind, 42, p);
      auto b = make_synthetic(kind, 42, p);
      REQUIRE(a.samples.size() == b.samples.size());
      for (std::size_t i = 0; i < a.samples.size(); ++i) {
        CHECK((a.samples[i].series - b.samples[i].series).cwiseAbs().maxCoeff() == 0.0);
      }
      auto c = make_synthetic(kind, 43, p);
      CHECK((a.samples[0].series - c.samples[0].series).cwiseAbs().maxCoeff() > 0.0);
    }
  }

  SUBCASE("splits draw different data") {
    auto train = make_synthetic(SyntheticKind::kTwoClass, 42, params, Split::kTrain);
    auto test = make_synthetic(SyntheticKind::kTwoClass, 42, params, Split::kTest);
    CHECK((train.samples[0].series - test.samples[0].series).cwiseAbs().maxCoeff() > 0.0);
  }

  SUBCASE("two_class labels are exactly balanced") {
    auto ds = make_synthetic(SyntheticKind::kTwoClass, 7, params);
    Index zeros = 0, ones = 0;
    for (const auto& s : ds.samples) (s.label == 0 ? zeros : ones)++;
    CHECK(zeros == 8);
    CHECK(ones == 8);
  }

  SUBCASE("spike labels exist and are carried with the series") {
    SyntheticParams p = params;
    p.noise = 0.1;
    p.spike_rate = 0.2;
    auto ds = make_synthetic(SyntheticKind::kSpikeAnomaly, 11, p);
    Index total_spikes = 0;
    for (const auto& s : ds.samples) {
      REQUIRE(s.anomaly.size() == 32);
      for (Index i = 0; i < 32; ++i) total_spikes += s.anomaly[static_cast<std::size_t>(i)];
    }
    // ~20% of 16*32 timesteps; loose Monte-Carlo bounds.
    CHECK(total_spikes > 50);
    CHECK(total_spikes < 160);
  }

  SUBCASE("impute_sine block masks cover the configured fraction") {
    auto ds = make_synthetic(SyntheticKind::kImputeSine, 13, params);
    for (const auto& s : ds.samples) {
      REQUIRE(s.missing.size() == 32);
      Index n = 0, first = -1, last = -1;
      for (Index i = 0; i < 32; ++i) {
        if (s.missing[static_cast<std::size_t>(i)]) {
          ++n;
          if (first < 0) first = i;
          last = i;
        }
      }
      CHECK(n == 8);  // 25% of 32
      CHECK(last - first + 1 == n);  // contiguous block
    }
  }
}

TEST_CASE("batch iterator: sizes, repetition, epoch reshuffle") {
  SyntheticParams params;
  params.n_samples = 10;
  params.t = 16;
  auto ds = make_synthetic(SyntheticKind::kTwoClass, 3, params);

  SUBCASE("10 samples at batch 4 give sizes [4,4,2]") {
    BatchIterator it(ds, 4, 1);
    CHECK(it.next().size() == 4);
    CHECK(it.next().size() == 4);
    CHECK(it.next().size() == 2);
    CHECK(it.epoch() == 0);
    it.next();
    CHECK(it.epoch() == 1);
  }

  SUBCASE("repetition factor 3 yields 30 samples per epoch") {
    BatchIterator it(ds, 5, 1, 3);
    Index count = 0;
    for (int i = 0; i < 6; ++i) {
      CHECK(it.epoch() == 0);
      count += static_cast<Index>(it.next().size());
    }
    CHECK(count == 30);
    it.next();
    CHECK(it.epoch() == 1);
  }

  SUBCASE("same seed reproduces the exact batch order") {
    BatchIterator a(ds, 3, 77), b(ds, 3, 77);
    for (int i = 0; i < 12; ++i) {
      auto ba = a.next(), bb = b.next();
      REQUIRE(ba.size() == bb.size());
      for (std::size_t j = 0; j < ba.size(); ++j) CHECK(ba[j] == bb[j]);
    }
  }

  CHECK_THROWS_AS(BatchIterator(ds, 0, 1), ConfigError);
}

TEST_CASE("manifest parsing and validation") {
  TempDir tmp;
  const auto path = tmp.file("manifest.json");
  write_file(path, R"({"datasets": [
    {"name": "sineA", "task": {"kind": "forecast", "horizon_tokens": 2},
     "generator": {"kind": "sine_forecast", "seed": 1,
                   "params": {"n_samples": 8, "t": 32, "horizon": 8}}},
    {"name": "clsA", "source": "shared", "task": {"kind": "classify", "n_classes": 2},
     "generator": {"kind": "two_class", "seed": 2, "params": {"n_samples": 8, "t": 32}}}
  ]})");
  auto manifest = DatasetManifest::from_file(path);
  REQUIRE(manifest.entries.size() == 2);
  CHECK(manifest.entries[0].spec.kind == TaskKind::kForecast);
  CHECK(manifest.entries[0].spec.f == 2);
  CHECK(manifest.entries[0].spec.source_key == "sineA");
  CHECK(manifest.entries[1].spec.source_key == "shared");

  auto ds = manifest.entries[0].load(Split::kTrain);
  CHECK(ds.samples.size() == 8);
  CHECK(ds.samples[0].series.rows() == 40);
  CHECK(ds.source == "sineA");

  const auto dup = tmp.file("dup.json");
  write_file(dup, R"({"datasets": [
    {"name": "x", "task": {"kind": "impute"}, "generator": {"kind": "impute_sine"}},
    {"name": "x", "task": {"kind": "impute"}, "generator": {"kind": "impute_sine"}}
  ]})");
  CHECK_THROWS_AS(DatasetManifest::from_file(dup), ConfigError);

  const auto broken = tmp.file("broken.json");
  write_file(broken, "{not json");
  CHECK_THROWS_AS(DatasetManifest::from_file(broken), DataError);
}
