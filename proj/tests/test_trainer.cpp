#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "units/trainer.hpp"

using namespace units;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_blocks = 1;
  cfg.d = 4;
  cfg.k = 4;
  cfg.heads = 2;
  cfg.p = 2;
  cfg.dylinear_base = 4;
  cfg.max_positions = 32;
  return cfg;
}

TrainingConfig quick(Regime regime, Index steps, Index batch = 4) {
  TrainingConfig cfg;
  cfg.regime = regime;
  cfg.steps = steps;
  cfg.batch_size = batch;
  cfg.effective_batch = batch;
  cfg.base_lr = 1e-3;
  cfg.schedule = LrSchedule::kMultistep;
  cfg.seed = 5;
  return cfg;
}

TimeSeriesDataset small_forecast_data(std::uint64_t seed = 2) {
  SyntheticParams p;
  p.n_samples = 8;
  p.t = 16;
  p.horizon = 8;
  return make_synthetic(SyntheticKind::kSineForecast, seed, p);
}

TimeSeriesDataset small_class_data(std::uint64_t seed = 4) {
  SyntheticParams p;
  p.n_samples = 8;
  p.t = 16;
  return make_synthetic(SyntheticKind::kTwoClass, seed, p);
}

}  // namespace

TEST_CASE("learning rate schedules") {
  TrainingConfig cfg;
  cfg.steps = 100;
  cfg.base_lr = 3.2e-2;
  cfg.schedule = LrSchedule::kMultistep;
  CHECK(lr_at(cfg, 0) == doctest::Approx(3.2e-2));
  CHECK(lr_at(cfg, 49) == doctest::Approx(3.2e-2));
  CHECK(lr_at(cfg, 50) == doctest::Approx(3.2e-3));  // just past 50%
  CHECK(lr_at(cfg, 74) == doctest::Approx(3.2e-3));
  CHECK(lr_at(cfg, 75) == doctest::Approx(3.2e-4));

  cfg.schedule = LrSchedule::kCosine;
  cfg.base_lr = 6.4e-3;
  CHECK(lr_at(cfg, 0) == doctest::Approx(6.4e-3));
  CHECK(lr_at(cfg, 50) == doctest::Approx(3.2e-3));  // midpoint
  CHECK(std::abs(lr_at(cfg, 100)) < 1e-12);          // final step
  CHECK_THROWS_AS(lr_at(cfg, 101), ContractError);
}

TEST_CASE("training config invariants") {
  TrainingConfig cfg = quick(Regime::kSupervised, 10);
  cfg.effective_batch = 6;  // not a multiple of 4
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.effective_batch = 8;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("optimizer: plain-gradient hand arithmetic and freeze contract") {
  ParameterRegistry reg;
  auto theta = reg.add("theta", Tensor::from_list({1}, {1.0}));
  auto frozen = reg.add("frozen", Tensor::from_list({1}, {3.0}));
  reg.set_frozen("frozen", true);

  Optimizer opt;
  opt.set_plain_gradient(true);

  // f(theta) = theta^2, grad = 2 theta; one step at lr 0.1 from 1.0 -> 0.8.
  Tape tape;
  {
    TapeScope scope(tape);
    auto loss = sum_all(mul(theta, theta));
    tape.backward(loss);
  }
  frozen->accum_grad(Eigen::VectorXd::Ones(1));  // must be ignored
  opt.step(reg, 0.1);
  CHECK(theta->value[0] == doctest::Approx(0.8));
  CHECK(frozen->value[0] == 3.0);
  CHECK(!theta->has_grad());  // gradients cleared

  // A step with no gradients anywhere is a contract error.
  CHECK_THROWS_AS(opt.step(reg, 0.1), ContractError);
}

TEST_CASE("optimizer converges on a convex quadratic") {
  ParameterRegistry reg;
  auto theta = reg.add("theta", Tensor::from_list({2}, {5.0, -4.0}));
  auto target = Tensor::from_list({2}, {1.25, 2.5});
  Optimizer opt;
  for (int i = 0; i < 500; ++i) {
    Tape tape;
    TapeScope scope(tape);
    auto diff = sub(theta, target);
    tape.backward(sum_all(mul(diff, diff)));
    opt.step(reg, 0.05);
  }
  CHECK(std::abs(theta->value[0] - 1.25) < 1e-3);
  CHECK(std::abs(theta->value[1] - 2.5) < 1e-3);
}

TEST_CASE("dataset sampling is uniform and reproducible") {
  Rng rng(123);
  CHECK_THROWS_AS(sample_dataset(0, rng), ConfigError);

  Rng single(5);
  for (int i = 0; i < 20; ++i) CHECK(sample_dataset(1, single) == 0);

  Rng mc(99);
  std::vector<Index> counts(4, 0);
  for (int i = 0; i < 40000; ++i) counts[static_cast<std::size_t>(sample_dataset(4, mc))]++;
  for (Index c : counts) {
    CHECK(c >= 40000 * 0.24);
    CHECK(c <= 40000 * 0.26);
  }

  Rng r1(7), r2(7);
  for (int i = 0; i < 100; ++i) CHECK(sample_dataset(4, r1) == sample_dataset(4, r2));
}

TEST_CASE("supervised step: weighting and loss aggregation") {
  UnitsModel model(tiny_config(), 1);
  auto cfg = quick(Regime::kSupervised, 4);
  Trainer trainer(model, cfg);
  auto spec = TaskSpec::forecast("f", "src", 2);
  trainer.add_dataset(spec, small_forecast_data());
  trainer.prepare();
  auto row = trainer.run_step(0);
  CHECK(row.loss > 0.0);
  CHECK(row.dataset == "f");
  CHECK(row.lr == doctest::Approx(1e-3));

  // Zero task weight: zero loss and an unchanged model.
  UnitsModel model2(tiny_config(), 1);
  Trainer t2(model2, cfg);
  auto spec0 = spec;
  spec0.lambda = 0.0;
  t2.add_dataset(spec0, small_forecast_data());
  t2.prepare();
  const Eigen::VectorXd before = model2.registry().get("embedding.proj_w")->value;
  auto row0 = t2.run_step(0);
  CHECK(row0.loss == 0.0);
  CHECK((model2.registry().get("embedding.proj_w")->value - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("regime isolation: per-regime trainable name sets") {
  auto trainables = [](Regime regime) {
    UnitsModel model(tiny_config(), 9);
    Trainer trainer(model, quick(regime, 1));
    trainer.add_dataset(TaskSpec::forecast("f", "srcA", 1), small_forecast_data());
    trainer.add_dataset(TaskSpec::classify("c", "srcB", 2), small_class_data());
    trainer.prepare();
    auto names = trainer.trainable_names();
    return std::set<std::string>(names.begin(), names.end());
  };

  auto pre = trainables(Regime::kPretrain);
  auto sup = trainables(Regime::kSupervised);
  auto pmt = trainables(Regime::kPromptTune);

  // Pretraining optimizes everything including the reconstruction twin.
  CHECK(pre.count("towers.gen_pretrain.dyl.w") == 1);
  CHECK(pre.count("backbone.block0.time_attn.wq") == 1);
  CHECK(pre.count("tokens.srcA.gen") == 1);

  // Supervised drops the twin but trains backbone, towers, and tokens.
  CHECK(sup.count("towers.gen_pretrain.dyl.w") == 0);
  CHECK(sup.count("backbone.block0.time_attn.wq") == 1);
  CHECK(sup.count("class_embeddings.c") == 1);

  // Prompt tuning trains only token sets and class embeddings.
  for (const auto& name : pmt) {
    const bool ok = name.rfind("tokens.", 0) == 0 || name.rfind("class_embeddings.", 0) == 0;
    CHECK(ok);
  }
  CHECK(pmt.count("tokens.srcA.prompt") == 1);
  CHECK(pmt.count("tokens.srcA.gen") == 1);
  CHECK(pmt.count("tokens.srcA.cls") == 1);
  CHECK(pmt.count("tokens.srcB.prompt") == 1);
  CHECK(pmt.count("class_embeddings.c") == 1);
}

TEST_CASE("prompt tuning: frozen parameters are bit-unchanged") {
  UnitsModel model(tiny_config(), 21);
  {
    // Give the model its token sets first, as a pretrained model would have.
    Trainer warm(model, quick(Regime::kSupervised, 2));
    warm.add_dataset(TaskSpec::forecast("f", "src", 1), small_forecast_data());
    warm.run();
  }
  Trainer tuner(model, quick(Regime::kPromptTune, 25));
  tuner.add_dataset(TaskSpec::forecast("f", "src", 1), small_forecast_data(8));
  tuner.prepare();

  std::map<std::string, Eigen::VectorXd> before;
  for (const auto& [name, t] : model.registry().items()) before[name] = t->value;
  const std::uint64_t checksum_before = frozen_checksum(model.registry());

  for (Index s = 0; s < 25; ++s) tuner.run_step(s);

  CHECK(frozen_checksum(model.registry()) == checksum_before);
  bool tokens_moved = false;
  for (const auto& [name, t] : model.registry().items()) {
    if (model.registry().is_frozen(name)) {
      CHECK((t->value - before[name]).cwiseAbs().maxCoeff() == 0.0);
    } else if ((t->value - before[name]).cwiseAbs().maxCoeff() > 0.0) {
      tokens_moved = true;
    }
  }
  CHECK(tokens_moved);
}

TEST_CASE("gradient accumulation equals one concatenated batch") {
  // Same data, same order: 2 micro-batches of 2 vs one batch of 4.
  auto run = [](Index batch, Index effective) {
    UnitsModel model(tiny_config(), 31);
    TrainingConfig cfg = quick(Regime::kSupervised, 1, batch);
    cfg.effective_batch = effective;
    Trainer trainer(model, cfg);
    trainer.add_dataset(TaskSpec::forecast("f", "src", 1), small_forecast_data());
    trainer.prepare();
    auto row = trainer.run_step(0);
    std::map<std::string, Eigen::VectorXd> params;
    for (const auto& [name, t] : model.registry().items()) params[name] = t->value;
    return std::make_pair(row.loss, params);
  };
  auto [loss_a, params_a] = run(2, 4);
  auto [loss_b, params_b] = run(4, 4);
  CHECK(loss_a == doctest::Approx(loss_b).epsilon(1e-10));
  for (const auto& [name, va] : params_a) {
    CHECK((va - params_b[name]).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("pretraining runs and reduces its own loss") {
  ModelConfig mc = tiny_config();
  mc.d = 8;
  mc.dylinear_base = 8;
  UnitsModel model(mc, 41);
  TrainingConfig cfg = quick(Regime::kPretrain, 200, 4);
  cfg.base_lr = 1e-2;
  Trainer trainer(model, cfg);
  SyntheticParams p;
  p.n_samples = 8;
  p.t = 16;
  p.horizon = 8;
  p.noise = 0.02;
  trainer.add_dataset(TaskSpec::forecast("f", "src", 2),
                      make_synthetic(SyntheticKind::kSineForecast, 2, p));
  trainer.prepare();
  CHECK(model.has_pretrain_tower());
  double first = -1.0, tail = 0.0;
  for (Index s = 0; s < 200; ++s) {
    auto row = trainer.run_step(s);
    if (s == 0) first = row.loss;
    if (s >= 150) tail += row.loss;
    CHECK(row.loss >= 0.0);
  }
  // The mask and truncation are redrawn per step, so compare the first loss
  // against the mean of the settled last quarter.
  CHECK(tail / 50.0 < 0.5 * first);
}

TEST_CASE("metrics CSV formatting is deterministic") {
  std::vector<MetricsRow> rows = {{0, "a", 0.5, 1e-3}, {1, "b", 0.25, 1e-3}};
  const std::string p1 = "/tmp/units_metrics_1.csv", p2 = "/tmp/units_metrics_2.csv";
  write_metrics_csv(p1, rows);
  write_metrics_csv(p2, rows);
  std::ifstream f1(p1), f2(p2);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(s1.rfind("step,dataset,loss,lr\n", 0) == 0);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}
