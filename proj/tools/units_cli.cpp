// units: train, tune, and run a unified multi-task time-series model.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "units/checkpoint.hpp"
#include "units/metrics.hpp"
#include "units/run_config.hpp"

namespace fs = std::filesystem;
using namespace units;

namespace {

bool log_enabled() {
  const char* v = std::getenv("UNITS_LOG");
  return v && *v;
}

void log_line(const std::string& msg) {
  if (log_enabled()) std::cerr << "[units] " << msg << "\n";
}

UnitsModel make_or_load_model(const RunConfig& cfg, const std::string& from_checkpoint) {
  if (from_checkpoint.empty()) return UnitsModel(cfg.model, cfg.seed);
  log_line("resuming from " + from_checkpoint);
  return checkpoint::load_expect(from_checkpoint, cfg.model);
}

int run_training(const std::string& config_path, const std::string& from_checkpoint,
                 const std::string& out_override, long long seed_override, Regime regime) {
  RunConfig cfg = RunConfig::from_file(config_path);
  cfg.training.regime = regime;
  if (seed_override >= 0) {
    cfg.seed = static_cast<std::uint64_t>(seed_override);
    cfg.training.seed = cfg.seed;
  }
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (regime == Regime::kPromptTune && from_checkpoint.empty()) {
    throw ConfigError("prompt tuning requires --from-checkpoint");
  }
  fs::create_directories(cfg.out_dir);

  UnitsModel model = make_or_load_model(cfg, from_checkpoint);
  DatasetManifest manifest = DatasetManifest::from_file(cfg.manifest_path);

  Trainer trainer(model, cfg.training);
  for (const auto& entry : manifest.entries) {
    trainer.add_dataset(entry.spec, entry.load(Split::kTrain));
  }
  trainer.prepare();
  log_line("training " + regime_name(regime) + " for " + std::to_string(cfg.training.steps) +
           " steps");

  std::vector<MetricsRow> rows;
  for (Index step = 0; step < cfg.training.steps; ++step) {
    rows.push_back(trainer.run_step(step));
    if (log_enabled() && (step % 100 == 0 || step == cfg.training.steps - 1)) {
      log_line("step " + std::to_string(step) + " dataset " + rows.back().dataset + " loss " +
               std::to_string(rows.back().loss));
    }
  }

  // The reconstruction twin tower only exists for pretraining; it is not
  // part of the deliverable model.
  if (model.has_pretrain_tower()) model.remove_pretrain_tower();

  write_metrics_csv((fs::path(cfg.out_dir) / "metrics.csv").string(), rows);
  checkpoint::save((fs::path(cfg.out_dir) / "model.ckpt").string(), model);
  cfg.save((fs::path(cfg.out_dir) / "config.json").string());
  log_line("wrote " + cfg.out_dir);
  return 0;
}

int run_eval(const std::string& config_path, const std::string& from_checkpoint,
             const std::string& out_override) {
  RunConfig cfg = RunConfig::from_file(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (from_checkpoint.empty()) throw ConfigError("eval requires --from-checkpoint");
  fs::create_directories(cfg.out_dir);
  UnitsModel model = checkpoint::load_expect(from_checkpoint, cfg.model);
  DatasetManifest manifest = DatasetManifest::from_file(cfg.manifest_path);

  std::ofstream out(fs::path(cfg.out_dir) / "eval.csv");
  if (!out) throw DataError("cannot write eval report");
  out << "task,metric,value\n";
  for (const auto& entry : manifest.entries) {
    if (!model.has_token_set(entry.spec.source_key)) {
      throw ConfigError("checkpoint has no token set for source '" + entry.spec.source_key +
                        "'; it was not trained on task " + entry.name);
    }
    auto test = entry.load(Split::kTest);
    std::optional<TimeSeriesDataset> fit;
    if (entry.spec.kind == TaskKind::kAnomaly) fit = entry.load(Split::kTrain);
    auto report = evaluate_task(model, entry.spec, test, fit ? &*fit : nullptr);
    char buf[128];
    for (const auto& [metric, value] : report) {
      std::snprintf(buf, sizeof(buf), "%s,%s,%.17g\n", entry.name.c_str(), metric.c_str(), value);
      out << buf;
      std::cout << entry.name << " " << metric << " = " << value << "\n";
    }
  }
  return 0;
}

void check_vars(const UnitsModel& model, const std::string& source, Index v) {
  const Index expected = model.token_set(source).v;
  if (v != expected) {
    throw ContractError("input has " + std::to_string(v) + " variables; source '" + source +
                        "' expects " + std::to_string(expected));
  }
}

std::vector<bool> read_mask_csv(const std::string& path, Index t) {
  const Eigen::MatrixXd m = read_series_csv(path);
  if (m.rows() != t || m.cols() != 1) {
    throw DataError("mask CSV must be a single 0/1 column with one row per timestep");
  }
  std::vector<bool> mask(static_cast<std::size_t>(t));
  for (Index i = 0; i < t; ++i) mask[static_cast<std::size_t>(i)] = m(i, 0) != 0.0;
  return mask;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unified multi-task time-series model"};
  app.require_subcommand(1);

  std::string config_path, from_checkpoint, out_path, input_csv, source, mask_csv;
  long long seed_override = -1;
  Index horizon_tokens = 0;
  double anomaly_ratio = 0.05;

  auto add_train_opts = [&](CLI::App* cmd, bool need_ckpt) {
    cmd->add_option("--config", config_path, "run config JSON")->required();
    auto* ck = cmd->add_option("--from-checkpoint", from_checkpoint, "checkpoint to resume from");
    if (need_ckpt) ck->required();
    cmd->add_option("--seed", seed_override, "seed override");
    cmd->add_option("--out", out_path, "output directory override");
  };

  auto* cmd_pretrain = app.add_subcommand("pretrain", "masked-reconstruction pretraining");
  add_train_opts(cmd_pretrain, false);
  auto* cmd_train = app.add_subcommand("train", "supervised multi-task co-training");
  add_train_opts(cmd_train, false);
  auto* cmd_pt = app.add_subcommand("prompt-tune", "tune tokens over a frozen model");
  add_train_opts(cmd_pt, true);

  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on the manifest's test split");
  cmd_eval->add_option("--config", config_path)->required();
  cmd_eval->add_option("--from-checkpoint", from_checkpoint)->required();
  cmd_eval->add_option("--out", out_path);

  auto add_infer_opts = [&](CLI::App* cmd) {
    cmd->add_option("--from-checkpoint", from_checkpoint)->required();
    cmd->add_option("--input", input_csv, "input series CSV")->required();
    cmd->add_option("--source", source, "token-set key the input belongs to")->required();
    cmd->add_option("--out", out_path, "output CSV path")->required();
  };

  auto* cmd_forecast = app.add_subcommand("forecast", "direct multi-step forecast");
  add_infer_opts(cmd_forecast);
  cmd_forecast->add_option("--horizon-tokens", horizon_tokens, "forecast tokens")->required();

  auto* cmd_impute = app.add_subcommand("impute", "fill masked timesteps");
  add_infer_opts(cmd_impute);
  cmd_impute->add_option("--mask-csv", mask_csv, "0/1 column marking missing timesteps");

  auto* cmd_detect = app.add_subcommand("detect", "flag anomalous timesteps");
  add_infer_opts(cmd_detect);
  cmd_detect->add_option("--anomaly-ratio", anomaly_ratio, "expected anomaly fraction");

  auto* cmd_prompts = app.add_subcommand("analyze-prompts", "prompt-token similarity matrix");
  cmd_prompts->add_option("--from-checkpoint", from_checkpoint)->required();
  cmd_prompts->add_option("--out", out_path, "output CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_pretrain->parsed()) {
      return run_training(config_path, from_checkpoint, out_path, seed_override,
                          Regime::kPretrain);
    }
    if (cmd_train->parsed()) {
      return run_training(config_path, from_checkpoint, out_path, seed_override,
                          Regime::kSupervised);
    }
    if (cmd_pt->parsed()) {
      return run_training(config_path, from_checkpoint, out_path, seed_override,
                          Regime::kPromptTune);
    }
    if (cmd_eval->parsed()) return run_eval(config_path, from_checkpoint, out_path);

    UnitsModel model = checkpoint::load(from_checkpoint);
    if (cmd_prompts->parsed()) {
      auto [keys, sim] = prompt_similarity(model);
      write_series_csv(out_path, sim, keys);
      return 0;
    }

    const Eigen::MatrixXd x = read_series_csv(input_csv);
    check_vars(model, source, x.cols());
    if (cmd_forecast->parsed()) {
      auto spec = TaskSpec::forecast("forecast", source, horizon_tokens);
      write_series_csv(out_path, forecast(model, spec, x));
    } else if (cmd_impute->parsed()) {
      auto spec = TaskSpec::impute("impute", source);
      std::vector<bool> mask;
      if (!mask_csv.empty()) mask = read_mask_csv(mask_csv, x.rows());
      write_series_csv(out_path, impute(model, spec, x, mask));
    } else if (cmd_detect->parsed()) {
      auto spec = TaskSpec::anomaly("detect", source, anomaly_ratio);
      auto threshold =
          fit_anomaly_threshold(reconstruction_errors(model, spec, x), anomaly_ratio);
      auto flags = detect_anomalies(model, spec, x, threshold);
      Eigen::MatrixXd out_col(static_cast<Index>(flags.size()), 1);
      for (std::size_t i = 0; i < flags.size(); ++i) {
        out_col(static_cast<Index>(i), 0) = flags[i] ? 1.0 : 0.0;
      }
      write_series_csv(out_path, out_col, {"anomaly"});
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
