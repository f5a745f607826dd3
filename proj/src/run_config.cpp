#include "units/run_config.hpp"

#include <fstream>

#include "json.hpp"

namespace units {

using nlohmann::json;

void RunConfig::validate() const {
  if (manifest_path.empty()) throw ConfigError("run config needs a manifest path");
  if (model.n_blocks < 1 || model.d < 2 || model.k < 1 || model.heads < 1 ||
      model.d % model.heads != 0 || model.d % 2 != 0) {
    throw ConfigError("model config invalid: need n_blocks>=1, even d divisible by heads, k>=1");
  }
  if (model.p < 0 || model.dylinear_base < 1 || model.max_positions < 1) {
    throw ConfigError("model config invalid: p, dylinear_base, max_positions");
  }
  training.validate();
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open run config: " + path);
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw ConfigError("run config parse error in " + path + ": " + e.what());
  }
  RunConfig cfg;
  try {
    cfg.manifest_path = root.at("manifest").get<std::string>();
    if (root.contains("model")) {
      const auto& jm = root.at("model");
      cfg.model.n_blocks = jm.value("n_blocks", cfg.model.n_blocks);
      cfg.model.d = jm.value("d", cfg.model.d);
      cfg.model.k = jm.value("k", cfg.model.k);
      cfg.model.heads = jm.value("heads", cfg.model.heads);
      cfg.model.p = jm.value("p", cfg.model.p);
      cfg.model.dylinear_base = jm.value("dylinear_base", cfg.model.dylinear_base);
      cfg.model.max_positions = jm.value("max_positions", cfg.model.max_positions);
    }
    if (root.contains("training")) {
      const auto& jt = root.at("training");
      if (jt.contains("regime")) cfg.training.regime = regime_from_name(jt.at("regime"));
      cfg.training.steps = jt.value("steps", cfg.training.steps);
      cfg.training.batch_size = jt.value("batch_size", cfg.training.batch_size);
      cfg.training.effective_batch = jt.value("effective_batch", cfg.training.batch_size);
      cfg.training.base_lr = jt.value("base_lr", cfg.training.base_lr);
      if (jt.contains("schedule")) cfg.training.schedule = schedule_from_name(jt.at("schedule"));
    }
    cfg.out_dir = root.value("out_dir", cfg.out_dir);
    cfg.seed = root.value("seed", cfg.seed);
    cfg.training.seed = cfg.seed;
  } catch (const json::exception& e) {
    throw ConfigError("run config field error in " + path + ": " + e.what());
  }
  cfg.validate();
  return cfg;
}

void RunConfig::save(const std::string& path) const {
  json root;
  root["manifest"] = manifest_path;
  root["model"] = {{"n_blocks", model.n_blocks},
                   {"d", model.d},
                   {"k", model.k},
                   {"heads", model.heads},
                   {"p", model.p},
                   {"dylinear_base", model.dylinear_base},
                   {"max_positions", model.max_positions}};
  root["training"] = {{"regime", regime_name(training.regime)},
                      {"steps", training.steps},
                      {"batch_size", training.batch_size},
                      {"effective_batch", training.effective_batch},
                      {"base_lr", training.base_lr},
                      {"schedule", schedule_name(training.schedule)}};
  root["out_dir"] = out_dir;
  root["seed"] = seed;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write run config: " + path);
  out << root.dump(2) << "\n";
}

}  // namespace units
