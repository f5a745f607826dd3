#pragma once

#include <string>

#include "units/trainer.hpp"

namespace units {

/// Resolved run description: model geometry, training regime, data manifest,
/// and output directory. Loaded from JSON and validated before any side
/// effect; `save` writes the resolved copy back out so runs are reproducible
/// from their artifacts alone.
struct RunConfig {
  std::string manifest_path;
  ModelConfig model;
  TrainingConfig training;
  std::string out_dir = ".";
  std::uint64_t seed = 0;

  void validate() const;

  static RunConfig from_file(const std::string& path);
  void save(const std::string& path) const;
};

}  // namespace units
