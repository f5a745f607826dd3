#pragma once

#include <string>

#include "units/model.hpp"

namespace units {

/// Binary model snapshot.
///
/// Layout (all integers little-endian):
///   bytes 0..3   magic "UNTS"
///   u32          format version (1)
///   7 x i64      model config: n_blocks, d, k, heads, p, dylinear_base,
///                max_positions
///   u64          creation seed
///   u64          entry count
///   entries, in lexicographic parameter-name order:
///     u32        name length, followed by the name bytes
///     u8         dtype tag (0 = float64)
///     u32        rank, followed by rank x u64 dims
///     numel x f64 values
///   u64          FNV-1a checksum of every preceding byte
///
/// save -> load -> save is byte-identical. Loading rebuilds token sets, class
/// embeddings, and the pretraining tower from entry names.
namespace checkpoint {

void save(const std::string& path, const UnitsModel& model);

UnitsModel load(const std::string& path);

/// Refuses (config error) when the stored config differs from `expected`.
UnitsModel load_expect(const std::string& path, const ModelConfig& expected);

}  // namespace checkpoint

}  // namespace units
