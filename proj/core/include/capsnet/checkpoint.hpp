#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "capsnet/decoder.hpp"
#include "capsnet/model.hpp"
#include "capsnet/optimizer.hpp"

namespace capsnet {

inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class BlockPrecision : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

struct TrainProgress {
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
};

struct Checkpoint {
  CapsNetModel model;
  Decoder decoder;
  std::optional<Optimizer> optimizer;
  TrainProgress progress;
};

/// Layout, little-endian: "CPKT", u16 version, u32 meta count, then
/// (u16 name length, name, f64 value) per hyperparameter, u32 block count,
/// then per block: u16 name length, name, u8 precision, u8 rank,
/// u32 dims[rank], data. Float64 blocks round-trip bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const CapsNetModel& model, const Decoder& decoder,
                     const Optimizer* optimizer = nullptr, const TrainProgress& progress = {},
                     BlockPrecision precision = BlockPrecision::kFloat64);

/// Throws FormatError on bad magic, unknown version, truncation, or missing
/// and misshapen blocks.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace capsnet
