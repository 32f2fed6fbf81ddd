#pragma once

// On-disk model format (.ffz), all integers and floats little-endian:
//   "FLEXIFZ1" | u32 version | u32 config length | config (key=value text)
//   | u32 tensor count | per tensor: u16 name length, name, u8 rank,
//     u32 dims..., f32 payload

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "flexfuse/dfm.hpp"
#include "flexfuse/schedule.hpp"

namespace flexfuse {

inline constexpr char kCheckpointMagic[8] = {'F', 'L', 'E', 'X', 'I', 'F', 'Z', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  DfmConfig arch;
  std::size_t diffusion_steps = 100;
  ScheduleKind schedule = ScheduleKind::scaled_linear;
  DfmParams<float> params;

  NoiseSchedule noise_schedule() const { return make_schedule(schedule, diffusion_steps); }
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Fails with config_mismatch when the stored architecture differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const DfmConfig& expected);

}  // namespace flexfuse
