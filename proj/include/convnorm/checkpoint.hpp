#pragma once

// Flat little-endian checkpoint:
//   "CNRMCKPT" | u32 version
//   u8 norm kind | f64 width_scale | u32 in_c, in_h, in_w, n_classes | u8 flags
//   u32 tensor count, then per tensor:
//     u16 name length | name bytes | u8 rank | u32 extents[rank] | f32 values
// flags: bit 0 affine, bit 1 weighted variance. Running statistics are stored
// as rank-1 tensors after the parameters.

#include <cstdint>
#include <filesystem>

#include "convnorm/model.hpp"

namespace convnorm {

inline constexpr char kCheckpointMagic[8] = {'C', 'N', 'R', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(AllCnn& model, const std::filesystem::path& path);
AllCnn load_checkpoint(const std::filesystem::path& path);

}  // namespace convnorm
