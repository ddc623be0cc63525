#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "emoe/unet.hpp"

namespace emoe {

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320).
std::uint32_t crc32(const void* data, std::size_t len);

// Checkpoint file layout (all integers little-endian):
//   "EMOE"                      4 bytes magic
//   u32  format version (1)
//   u32  kind: 0 backbone, 1 expert
//   u32  expert index (0 for backbone)
//   u32  geometry[10]: latent_c latent_h latent_w d_model d_attn d_txt
//                      d_ff mid_hidden timesteps num_experts
//   u64  weight count
//   f64  weights in parameter_list order
//   u32  CRC-32 of every preceding byte
//
// One file per expert plus one for the backbone, so ensemble-subset
// ablations can load any combination without rewriting.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_backbone(const std::filesystem::path& file, const UNetWeights& weights);
void save_expert(const std::filesystem::path& file, const UNetWeights& weights,
                 std::size_t expert_index);

// Writes backbone.emoe and expert_<i>.emoe under `dir`.
void save_unet(const std::filesystem::path& dir, const UNetWeights& weights);

// Loads the backbone plus the requested experts (in the given order) into a
// model with the expected geometry. Throws on magic/version/geometry/CRC
// mismatch.
UNetWeights load_unet(const std::filesystem::path& dir, const UNetGeometry& expected_geom,
                      const std::vector<std::size_t>& expert_indices);

UNetWeights load_unet(const std::filesystem::path& dir, const UNetGeometry& expected_geom,
                      std::size_t num_experts);

}  // namespace emoe
