#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "occ/nn.hpp"
#include "occ/scene.hpp"
#include "occ/tensor.hpp"

namespace occ::io {

// OVG1 voxel-grid format: magic "OVG1", u32 dims X,Y,Z, f32 voxel_size,
// 3x f32 origin, u16 category count, length-prefixed category names with a
// foreground flag byte, then X*Y*Z u16 labels row-major with x fastest.
void write_ovg(const std::string& path, const scene::SemanticVoxelGrid& grid);
scene::SemanticVoxelGrid read_ovg(const std::string& path);

// Rendered view: magic "RVW1", u32 H, u32 W, f32 depth plane (inf = no hit),
// u16 semantic plane, 3x f32 shading planes.
void write_view(const std::string& path, const scene::RenderedView& view);
scene::RenderedView read_view(const std::string& path);

// Visibility mask: magic "VMSK", u32 X,Y,Z, u8 per voxel (z fastest).
void write_mask(const std::string& path, const std::vector<uint8_t>& mask, int X, int Y, int Z);
std::vector<uint8_t> read_mask(const std::string& path, int* X = nullptr, int* Y = nullptr,
                               int* Z = nullptr);

// ASCII PLY of occupied voxels as colored cubes (8 verts / 12 triangles per
// voxel), color picked deterministically from the category id.
void export_ply(const std::string& path, const scene::SemanticVoxelGrid& grid);
// Re-reads cube centers from an exported PLY; returns (voxel index, category).
std::vector<std::pair<int64_t, uint16_t>> parse_ply_voxels(const std::string& path,
                                                           const scene::SemanticVoxelGrid& ref);
std::array<uint8_t, 3> category_color(uint16_t label);

struct Checkpoint {
  uint64_t step = 0;
  uint64_t config_hash = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;   // parameters by name
  std::vector<std::vector<double>> opt_m, opt_v;         // optimizer moments
};

// Binary checkpoint: "OCKP" magic, u32 version, u64 step, u64 config hash,
// u32 tensor count, then per tensor: u32 name length + bytes, u8 dtype tag
// (f64), u8 rank, u32 dims, little-endian payload. Optimizer moments follow
// the same per-tensor order.
void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

uint64_t fnv1a(const std::string& s);

}  // namespace occ::io
