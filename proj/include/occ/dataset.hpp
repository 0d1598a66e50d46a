#pragma once

#include <string>
#include <vector>

#include "occ/config.hpp"
#include "occ/scene.hpp"

namespace occ::data {

struct SceneSample {
  scene::SemanticVoxelGrid grid;
  scene::CameraRig rig;
  std::vector<scene::RenderedView> views;
  std::vector<uint8_t> visible;
};

scene::ClassDistributionSpec class_spec(const RunConfig& cfg);

// Deterministic per-scene generation: seeds derive from (cfg seed, index).
SceneSample make_scene(const RunConfig& cfg, int index);

// Writes scene_%04d.ovg / _cam%d.rvw / .vmsk plus manifest.json (cameras,
// per-scene class histograms, config snapshot).
void write_dataset(const RunConfig& cfg, const std::string& dir);

int dataset_size(const std::string& dir);
SceneSample load_scene(const std::string& dir, int index);

// Dataset-wide histogram, summed from the manifest.
std::vector<int64_t> dataset_histogram(const std::string& dir);
std::vector<scene::CategoryDef> dataset_categories(const std::string& dir);

}  // namespace occ::data
