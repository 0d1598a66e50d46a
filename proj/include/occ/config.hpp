#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "occ/group_decoder.hpp"
#include "occ/view_transform.hpp"

namespace occ {

// Flat run configuration; every field maps to one dotted key in the
// key = value config format, and all of them are CLI-overridable.
struct RunConfig {
  // scene / dataset
  int n_scenes = 1;
  int grid_x = 32, grid_y = 32, grid_z = 8;
  double voxel_size = 0.5;
  int n_cameras = 4;
  int img_w = 56, img_h = 32;
  int n_object_classes = 0;          // 0 = stock desk category set
  double long_tail_exponent = 0.0;   // used when n_object_classes > 0
  double free_fraction = 0.0;        // target empty fraction; 0 = spec default
  // model
  int c_feat = 8, c_query = 32, c_mask = 32;
  int d_bins = 16;
  double d_min = 0.5, d_max = 12.5;
  int heads = 8, n_ref = 4;
  int n_layers = 3, n_q = 20;
  int sigma_x = 4, sigma_y = 4, sigma_z = 1;
  int enc_levels = 3;
  int img_stride = 4;
  bool use_ivt = true;
  // grouping
  int k_groups = 4;
  // loss weights
  double w_depth = 1.0, w_seg = 10.0, w_mask_cls = 1.0;
  // optimizer / schedule
  double lr = 2e-4;
  double weight_decay = 1e-4;
  double clip_norm = 5.0;
  int epochs = 24;
  int steps = 0;  // 0 = epochs * n_scenes
  int batch_size = 1;
  int log_every = 10;
  int checkpoint_every = 100;
  uint64_t seed = 1;
  std::string out_dir = "runs/default";

  int total_steps() const { return steps > 0 ? steps : epochs * n_scenes; }
  vt::VtConfig vt_config() const;
  gd::GdConfig gd_config() const;
  void validate() const;
};

// All known keys in canonical emission order.
std::vector<std::string> config_keys();

// Throws std::runtime_error on unknown key or unparsable value.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_value(const RunConfig& cfg, const std::string& key);

// Flat `key = value` file; '#' starts a comment; unknown keys are errors.
RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text);

// Canonical form: every key, in config_keys() order, shortest-round-trip
// numeric formatting. Equal configs serialize identically.
std::string serialize_config(const RunConfig& cfg);
uint64_t config_hash(const RunConfig& cfg);

}  // namespace occ
