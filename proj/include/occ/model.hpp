#pragma once

#include <array>
#include <vector>

#include "occ/config.hpp"
#include "occ/dataset.hpp"
#include "occ/group_decoder.hpp"
#include "occ/io.hpp"
#include "occ/nn.hpp"
#include "occ/optim.hpp"
#include "occ/view_transform.hpp"

namespace occ {

// Full pipeline: featurize -> lift -> pool -> encode/fuse -> implicit view
// transform -> upsample -> group decode. One instance holds every parameter.
struct OccupancyModel {
  RunConfig cfg;
  vt::VtConfig vcfg;
  gd::GdConfig gcfg;
  gd::SemanticGroupSpec spec;
  int n_categories = 0;
  std::array<int, 3> full_dims{}, cdims{};
  int64_t nvox = 0, ncompact = 0;

  ParamStore ps;
  vt::ImageFeaturizer feat;
  vt::MultiscaleEncoder3d enc;
  vt::CompactFuser fuse;
  vt::ImplicitViewTransform ivt;
  vt::UpsampleDecoder dec;
  gd::GroupDecoder gdec;
  Linear seg_head;  // auxiliary per-voxel readout, original ids + empty

  OccupancyModel(const RunConfig& rc, const gd::SemanticGroupSpec& group_spec,
                 int n_categories);

  // Per-scene geometry and supervision targets; camera-dependent but
  // parameter-free, so cache it once per scene.
  struct SceneCache {
    vt::LiftGeometry geom;
    vt::ProjectionSet proj;
    std::vector<std::vector<int>> depth_targets;  // [cam][fm pixel], -1 = no hit
    std::vector<int> voxel_targets;               // empty mapped to n_categories
    std::vector<std::vector<int>> group_targets;  // [group][voxel]
  };
  SceneCache prepare(const data::SceneSample& s) const;

  struct Forward {
    std::vector<Tensor> depth_logits;        // per camera [D_bin, P]
    Tensor o_flat;                           // [c_query, Nvox]
    std::vector<gd::GroupPrediction> preds;  // per group (finest only at inference)
  };
  Forward forward(const data::SceneSample& s, const SceneCache& cache,
                  bool all_groups) const;

  struct Losses {
    Tensor total;
    double depth = 0, seg = 0, mask_cls = 0;
  };
  Losses losses(const Forward& f, const SceneCache& cache) const;

  // Finest-group semantic inference back onto the scene grid.
  scene::SemanticVoxelGrid infer(const data::SceneSample& s, const SceneCache& cache) const;

  std::vector<Tensor> parameters() const { return ps.tensors(); }
};

io::Checkpoint snapshot(const OccupancyModel& m, const AdamW& opt, uint64_t step);
// Copies tensor payloads and optimizer state in place; throws on name/shape
// or config-hash mismatch.
void restore(OccupancyModel& m, AdamW& opt, const io::Checkpoint& ck);

struct TrainLogEntry {
  uint64_t step = 0;
  double total = 0, depth = 0, seg = 0, mask_cls = 0, grad_norm = 0;
  bool finite() const;
  std::string line() const;
};

struct Trainer {
  OccupancyModel& model;
  AdamW opt;
  std::vector<Tensor> params;
  uint64_t step = 0;

  explicit Trainer(OccupancyModel& m);
  TrainLogEntry train_step(const data::SceneSample& s,
                           const OccupancyModel::SceneCache& cache);
};

}  // namespace occ
