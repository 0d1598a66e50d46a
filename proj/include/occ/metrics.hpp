#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "occ/scene.hpp"

namespace occ::metrics {

struct EvalReport {
  // pooled confusion counts; index = original category id
  std::vector<std::string> names;
  std::vector<int64_t> tp, fp, fn;
  std::vector<int64_t> gt_count;
  int64_t geo_tp = 0, geo_fp = 0, geo_fn = 0;
  bool visible_mask_applied = false;
  bool proxy_applied = false;

  double geometry_iou() const;
  // NaN for categories absent from both gt and pred
  std::vector<double> per_class_iou() const;
  double miou() const;  // unweighted mean over categories present in gt or pred
  std::string table() const;      // human-readable, count-ordered
  std::string key_values() const;  // machine-readable document
};

double geometry_iou(const scene::SemanticVoxelGrid& pred, const scene::SemanticVoxelGrid& gt,
                    const std::vector<uint8_t>* visible = nullptr);

EvalReport semantic_miou(const scene::SemanticVoxelGrid& pred,
                         const scene::SemanticVoxelGrid& gt,
                         const std::vector<uint8_t>* visible = nullptr);

// Keeps predicted occupancy but replaces semantics with gt labels wherever
// both grids are occupied, then re-scores.
EvalReport gt_substitution_proxy(const scene::SemanticVoxelGrid& pred,
                                 const scene::SemanticVoxelGrid& gt,
                                 const std::vector<uint8_t>* visible = nullptr);

// Pools TP/FP/FN across scenes (dataset-level IoU, not per-scene averaging).
EvalReport per_class_report(const std::vector<EvalReport>& reports);

}  // namespace occ::metrics
