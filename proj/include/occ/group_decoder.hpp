#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "occ/nn.hpp"
#include "occ/scene.hpp"
#include "occ/tensor.hpp"

namespace occ::gd {

struct GdConfig {
  int c_m = 32;      // query width
  int c_query = 32;  // channel width of O_c / O
  int n_q = 20;      // queries per group
  int n_layers = 3;
  int heads = 8;
  int n_ref = 4;
  double w_cls = 2.0, w_bce = 5.0, w_dice = 5.0;
  double no_object_weight = 0.1;
};

// ---- semantic groups ----
constexpr double kInf = std::numeric_limits<double>::infinity();

struct SemanticGroup {
  std::vector<std::string> label_names;  // group-label order; "empty" is last
  std::vector<int> relabel;              // original category id -> group label
  std::vector<uint16_t> to_original;     // group label -> original id (kEmptyLabel if none)
  int empty_label = 0;
  int others_label = -1;
  // sample-count interval (lo, hi] per partition; middle groups only
  double fg_lo = 0, fg_hi = kInf, bg_lo = 0, bg_hi = kInf;
  std::vector<int> flagged_zero_count;  // zero-count categories forced in here
};

struct SemanticGroupSpec {
  int K = 0;
  std::vector<SemanticGroup> groups;  // coarse (G_1) to fine (G_K)
  const SemanticGroup& finest() const { return groups.back(); }
  std::string serialize() const;
};

// Groups by per-partition (foreground/background) sample-count bands; group 2
// holds the most frequent categories, group K-1 the rarest. Histogram index =
// original category id. K=1 yields only the ground-truth-label group.
SemanticGroupSpec build_semantic_groups(const std::vector<int64_t>& histogram,
                                        const std::vector<scene::CategoryDef>& cats, int K);

// One group label per voxel; kEmptyLabel maps to the group's empty label.
std::vector<int> relabel_for_group(const std::vector<uint16_t>& labels,
                                   const SemanticGroup& group);

// ---- decoder ----
struct MaskDecoderLayer {
  int heads = 8, n_ref = 4;
  LayerNormParams ln_q;
  Linear value_proj;   // c_query -> c_m
  Linear point_head;   // c_m -> heads*n_ref*3, zero-init
  Linear weight_head;  // c_m -> heads*n_ref
  Linear out_proj;     // zero-init
  SelfAttentionBlock self_attn;
  MaskDecoderLayer() = default;
  MaskDecoderLayer(ParamStore& ps, const std::string& name, const GdConfig& cfg);
  // q [Nq,c_m]; ref_logits [Nq,3] (sample points = sigmoid(ref + content));
  // oc_vol [c_query, x,y,z].
  Tensor operator()(const Tensor& q, const Tensor& ref_logits, const Tensor& oc_vol) const;
};

struct GroupPrediction {
  Tensor class_logits;  // [Nq, L+1], no-object last
  Tensor mask_logits;   // [Nq, Nvox]
};

struct GroupDecoder {
  GdConfig cfg;
  std::vector<MaskDecoderLayer> layers;  // shared across groups
  Linear mask_embed1, mask_embed2;       // shared mask-embedding MLP
  struct GroupHead {
    Tensor query_embed;  // [Nq, c_m]
    Tensor ref_points;   // [Nq, 3] logit-space reference locations
    Linear class_head;   // c_m -> L_g + 1
  };
  std::vector<GroupHead> heads;
  GroupDecoder() = default;
  GroupDecoder(ParamStore& ps, const GdConfig& cfg, const SemanticGroupSpec& spec);
  // oc_vol [c_query, cx,cy,cz]; o_flat [c_query, Nvox].
  GroupPrediction decode(int group, const Tensor& oc_vol, const Tensor& o_flat) const;
};

// m_i = E_m[i,:] . O[:,v]; returns logits [Nq, Nvox].
Tensor mask_logits_from_embeddings(const Tensor& e_m, const Tensor& o_flat);

// ---- matching and losses ----
// cost row-major [n_rows, n_cols] with n_cols <= n_rows; returns, per column,
// the assigned row of a minimum-total-cost matching.
std::vector<int> hungarian_assign(const std::vector<double>& cost, int n_rows, int n_cols);

struct Matching {
  std::vector<int> segment_label;  // group label of each gt segment
  std::vector<int> segment_query;  // matched query per segment
};

// Segments are the group labels present in the target (one per label).
// Throws if there are more segments than queries (increase n_q).
Matching hungarian_match(const GroupPrediction& pred, const std::vector<int>& target,
                         int n_labels, const GdConfig& cfg);

Tensor mask_cls_loss(const GroupPrediction& pred, const Matching& match,
                     const std::vector<int>& target, int n_labels, const GdConfig& cfg);

// Sum of matched per-group losses; targets[g] = relabel_for_group(gt, G_g).
Tensor group_losses(const std::vector<GroupPrediction>& preds,
                    const std::vector<std::vector<int>>& targets, const SemanticGroupSpec& spec,
                    const GdConfig& cfg);

// Coarse per-voxel CE on a linear readout of O; targets are original ids with
// empty mapped to n_categories.
Tensor segmentation_aux_loss(const Linear& seg_head, const Tensor& o_flat,
                             const std::vector<int>& voxel_targets);

// CE of per-pixel depth logits [D_bin, P] against gt bins (-1 = no hit).
Tensor depth_aux_loss(const Tensor& depth_logits, const std::vector<int>& bin_targets);

// Voxel argmax of p_i(label) * m_i[v] over the retained group's predictions,
// mapped back to original ids; kEmptyLabel for empty/no-object.
std::vector<uint16_t> semantic_inference(const GroupPrediction& pred,
                                         const SemanticGroup& group, int64_t nvox);

}  // namespace occ::gd
