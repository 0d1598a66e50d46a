#pragma once

#include <array>
#include <utility>
#include <vector>

#include "occ/nn.hpp"
#include "occ/ops_conv.hpp"
#include "occ/ops_sample.hpp"
#include "occ/scene.hpp"
#include "occ/tensor.hpp"

namespace occ::vt {

struct VtConfig {
  int img_channels = 3;
  int c_feat = 8;    // C: image features and the lifted/EVT volume
  int c_query = 32;  // C_Q: compact volume embedding
  int d_bins = 16;
  double d_min = 0.5;
  double d_max = 12.5;
  int heads = 8;
  int n_ref = 4;
  int img_stride = 4;  // backbone downsample (two stride-2 convs)
  std::array<int, 3> sigma = {4, 4, 1};
  int levels = 3;
  double offset_scale = 0.1;  // normalized units per unit of offset-head output

  double bin_center(int b) const {
    return d_min + (b + 0.5) * (d_max - d_min) / d_bins;
  }
};

// ---- shape arithmetic (checkable at paper scale without allocation) ----
std::vector<Shape> multiscale_shapes(int c, int X, int Y, int Z, int levels);
std::array<int, 3> compact_dims(std::array<int, 3> dims, std::array<int, 3> sigma);
int64_t cell_count(std::array<int, 3> dims);

// ---- image featurizer ----
struct ImageFeaturizer {
  VtConfig cfg;
  Tensor conv1_w, conv1_b, conv2_w, conv2_b;
  Tensor feat_w, feat_b;
  Tensor depth_w, depth_b;
  ImageFeaturizer() = default;
  ImageFeaturizer(ParamStore& ps, const VtConfig& cfg);
  // image [3,H,W] -> (features [C,h,w], depth logits [D,h,w]); the depth
  // distribution is softmax(logits, bin axis).
  std::pair<Tensor, Tensor> operator()(const Tensor& image) const;
};

// ---- lift geometry (pure camera/grid arithmetic, cached per rig) ----
// World position of the lifted point for feature-map pixel (fx_ix, fy_ix)
// at metric depth d along the unit pixel ray.
Eigen::Vector3d lift_point_position(const scene::Camera& cam, int img_stride, int fm_x,
                                    int fm_y, double depth);

struct LiftGeometry {
  int fm_w = 0, fm_h = 0;
  // per camera: flat destination voxel (z-fastest, -1 out of range) for each
  // (bin, fm pixel), bin-major: idx = b*fm_h*fm_w + y*fm_w + x
  std::vector<std::vector<int64_t>> voxel_of;
};
LiftGeometry build_lift_geometry(const scene::CameraRig& rig, const VtConfig& cfg,
                                 const scene::SemanticVoxelGrid& frame);

// F [C,h*w], depth logits [D,h*w] -> pseudo point features [C, D*h*w]
// via the outer product F (x) softmax(D).
Tensor lift_outer_product(const Tensor& feats, const Tensor& depth_logits);

// Scatter-sum lifted features of all cameras into the EVT volume O_E.
Tensor voxel_pool(const std::vector<Tensor>& lifted_per_cam, const LiftGeometry& geom,
                  int64_t ncells);

// ---- multi-scale 3D encoder ----
struct ResBlock3d {
  Tensor w1, b1, w2, b2;
  ResBlock3d() = default;
  ResBlock3d(ParamStore& ps, const std::string& name, int c);
  Tensor operator()(const Tensor& x) const;
};

struct MultiscaleEncoder3d {
  int levels = 3;
  std::vector<Tensor> down_w, down_b;  // stride-2 transitions (levels-1)
  std::vector<ResBlock3d> blocks;      // two per level
  MultiscaleEncoder3d() = default;
  MultiscaleEncoder3d(ParamStore& ps, const VtConfig& cfg);
  std::vector<Tensor> operator()(const Tensor& o_e) const;  // pyramid, fine to coarse
};

// Trilinear resample of a feature volume onto the centers of a target grid
// sharing the same metric frame (grids differ only by cell counts).
Tensor resample_volume(const Tensor& vol, std::array<int, 3> target_dims);

struct CompactFuser {
  Tensor proj_w, proj_b;  // 1x1x1 conv over concatenated pyramid channels
  CompactFuser() = default;
  CompactFuser(ParamStore& ps, const VtConfig& cfg);
  Tensor operator()(const std::vector<Tensor>& pyramid, std::array<int, 3> cdims) const;
};

// ---- implicit view transformation ----
struct ProjectionSet {
  int n_queries = 0;
  std::vector<std::vector<double>> uv;      // [cam][q*2] feature-map normalized (u,v)
  std::vector<std::vector<double>> uv_px;   // [cam][q*2] raw image pixels, for tests
  std::vector<std::vector<uint8_t>> valid;  // [cam][q]
};
ProjectionSet project_voxel_centers(const std::vector<Eigen::Vector3d>& centers,
                                    const scene::CameraRig& rig, const VtConfig& cfg, int fm_w,
                                    int fm_h);

struct SpatialCrossAttention2d {
  VtConfig cfg;
  LayerNormParams ln;
  Linear value_proj;   // c_feat -> c_query
  Linear offset_head;  // c_query -> heads*n_ref*2, zero-init
  Linear weight_head;  // c_query -> heads*n_ref
  Linear out_proj;     // zero-init: IVT starts as identity over the EVT result
  SpatialCrossAttention2d() = default;
  SpatialCrossAttention2d(ParamStore& ps, const std::string& name, const VtConfig& cfg);
  // queries [Nq, C_Q]; feats per camera [C,h,w].
  Tensor operator()(const Tensor& queries, const std::vector<Tensor>& feats,
                    const ProjectionSet& proj) const;
};

struct ImplicitViewTransform {
  SpatialCrossAttention2d sca;
  SelfAttentionBlock self_attn;  // the single IVT transformer layer
  Tensor pos_embed;              // learned per-voxel embedding [Ncompact, C_Q]
  ImplicitViewTransform() = default;
  ImplicitViewTransform(ParamStore& ps, const VtConfig& cfg, int n_compact);
  Tensor operator()(const Tensor& compact_queries, const std::vector<Tensor>& feats,
                    const ProjectionSet& proj) const;
};

// ---- U-Net style upsampling back to full resolution ----
struct UpsampleDecoder {
  VtConfig cfg;
  struct Stage {
    Tensor up_w, up_b;      // transposed conv
    Tensor merge_w, merge_b;  // 3^3 conv after skip concat
    std::array<int, 3> stride;
    int skip_level;
  };
  std::vector<Stage> stages;
  UpsampleDecoder() = default;
  UpsampleDecoder(ParamStore& ps, const VtConfig& cfg, std::array<int, 3> full_dims);
  // compact [C_Q, cx,cy,cz]; pyramid from the multiscale encoder. Optional
  // skip gate of one multiplier per stage (tests use 0 to sever skips).
  Tensor operator()(const Tensor& compact, const std::vector<Tensor>& pyramid,
                    std::array<int, 3> full_dims,
                    const std::vector<double>& skip_gate = {}) const;
};

}  // namespace occ::vt
