#include "occ/view_transform.hpp"

#include <cmath>
#include <stdexcept>

namespace occ::vt {

namespace {

Tensor conv_param(ParamStore& ps, const std::string& name, Shape s) {
  int64_t fan_in = 1;
  for (size_t i = 1; i < s.size(); ++i) fan_in *= s[i];
  return ps.add(name, std::move(s), std::sqrt(2.0 / static_cast<double>(fan_in)));
}

int halve(int d) {
  if (d == 1) return 1;
  if (d % 2 != 0) throw std::invalid_argument("multiscale: odd dimension " + std::to_string(d));
  return d / 2;
}

}  // namespace

std::vector<Shape> multiscale_shapes(int c, int X, int Y, int Z, int levels) {
  std::vector<Shape> out;
  for (int l = 0; l < levels; ++l) {
    out.push_back({c, X, Y, Z});
    c *= 2;
    X = halve(X);
    Y = halve(Y);
    Z = halve(Z);
  }
  return out;
}

std::array<int, 3> compact_dims(std::array<int, 3> dims, std::array<int, 3> sigma) {
  std::array<int, 3> out{};
  for (int i = 0; i < 3; ++i) {
    if (sigma[i] < 1 || dims[i] % sigma[i] != 0)
      throw std::invalid_argument("compact_dims: sigma must divide grid dims");
    out[i] = dims[i] / sigma[i];
  }
  return out;
}

int64_t cell_count(std::array<int, 3> dims) {
  return static_cast<int64_t>(dims[0]) * dims[1] * dims[2];
}

// ---- image featurizer ----

ImageFeaturizer::ImageFeaturizer(ParamStore& ps, const VtConfig& cfg_) : cfg(cfg_) {
  const int hid = 16;
  conv1_w = conv_param(ps, "feat.conv1.w", {hid, cfg.img_channels, 3, 3});
  conv1_b = ps.add_zeros("feat.conv1.b", {hid});
  conv2_w = conv_param(ps, "feat.conv2.w", {hid, hid, 3, 3});
  conv2_b = ps.add_zeros("feat.conv2.b", {hid});
  feat_w = conv_param(ps, "feat.out.w", {cfg.c_feat, hid, 1, 1});
  feat_b = ps.add_zeros("feat.out.b", {cfg.c_feat});
  depth_w = conv_param(ps, "feat.depth.w", {cfg.d_bins, hid, 1, 1});
  depth_b = ps.add_zeros("feat.depth.b", {cfg.d_bins});
}

std::pair<Tensor, Tensor> ImageFeaturizer::operator()(const Tensor& image) const {
  Tensor h = relu(conv2d(image, conv1_w, conv1_b, 2, 1));
  h = relu(conv2d(h, conv2_w, conv2_b, 2, 1));
  Tensor feats = conv2d(h, feat_w, feat_b, 1, 0);
  Tensor depth_logits = conv2d(h, depth_w, depth_b, 1, 0);
  return {feats, depth_logits};
}

// ---- lift geometry ----

Eigen::Vector3d lift_point_position(const scene::Camera& cam, int img_stride, int fm_x, int fm_y,
                                    double depth) {
  double u = (fm_x + 0.5) * img_stride;
  double v = (fm_y + 0.5) * img_stride;
  return cam.center() + depth * cam.pixel_ray(u, v);
}

LiftGeometry build_lift_geometry(const scene::CameraRig& rig, const VtConfig& cfg,
                                 const scene::SemanticVoxelGrid& frame) {
  LiftGeometry g;
  g.voxel_of.reserve(rig.cameras.size());
  for (const auto& cam : rig.cameras) {
    int fw = cam.width / cfg.img_stride, fh = cam.height / cfg.img_stride;
    if (g.fm_w == 0) {
      g.fm_w = fw;
      g.fm_h = fh;
    } else if (fw != g.fm_w || fh != g.fm_h) {
      throw std::invalid_argument("build_lift_geometry: mixed camera resolutions");
    }
    std::vector<int64_t> vox(static_cast<size_t>(cfg.d_bins) * fh * fw, -1);
    for (int b = 0; b < cfg.d_bins; ++b) {
      double d = cfg.bin_center(b);
      for (int y = 0; y < fh; ++y)
        for (int x = 0; x < fw; ++x) {
          Eigen::Vector3d p = lift_point_position(cam, cfg.img_stride, x, y, d);
          Eigen::Vector3d q = (p - frame.origin) / frame.voxel_size;
          int vx = static_cast<int>(std::floor(q.x()));
          int vy = static_cast<int>(std::floor(q.y()));
          int vz = static_cast<int>(std::floor(q.z()));
          if (frame.in_bounds(vx, vy, vz))
            vox[(static_cast<size_t>(b) * fh + y) * fw + x] = frame.idx(vx, vy, vz);
        }
    }
    g.voxel_of.push_back(std::move(vox));
  }
  return g;
}

Tensor lift_outer_product(const Tensor& feats, const Tensor& depth_logits) {
  int c = feats.dim(0), b = depth_logits.dim(0);
  int64_t p = feats.size() / c;
  Tensor f2 = reshape(feats, {c, static_cast<int>(p)});
  Tensor dist = softmax(reshape(depth_logits, {b, static_cast<int>(p)}), 0);
  Tensor lifted = outer_lift(f2, dist);  // [C,B,P]
  return reshape(lifted, {c, static_cast<int>(b * p)});
}

Tensor voxel_pool(const std::vector<Tensor>& lifted_per_cam, const LiftGeometry& geom,
                  int64_t ncells) {
  Tensor acc;
  for (size_t i = 0; i < lifted_per_cam.size(); ++i) {
    Tensor pooled = scatter_sum(lifted_per_cam[i], geom.voxel_of[i], ncells);
    acc = acc.defined() ? add(acc, pooled) : pooled;
  }
  return acc;
}

// ---- multi-scale 3D encoder ----

ResBlock3d::ResBlock3d(ParamStore& ps, const std::string& name, int c) {
  w1 = conv_param(ps, name + ".w1", {c, c, 3, 3, 3});
  b1 = ps.add_zeros(name + ".b1", {c});
  w2 = conv_param(ps, name + ".w2", {c, c, 3, 3, 3});
  b2 = ps.add_zeros(name + ".b2", {c});
}

Tensor ResBlock3d::operator()(const Tensor& x) const {
  Tensor h = relu(conv3d(x, w1, b1, {1, 1, 1}, {1, 1, 1}));
  return relu(add(x, conv3d(h, w2, b2, {1, 1, 1}, {1, 1, 1})));
}

MultiscaleEncoder3d::MultiscaleEncoder3d(ParamStore& ps, const VtConfig& cfg)
    : levels(cfg.levels) {
  for (int l = 0; l < levels; ++l) {
    int c = cfg.c_feat << l;
    std::string pre = "enc.l" + std::to_string(l);
    blocks.emplace_back(ps, pre + ".rb0", c);
    blocks.emplace_back(ps, pre + ".rb1", c);
    if (l + 1 < levels) {
      down_w.push_back(conv_param(ps, pre + ".down.w", {c * 2, c, 3, 3, 3}));
      down_b.push_back(ps.add_zeros(pre + ".down.b", {c * 2}));
    }
  }
}

std::vector<Tensor> MultiscaleEncoder3d::operator()(const Tensor& o_e) const {
  std::vector<Tensor> pyr;
  Tensor x = o_e;
  for (int l = 0; l < levels; ++l) {
    x = blocks[2 * l + 1](blocks[2 * l](x));
    pyr.push_back(x);
    if (l + 1 < levels) x = relu(conv3d(x, down_w[l], down_b[l], {2, 2, 2}, {1, 1, 1}));
  }
  return pyr;
}

// ---- fusion to the compact volume ----

Tensor resample_volume(const Tensor& vol, std::array<int, 3> target_dims) {
  std::array<int, 3> src = {vol.dim(1), vol.dim(2), vol.dim(3)};
  auto [tx, ty, tz] = target_dims;
  int64_t p = cell_count(target_dims);
  std::vector<double> pts(static_cast<size_t>(p) * 3);
  auto coord = [](int i, int s, int t) {
    if (s == 1) return 0.0;
    // target cell centers expressed in the source grid's node lattice, then
    // clamped so boundary cells are not treated as out of range
    double c = (i + 0.5) * static_cast<double>(s) / t - 0.5;
    return std::clamp(c / (s - 1), 0.0, 1.0);
  };
  size_t k = 0;
  for (int i = 0; i < tx; ++i)
    for (int j = 0; j < ty; ++j)
      for (int l = 0; l < tz; ++l) {
        pts[k++] = coord(i, src[0], tx);
        pts[k++] = coord(j, src[1], ty);
        pts[k++] = coord(l, src[2], tz);
      }
  Tensor points = Tensor::from({static_cast<int>(p), 3}, std::move(pts));
  Tensor out = trilinear_sample(vol, points);  // [C,P]
  return reshape(out, {vol.dim(0), tx, ty, tz});
}

CompactFuser::CompactFuser(ParamStore& ps, const VtConfig& cfg) {
  int ctot = cfg.c_feat * ((1 << cfg.levels) - 1);
  proj_w = conv_param(ps, "fuse.proj.w", {cfg.c_query, ctot, 1, 1, 1});
  proj_b = ps.add_zeros("fuse.proj.b", {cfg.c_query});
}

Tensor CompactFuser::operator()(const std::vector<Tensor>& pyramid,
                                std::array<int, 3> cdims) const {
  std::vector<Tensor> levels;
  levels.reserve(pyramid.size());
  for (const Tensor& lv : pyramid) levels.push_back(resample_volume(lv, cdims));
  Tensor cat = concat(levels, 0);
  return conv3d(cat, proj_w, proj_b, {1, 1, 1}, {0, 0, 0});
}

// ---- implicit view transformation ----

ProjectionSet project_voxel_centers(const std::vector<Eigen::Vector3d>& centers,
                                    const scene::CameraRig& rig, const VtConfig& cfg, int fm_w,
                                    int fm_h) {
  ProjectionSet ps;
  ps.n_queries = static_cast<int>(centers.size());
  for (const auto& cam : rig.cameras) {
    std::vector<double> uv(centers.size() * 2, 0.0), uv_px(centers.size() * 2, 0.0);
    std::vector<uint8_t> valid(centers.size(), 0);
    for (size_t q = 0; q < centers.size(); ++q) {
      double u, v, z;
      bool ok = cam.project(centers[q], &u, &v, &z);
      uv_px[2 * q] = u;
      uv_px[2 * q + 1] = v;
      if (!ok) continue;
      valid[q] = 1;
      // image pixel -> feature-map node lattice (fm cell j is centered on
      // image coordinate (j+0.5)*stride)
      uv[2 * q] = (u / cfg.img_stride - 0.5) / (fm_w - 1);
      uv[2 * q + 1] = (v / cfg.img_stride - 0.5) / (fm_h - 1);
    }
    ps.uv.push_back(std::move(uv));
    ps.uv_px.push_back(std::move(uv_px));
    ps.valid.push_back(std::move(valid));
  }
  return ps;
}

SpatialCrossAttention2d::SpatialCrossAttention2d(ParamStore& ps, const std::string& name,
                                                 const VtConfig& cfg_)
    : cfg(cfg_),
      ln(ps, name + ".ln", cfg_.c_query),
      value_proj(ps, name + ".value", cfg_.c_feat, cfg_.c_query),
      offset_head(ps, name + ".offset", cfg_.c_query, cfg_.heads * cfg_.n_ref * 2,
                  /*zero_init=*/true),
      weight_head(ps, name + ".weight", cfg_.c_query, cfg_.heads * cfg_.n_ref),
      out_proj(ps, name + ".out", cfg_.c_query, cfg_.c_query, /*zero_init=*/true) {
  // fixed small dilation pattern: head h looks along angle 2*pi*h/heads at
  // radius (r+1)/n_ref (bias units; scaled by offset_scale in forward)
  auto& b = offset_head.b.data();
  for (int h = 0; h < cfg.heads; ++h) {
    double th = 2.0 * M_PI * h / cfg.heads;
    for (int r = 0; r < cfg.n_ref; ++r) {
      b[(static_cast<size_t>(h) * cfg.n_ref + r) * 2] = std::cos(th) * (r + 1.0) / cfg.n_ref;
      b[(static_cast<size_t>(h) * cfg.n_ref + r) * 2 + 1] = std::sin(th) * (r + 1.0) / cfg.n_ref;
    }
  }
}

Tensor SpatialCrossAttention2d::operator()(const Tensor& queries, const std::vector<Tensor>& feats,
                                           const ProjectionSet& proj) const {
  int nq = queries.dim(0), cq = queries.dim(1);
  int h = cfg.heads, r = cfg.n_ref;
  Tensor qn = ln(queries);
  Tensor off = scale(offset_head(qn), cfg.offset_scale);  // [nq, h*r*2]
  Tensor wlog = reshape(weight_head(qn), {nq * h, r});
  Tensor wsm = reshape(softmax(wlog, 1), {nq, h, r});

  // per-query valid-camera counts, for masked averaging
  std::vector<int> count(nq, 0);
  for (const auto& v : proj.valid)
    for (int q = 0; q < nq; ++q) count[q] += v[q];

  Tensor acc;
  for (size_t c = 0; c < feats.size(); ++c) {
    const Tensor& f = feats[c];
    int fc = f.dim(0), fh = f.dim(1), fw = f.dim(2);
    Tensor val2d = transpose2d(value_proj(transpose2d(reshape(f, {fc, fh * fw}))));
    Tensor value = reshape(val2d, {cq, fh, fw});

    // reference points: projected voxel center repeated over (head, ref)
    std::vector<double> base(static_cast<size_t>(nq) * h * r * 2);
    for (int q = 0; q < nq; ++q)
      for (int i = 0; i < h * r; ++i) {
        base[(static_cast<size_t>(q) * h * r + i) * 2] = proj.uv[c][2 * q];
        base[(static_cast<size_t>(q) * h * r + i) * 2 + 1] = proj.uv[c][2 * q + 1];
      }
    Tensor points = reshape(add(off, Tensor::from({nq, h * r * 2}, std::move(base))),
                            {nq, h, r, 2});
    Tensor sampled = deform_attend_2d(value, points, wsm);  // [nq, cq]

    std::vector<double> m(static_cast<size_t>(nq) * cq);
    for (int q = 0; q < nq; ++q) {
      double w = proj.valid[c][q] ? 1.0 / std::max(1, count[q]) : 0.0;
      std::fill_n(m.begin() + static_cast<size_t>(q) * cq, cq, w);
    }
    Tensor masked = mul(sampled, Tensor::from({nq, cq}, std::move(m)));
    acc = acc.defined() ? add(acc, masked) : masked;
  }

  Tensor out = out_proj(acc);
  // queries seen by no camera pass through unchanged via the residual
  std::vector<double> any(static_cast<size_t>(nq) * cq);
  for (int q = 0; q < nq; ++q)
    std::fill_n(any.begin() + static_cast<size_t>(q) * cq, cq, count[q] > 0 ? 1.0 : 0.0);
  return add(queries, mul(out, Tensor::from({nq, cq}, std::move(any))));
}

ImplicitViewTransform::ImplicitViewTransform(ParamStore& ps, const VtConfig& cfg, int n_compact)
    : sca(ps, "ivt.sca", cfg), self_attn(ps, "ivt.attn", cfg.c_query, cfg.heads) {
  pos_embed = ps.add("ivt.pos", {n_compact, cfg.c_query}, 0.02);
}

Tensor ImplicitViewTransform::operator()(const Tensor& compact_queries,
                                         const std::vector<Tensor>& feats,
                                         const ProjectionSet& proj) const {
  Tensor x = sca(compact_queries, feats, proj);
  return self_attn(x, pos_embed);
}

// ---- upsampling decoder ----

UpsampleDecoder::UpsampleDecoder(ParamStore& ps, const VtConfig& cfg_,
                                 std::array<int, 3> full_dims)
    : cfg(cfg_) {
  auto sigma = cfg.sigma;
  if (sigma[0] != sigma[1] || (sigma[0] & (sigma[0] - 1)) || (sigma[2] & (sigma[2] - 1)))
    throw std::invalid_argument("UpsampleDecoder: sigma must be (2^n, 2^n, 2^m)");
  int n_stages = 0;
  for (int s = sigma[0]; s > 1; s /= 2) ++n_stages;
  int n_z = 0;
  for (int s = sigma[2]; s > 1; s /= 2) ++n_z;
  if (n_z > n_stages) throw std::invalid_argument("UpsampleDecoder: sigma_z > sigma_xy");

  std::array<int, 3> cur = compact_dims(full_dims, sigma);
  int cq = cfg.c_query;
  for (int s = 0; s < n_stages; ++s) {
    Stage st;
    int zs = (s >= n_stages - n_z) ? 2 : 1;  // upsample z in the final stages
    st.stride = {2, 2, zs};
    std::string pre = "up.s" + std::to_string(s);
    st.up_w = conv_param(ps, pre + ".up.w", {cq, cq, 2, 2, zs});
    st.up_b = ps.add_zeros(pre + ".up.b", {cq});
    for (int i = 0; i < 3; ++i) cur[i] *= st.stride[i];
    int lvl = 0;
    while ((full_dims[0] >> (lvl + 1)) >= cur[0] && lvl + 1 < cfg.levels) ++lvl;
    st.skip_level = lvl;
    int skip_c = cfg.c_feat << lvl;
    st.merge_w = conv_param(ps, pre + ".merge.w", {cq, cq + skip_c, 3, 3, 3});
    st.merge_b = ps.add_zeros(pre + ".merge.b", {cq});
    stages.push_back(std::move(st));
  }
}

Tensor UpsampleDecoder::operator()(const Tensor& compact, const std::vector<Tensor>& pyramid,
                                   std::array<int, 3> full_dims,
                                   const std::vector<double>& skip_gate) const {
  std::array<int, 3> cur = compact_dims(full_dims, cfg.sigma);
  Tensor x = compact;
  for (size_t s = 0; s < stages.size(); ++s) {
    const Stage& st = stages[s];
    for (int i = 0; i < 3; ++i) cur[i] *= st.stride[i];
    x = relu(conv3d_transpose(x, st.up_w, st.up_b, st.stride, {0, 0, 0},
                              {cur[0], cur[1], cur[2]}));
    Tensor skip = resample_volume(pyramid[st.skip_level], cur);
    if (!skip_gate.empty()) skip = scale(skip, skip_gate[s]);
    x = relu(conv3d(concat({x, skip}, 0), st.merge_w, st.merge_b, {1, 1, 1}, {1, 1, 1}));
  }
  return x;
}

}  // namespace occ::vt
