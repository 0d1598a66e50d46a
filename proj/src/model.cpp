#include "occ/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace occ {

namespace {

std::vector<Eigen::Vector3d> compact_centers(const scene::SemanticVoxelGrid& grid,
                                             const std::array<int, 3>& cdims,
                                             const std::array<int, 3>& sigma) {
  std::vector<Eigen::Vector3d> centers;
  centers.reserve(static_cast<size_t>(cdims[0]) * cdims[1] * cdims[2]);
  for (int x = 0; x < cdims[0]; ++x)
    for (int y = 0; y < cdims[1]; ++y)
      for (int z = 0; z < cdims[2]; ++z)
        centers.push_back(grid.origin +
                          grid.voxel_size * Eigen::Vector3d((x + 0.5) * sigma[0],
                                                            (y + 0.5) * sigma[1],
                                                            (z + 0.5) * sigma[2]));
  return centers;
}

}  // namespace

OccupancyModel::OccupancyModel(const RunConfig& rc, const gd::SemanticGroupSpec& group_spec,
                               int n_cats)
    : cfg(rc),
      vcfg(rc.vt_config()),
      gcfg(rc.gd_config()),
      spec(group_spec),
      n_categories(n_cats),
      full_dims{rc.grid_x, rc.grid_y, rc.grid_z},
      cdims(vt::compact_dims(full_dims, vcfg.sigma)),
      nvox(vt::cell_count(full_dims)),
      ncompact(vt::cell_count(cdims)),
      ps(rc.seed ^ 0xA5A5A5A5A5A5A5A5ull),
      feat(ps, vcfg),
      enc(ps, vcfg),
      fuse(ps, vcfg),
      ivt(ps, vcfg, static_cast<int>(ncompact)),
      dec(ps, vcfg, full_dims),
      gdec(ps, gcfg, spec),
      seg_head(ps, "seg_head", rc.c_query, n_cats + 1) {
  cfg.validate();
}

OccupancyModel::SceneCache OccupancyModel::prepare(const data::SceneSample& s) const {
  SceneCache cache;
  cache.geom = vt::build_lift_geometry(s.rig, vcfg, s.grid);
  cache.proj = vt::project_voxel_centers(compact_centers(s.grid, cdims, vcfg.sigma), s.rig,
                                         vcfg, cache.geom.fm_w, cache.geom.fm_h);

  const int fw = cache.geom.fm_w, fh = cache.geom.fm_h;
  const double bw = (vcfg.d_max - vcfg.d_min) / vcfg.d_bins;
  for (size_t c = 0; c < s.views.size(); ++c) {
    const auto& view = s.views[c];
    std::vector<int> tgt(static_cast<size_t>(fh) * fw, -1);
    for (int y = 0; y < fh; ++y)
      for (int x = 0; x < fw; ++x) {
        int iu = x * vcfg.img_stride + vcfg.img_stride / 2;
        int iv = y * vcfg.img_stride + vcfg.img_stride / 2;
        double d = view.depth[static_cast<size_t>(iv) * view.width + iu];
        if (!std::isfinite(d) || d < vcfg.d_min || d >= vcfg.d_max) continue;
        tgt[static_cast<size_t>(y) * fw + x] = static_cast<int>((d - vcfg.d_min) / bw);
      }
    cache.depth_targets.push_back(std::move(tgt));
  }

  cache.voxel_targets.resize(static_cast<size_t>(s.grid.nvox()));
  for (int64_t i = 0; i < s.grid.nvox(); ++i)
    cache.voxel_targets[i] =
        s.grid.labels[i] == scene::kEmptyLabel ? n_categories : s.grid.labels[i];

  for (const auto& g : spec.groups)
    cache.group_targets.push_back(gd::relabel_for_group(s.grid.labels, g));
  return cache;
}

OccupancyModel::Forward OccupancyModel::forward(const data::SceneSample& s,
                                                const SceneCache& cache,
                                                bool all_groups) const {
  Forward out;
  std::vector<Tensor> lifted, fmaps;
  for (size_t c = 0; c < s.views.size(); ++c) {
    const auto& view = s.views[c];
    Tensor image = Tensor::from({3, view.height, view.width}, view.shading);
    auto [f, dl] = feat(image);
    fmaps.push_back(f);
    lifted.push_back(vt::lift_outer_product(f, dl));
    out.depth_logits.push_back(
        reshape(dl, {vcfg.d_bins, cache.geom.fm_h * cache.geom.fm_w}));
  }

  Tensor o_e = reshape(vt::voxel_pool(lifted, cache.geom, nvox),
                       {vcfg.c_feat, full_dims[0], full_dims[1], full_dims[2]});
  auto pyr = enc(o_e);
  Tensor oc = fuse(pyr, cdims);
  Tensor queries = transpose2d(reshape(oc, {vcfg.c_query, static_cast<int>(ncompact)}));
  if (cfg.use_ivt) queries = ivt(queries, fmaps, cache.proj);
  Tensor ocv =
      reshape(transpose2d(queries), {vcfg.c_query, cdims[0], cdims[1], cdims[2]});
  Tensor o = dec(ocv, pyr, full_dims);
  out.o_flat = reshape(o, {vcfg.c_query, static_cast<int>(nvox)});

  if (all_groups) {
    for (int g = 0; g < spec.K; ++g) out.preds.push_back(gdec.decode(g, ocv, out.o_flat));
  } else {
    out.preds.push_back(gdec.decode(spec.K - 1, ocv, out.o_flat));
  }
  return out;
}

OccupancyModel::Losses OccupancyModel::losses(const Forward& f,
                                              const SceneCache& cache) const {
  Losses L;
  Tensor depth;
  for (size_t c = 0; c < f.depth_logits.size(); ++c) {
    Tensor l = gd::depth_aux_loss(f.depth_logits[c], cache.depth_targets[c]);
    depth = depth.defined() ? add(depth, l) : l;
  }
  depth = scale(depth, 1.0 / static_cast<double>(f.depth_logits.size()));
  Tensor seg = gd::segmentation_aux_loss(seg_head, f.o_flat, cache.voxel_targets);
  Tensor mask = gd::group_losses(f.preds, cache.group_targets, spec, gcfg);

  L.depth = depth.item();
  L.seg = seg.item();
  L.mask_cls = mask.item();
  L.total = add(add(scale(depth, cfg.w_depth), scale(seg, cfg.w_seg)),
                scale(mask, cfg.w_mask_cls));
  return L;
}

scene::SemanticVoxelGrid OccupancyModel::infer(const data::SceneSample& s,
                                               const SceneCache& cache) const {
  auto f = forward(s, cache, /*all_groups=*/false);
  scene::SemanticVoxelGrid out = s.grid;
  out.labels = gd::semantic_inference(f.preds[0], spec.finest(), nvox);
  return out;
}

io::Checkpoint snapshot(const OccupancyModel& m, const AdamW& opt, uint64_t step) {
  io::Checkpoint ck;
  ck.step = step;
  ck.config_hash = config_hash(m.cfg);
  ck.tensors = m.ps.entries();
  ck.opt_m = opt.m;
  ck.opt_v = opt.v;
  return ck;
}

void restore(OccupancyModel& m, AdamW& opt, const io::Checkpoint& ck) {
  if (ck.config_hash != config_hash(m.cfg))
    throw std::runtime_error("checkpoint: config hash mismatch");
  const auto& entries = m.ps.entries();
  if (ck.tensors.size() != entries.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (size_t i = 0; i < entries.size(); ++i) {
    if (ck.tensors[i].first != entries[i].first)
      throw std::runtime_error("checkpoint: parameter name mismatch at '" +
                               ck.tensors[i].first + "'");
    if (ck.tensors[i].second.shape() != entries[i].second.shape())
      throw std::runtime_error("checkpoint: shape mismatch at '" + entries[i].first + "'");
    Tensor dst = entries[i].second;
    dst.data() = ck.tensors[i].second.data();
  }
  opt.m = ck.opt_m;
  opt.v = ck.opt_v;
  opt.step_count = static_cast<int64_t>(ck.step);
}

bool TrainLogEntry::finite() const {
  return std::isfinite(total) && std::isfinite(depth) && std::isfinite(seg) &&
         std::isfinite(mask_cls) && std::isfinite(grad_norm);
}

std::string TrainLogEntry::line() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "step " << step << " total " << total << " depth " << depth << " seg " << seg
     << " mask_cls " << mask_cls << " grad_norm " << grad_norm;
  return ss.str();
}

Trainer::Trainer(OccupancyModel& m) : model(m), params(m.ps.tensors()) {
  opt.lr = m.cfg.lr;
  opt.weight_decay = m.cfg.weight_decay;
}

TrainLogEntry Trainer::train_step(const data::SceneSample& s,
                                  const OccupancyModel::SceneCache& cache) {
  TrainLogEntry e;
  Tape tape;
  auto f = model.forward(s, cache, /*all_groups=*/true);
  auto L = model.losses(f, cache);
  e.step = ++step;
  e.total = L.total.item();
  e.depth = L.depth;
  e.seg = L.seg;
  e.mask_cls = L.mask_cls;
  tape.backward(L.total);
  e.grad_norm = clip_grad_norm(params, model.cfg.clip_norm);
  opt.step(params);
  opt.zero_grad(params);
  return e;
}

}  // namespace occ
