#include "occ/scene.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace occ::scene {

int64_t SemanticVoxelGrid::occupied_count() const {
  int64_t n = 0;
  for (uint16_t l : labels)
    if (l != kEmptyLabel) ++n;
  return n;
}

bool Camera::project(const Eigen::Vector3d& p_world, double* u, double* v, double* z) const {
  Eigen::Vector3d pc = R * p_world + t;
  if (pc.z() <= 1e-9) return false;
  double uu = fx * pc.x() / pc.z() + cx;
  double vv = fy * pc.y() / pc.z() + cy;
  if (u) *u = uu;
  if (v) *v = vv;
  if (z) *z = pc.z();
  return uu >= 0.0 && uu < width && vv >= 0.0 && vv < height;
}

ClassDistributionSpec ClassDistributionSpec::desk_default() {
  ClassDistributionSpec s;
  s.categories = {
      {{"ground", false}, ShapeKind::GroundPlane, 20.0},
      {{"vegetation", false}, ShapeKind::Box, 4.0},
      {{"building", false}, ShapeKind::Box, 3.0},
      {{"car", true}, ShapeKind::Box, 2.5},
      {{"truck", true}, ShapeKind::Box, 1.5},
      {{"pole", true}, ShapeKind::Pole, 0.8},
      {{"bicycle", true}, ShapeKind::Cylinder, 0.4},
      {{"motorcycle", true}, ShapeKind::Cylinder, 0.2},
  };
  s.target_free_fraction = 0.82;
  return s;
}

ClassDistributionSpec ClassDistributionSpec::long_tail(int n_object_classes, double exponent) {
  ClassDistributionSpec s;
  s.long_tail_exponent = exponent;
  s.categories.push_back({{"ground", false}, ShapeKind::GroundPlane, 20.0});
  static const ShapeKind kinds[3] = {ShapeKind::Box, ShapeKind::Cylinder, ShapeKind::Pole};
  for (int i = 0; i < n_object_classes; ++i) {
    ClassDistributionSpec::Entry e;
    e.def.name = "class_" + std::to_string(i);
    e.def.foreground = (i % 2 == 0);
    e.shape = kinds[i % 3];
    e.weight = std::pow(static_cast<double>(i + 1), -exponent) * 6.0;
    s.categories.push_back(e);
  }
  s.target_free_fraction = 0.85;
  return s;
}

namespace {

void fill_box(SemanticVoxelGrid& g, int x0, int y0, int z0, int sx, int sy, int sz,
              uint16_t label) {
  for (int x = x0; x < std::min(x0 + sx, g.X); ++x)
    for (int y = y0; y < std::min(y0 + sy, g.Y); ++y)
      for (int z = z0; z < std::min(z0 + sz, g.Z); ++z) g.labels[g.idx(x, y, z)] = label;
}

void fill_cylinder(SemanticVoxelGrid& g, int cx, int cy, int z0, double r, int h,
                   uint16_t label) {
  int ri = static_cast<int>(std::ceil(r));
  for (int x = cx - ri; x <= cx + ri; ++x)
    for (int y = cy - ri; y <= cy + ri; ++y) {
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) > r * r) continue;
      for (int z = z0; z < std::min(z0 + h, g.Z); ++z)
        if (g.in_bounds(x, y, z)) g.labels[g.idx(x, y, z)] = label;
    }
}

}  // namespace

SemanticVoxelGrid generate_scene(uint64_t seed, const ClassDistributionSpec& spec, int X, int Y,
                                 int Z, double voxel_size) {
  if (spec.categories.empty()) throw std::invalid_argument("generate_scene: empty spec");
  if (X <= 0 || Y <= 0 || Z <= 0) throw std::invalid_argument("generate_scene: bad dims");
  SemanticVoxelGrid g;
  g.X = X;
  g.Y = Y;
  g.Z = Z;
  g.voxel_size = voxel_size;
  g.origin = Eigen::Vector3d(-0.5 * X * voxel_size, -0.5 * Y * voxel_size, 0.0);
  g.labels.assign(static_cast<size_t>(g.nvox()), kEmptyLabel);
  for (const auto& e : spec.categories) g.categories.push_back(e.def);

  std::mt19937_64 rng(seed);

  // Ground plane first; every scene keeps a solid bottom layer.
  int ground_cat = -1;
  for (size_t i = 0; i < spec.categories.size(); ++i)
    if (spec.categories[i].shape == ShapeKind::GroundPlane) {
      ground_cat = static_cast<int>(i);
      break;
    }
  if (ground_cat >= 0) fill_box(g, 0, 0, 0, X, Y, 1, static_cast<uint16_t>(ground_cat));

  std::vector<double> w;
  std::vector<int> object_cats;
  for (size_t i = 0; i < spec.categories.size(); ++i)
    if (spec.categories[i].shape != ShapeKind::GroundPlane) {
      object_cats.push_back(static_cast<int>(i));
      w.push_back(spec.categories[i].weight);
    }

  int64_t target_occ =
      static_cast<int64_t>((1.0 - spec.target_free_fraction) * static_cast<double>(g.nvox()));
  if (!object_cats.empty()) {
    std::discrete_distribution<int> pick(w.begin(), w.end());
    std::uniform_int_distribution<int> px(0, X - 1), py(0, Y - 1);
    std::uniform_int_distribution<int> small(1, 2);
    int attempts = 0;
    while (g.occupied_count() < target_occ && attempts < 4000) {
      ++attempts;
      int cat = object_cats[pick(rng)];
      uint16_t lab = static_cast<uint16_t>(cat);
      int x = px(rng), y = py(rng);
      switch (spec.categories[cat].shape) {
        case ShapeKind::Box: {
          int sx = small(rng) + 1, sy = small(rng) + 1, sz = small(rng);
          fill_box(g, x, y, 1, sx, sy, sz + 1, lab);
          break;
        }
        case ShapeKind::Cylinder: {
          fill_cylinder(g, x, y, 1, 1.2, small(rng), lab);
          break;
        }
        case ShapeKind::Pole: {
          fill_box(g, x, y, 1, 1, 1, std::min(Z - 1, 4), lab);
          break;
        }
        case ShapeKind::GroundPlane:
          break;
      }
    }
  }
  return g;
}

CameraRig place_camera_rig(uint64_t /*seed*/, int n_cameras, const SemanticVoxelGrid& grid,
                           int img_width, int img_height) {
  if (n_cameras < 1) throw std::invalid_argument("place_camera_rig: n_cameras >= 1");
  CameraRig rig;
  Eigen::Vector3d ext = grid.extent();
  Eigen::Vector3d center = grid.origin + 0.5 * ext;
  center.z() = grid.origin.z() + 0.35 * ext.z();  // ego height above the ground layer

  double hfov = std::min(2.2, 2.0 * M_PI / n_cameras * 1.15);
  if (n_cameras == 1) hfov = 1.6;
  double fx = (img_width / 2.0) / std::tan(hfov / 2.0);
  const double pitch = 0.12;  // slight downward tilt toward the ground

  for (int i = 0; i < n_cameras; ++i) {
    double yaw = 2.0 * M_PI * i / n_cameras;
    Eigen::Vector3d fwd(std::cos(yaw), std::sin(yaw), 0.0);
    Eigen::Vector3d fwd_p = (fwd * std::cos(pitch) - Eigen::Vector3d(0, 0, 1) * std::sin(pitch));
    Eigen::Vector3d right = fwd.cross(Eigen::Vector3d(0, 0, 1)).normalized();
    Eigen::Vector3d down = fwd_p.cross(right).normalized();
    Camera c;
    c.width = img_width;
    c.height = img_height;
    c.fx = fx;
    c.fy = fx;
    c.cx = img_width / 2.0;
    c.cy = img_height / 2.0;
    c.R.row(0) = right;
    c.R.row(1) = down;
    c.R.row(2) = fwd_p.normalized();
    c.t = -c.R * center;
    rig.cameras.push_back(c);
  }
  return rig;
}

void dda_traverse(const SemanticVoxelGrid& grid, const Eigen::Vector3d& origin,
                  const Eigen::Vector3d& dir,
                  const std::function<bool(int, int, int, double, double)>& visit) {
  Eigen::Vector3d lo = grid.origin;
  Eigen::Vector3d hi = grid.origin + grid.extent();

  // Slab intersection for the entry parameter.
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < lo[a] || origin[a] > hi[a]) return;
    } else {
      double ta = (lo[a] - origin[a]) / dir[a];
      double tb = (hi[a] - origin[a]) / dir[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
    }
  }
  if (t0 > t1) return;

  Eigen::Vector3d p = origin + (t0 + 1e-12) * dir;
  int ix = static_cast<int>(std::floor((p.x() - lo.x()) / grid.voxel_size));
  int iy = static_cast<int>(std::floor((p.y() - lo.y()) / grid.voxel_size));
  int iz = static_cast<int>(std::floor((p.z() - lo.z()) / grid.voxel_size));
  ix = std::clamp(ix, 0, grid.X - 1);
  iy = std::clamp(iy, 0, grid.Y - 1);
  iz = std::clamp(iz, 0, grid.Z - 1);

  int step[3], cell[3] = {ix, iy, iz};
  int dims[3] = {grid.X, grid.Y, grid.Z};
  double t_max[3], t_delta[3];
  for (int a = 0; a < 3; ++a) {
    if (dir[a] > 1e-15) {
      step[a] = 1;
      t_delta[a] = grid.voxel_size / dir[a];
      t_max[a] = ((cell[a] + 1) * grid.voxel_size + lo[a] - origin[a]) / dir[a];
    } else if (dir[a] < -1e-15) {
      step[a] = -1;
      t_delta[a] = -grid.voxel_size / dir[a];
      t_max[a] = (cell[a] * grid.voxel_size + lo[a] - origin[a]) / dir[a];
    } else {
      step[a] = 0;
      t_delta[a] = std::numeric_limits<double>::infinity();
      t_max[a] = std::numeric_limits<double>::infinity();
    }
  }

  double t_entry = t0;
  while (true) {
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    double t_exit = std::min(t_max[axis], t1);
    if (!visit(cell[0], cell[1], cell[2], t_entry, t_exit)) return;
    if (t_max[axis] >= t1) return;
    t_entry = t_max[axis];
    t_max[axis] += t_delta[axis];
    cell[axis] += step[axis];
    if (cell[axis] < 0 || cell[axis] >= dims[axis]) return;
  }
}

RenderedView render_view(const SemanticVoxelGrid& grid, const Camera& cam) {
  RenderedView v;
  v.width = cam.width;
  v.height = cam.height;
  size_t npx = static_cast<size_t>(cam.width) * cam.height;
  v.depth.assign(npx, std::numeric_limits<double>::infinity());
  v.semantic.assign(npx, kEmptyLabel);
  v.shading.assign(3 * npx, 0.0);
  Eigen::Vector3d c = cam.center();
  int ncat = static_cast<int>(grid.categories.size());
  for (int py = 0; py < cam.height; ++py)
    for (int px = 0; px < cam.width; ++px) {
      Eigen::Vector3d d = cam.pixel_ray(px + 0.5, py + 0.5);
      size_t pi = static_cast<size_t>(py) * cam.width + px;
      dda_traverse(grid, c, d, [&](int x, int y, int z, double te, double tx) {
        uint16_t lab = grid.at(x, y, z);
        if (lab == kEmptyLabel) return true;
        double depth = 0.5 * (te + tx);  // voxel midpoint: reprojects inside the hit voxel
        v.depth[pi] = depth;
        v.semantic[pi] = lab;
        v.shading[pi] = (lab + 1.0) / (ncat + 1.0);
        v.shading[npx + pi] = std::exp(-depth / 10.0);
        v.shading[2 * npx + pi] = 0.5 + 0.5 * std::cos(2.399 * (lab + 1));
        return false;
      });
    }
  return v;
}

std::vector<uint8_t> compute_visible_mask(const SemanticVoxelGrid& grid, const CameraRig& rig) {
  std::vector<uint8_t> vis(static_cast<size_t>(grid.nvox()), 0);
  for (const auto& cam : rig.cameras) {
    Eigen::Vector3d c = cam.center();
    for (int py = 0; py < cam.height; ++py)
      for (int px = 0; px < cam.width; ++px) {
        Eigen::Vector3d d = cam.pixel_ray(px + 0.5, py + 0.5);
        dda_traverse(grid, c, d, [&](int x, int y, int z, double, double) {
          vis[grid.idx(x, y, z)] = 1;
          return grid.at(x, y, z) == kEmptyLabel;  // include the first hit, then stop
        });
      }
  }
  return vis;
}

std::vector<int64_t> class_histogram(const SemanticVoxelGrid& grid) {
  std::vector<int64_t> counts(grid.categories.size(), 0);
  for (uint16_t l : grid.labels)
    if (l != kEmptyLabel) {
      if (l >= counts.size()) throw std::out_of_range("class_histogram: label out of range");
      ++counts[l];
    }
  return counts;
}

}  // namespace occ::scene
