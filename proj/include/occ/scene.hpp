#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace occ::scene {

constexpr uint16_t kEmptyLabel = 0xFFFF;

struct CategoryDef {
  std::string name;
  bool foreground = false;
};

enum class ShapeKind { GroundPlane, Box, Cylinder, Pole };

// Drives synthetic scene content: per-category frequency weights and the
// primitive used to realize each category.
struct ClassDistributionSpec {
  struct Entry {
    CategoryDef def;
    ShapeKind shape = ShapeKind::Box;
    double weight = 1.0;
  };
  std::vector<Entry> categories;
  double long_tail_exponent = 0.0;
  double target_free_fraction = 0.85;

  static ClassDistributionSpec desk_default();
  // n_object_classes object categories on top of a ground plane, with
  // weights w_i proportional to (i+1)^-exponent.
  static ClassDistributionSpec long_tail(int n_object_classes, double exponent);
};

struct SemanticVoxelGrid {
  int X = 0, Y = 0, Z = 0;
  double voxel_size = 0.5;
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();  // metric corner of voxel (0,0,0)
  std::vector<uint16_t> labels;                      // z fastest: idx = (x*Y+y)*Z+z
  std::vector<CategoryDef> categories;

  int64_t nvox() const { return static_cast<int64_t>(X) * Y * Z; }
  int64_t idx(int x, int y, int z) const { return (static_cast<int64_t>(x) * Y + y) * Z + z; }
  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && x < X && y >= 0 && y < Y && z >= 0 && z < Z;
  }
  uint16_t at(int x, int y, int z) const { return labels[idx(x, y, z)]; }
  bool occupied(int64_t i) const { return labels[i] != kEmptyLabel; }
  int64_t occupied_count() const;
  Eigen::Vector3d voxel_center(int x, int y, int z) const {
    return origin + voxel_size * Eigen::Vector3d(x + 0.5, y + 0.5, z + 0.5);
  }
  Eigen::Vector3d extent() const { return voxel_size * Eigen::Vector3d(X, Y, Z); }
};

struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();  // camera-from-world rotation
  Eigen::Vector3d t = Eigen::Vector3d::Zero();      // x_cam = R * x_world + t
  int width = 0, height = 0;

  Eigen::Vector3d center() const { return -R.transpose() * t; }
  // Unit-norm world-frame direction of the ray through pixel (u,v).
  Eigen::Vector3d pixel_ray(double u, double v) const {
    Eigen::Vector3d d((u - cx) / fx, (v - cy) / fy, 1.0);
    return (R.transpose() * d).normalized();
  }
  // Returns false when the point is behind the camera or off the image.
  bool project(const Eigen::Vector3d& p_world, double* u, double* v, double* z) const;
};

struct CameraRig {
  std::vector<Camera> cameras;
};

struct RenderedView {
  int width = 0, height = 0;
  std::vector<double> depth;       // Euclidean distance along the ray; inf = no hit
  std::vector<uint16_t> semantic;  // kEmptyLabel for no hit
  std::vector<double> shading;     // 3 planes [3,H,W], synthetic "RGB"
  double& depth_at(int v, int u) { return depth[static_cast<size_t>(v) * width + u]; }
};

SemanticVoxelGrid generate_scene(uint64_t seed, const ClassDistributionSpec& spec, int X, int Y,
                                 int Z, double voxel_size = 0.5);

CameraRig place_camera_rig(uint64_t seed, int n_cameras, const SemanticVoxelGrid& grid,
                           int img_width = 56, int img_height = 32);

RenderedView render_view(const SemanticVoxelGrid& grid, const Camera& cam);

std::vector<uint8_t> compute_visible_mask(const SemanticVoxelGrid& grid, const CameraRig& rig);

std::vector<int64_t> class_histogram(const SemanticVoxelGrid& grid);

// Amanatides-Woo voxel walk shared by rendering and visibility. Visits every
// voxel the ray crosses in order; the visitor receives (x,y,z,t_entry,t_exit)
// and returns false to stop.
void dda_traverse(const SemanticVoxelGrid& grid, const Eigen::Vector3d& origin,
                  const Eigen::Vector3d& dir,
                  const std::function<bool(int, int, int, double, double)>& visit);

}  // namespace occ::scene
