#include "occ/dataset.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "occ/io.hpp"

namespace occ::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t index, uint64_t stream) {
  uint64_t x = seed ^ (0x9E3779B97F4A7C15ull * (index + 1)) ^ (0xBF58476D1CE4E5B9ull * stream);
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return x;
}

std::string scene_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04d", index);
  return buf;
}

json camera_json(const scene::Camera& c) {
  json j;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["width"] = c.width;
  j["height"] = c.height;
  std::vector<double> r(9);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r[i * 3 + k] = c.R(i, k);
  j["R"] = r;
  j["t"] = std::vector<double>{c.t.x(), c.t.y(), c.t.z()};
  return j;
}

scene::Camera camera_from_json(const json& j) {
  scene::Camera c;
  c.fx = j.at("fx");
  c.fy = j.at("fy");
  c.cx = j.at("cx");
  c.cy = j.at("cy");
  c.width = j.at("width");
  c.height = j.at("height");
  auto r = j.at("R").get<std::vector<double>>();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) c.R(i, k) = r[i * 3 + k];
  auto t = j.at("t").get<std::vector<double>>();
  c.t = Eigen::Vector3d(t[0], t[1], t[2]);
  return c;
}

json load_manifest(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("dataset: missing manifest in " + dir);
  json m;
  in >> m;
  return m;
}

}  // namespace

scene::ClassDistributionSpec class_spec(const RunConfig& cfg) {
  auto spec = cfg.n_object_classes > 0
                  ? scene::ClassDistributionSpec::long_tail(cfg.n_object_classes,
                                                            cfg.long_tail_exponent)
                  : scene::ClassDistributionSpec::desk_default();
  if (cfg.free_fraction > 0.0) spec.target_free_fraction = cfg.free_fraction;
  return spec;
}

SceneSample make_scene(const RunConfig& cfg, int index) {
  SceneSample s;
  s.grid = scene::generate_scene(mix_seed(cfg.seed, index, 1), class_spec(cfg), cfg.grid_x,
                                 cfg.grid_y, cfg.grid_z, cfg.voxel_size);
  s.rig = scene::place_camera_rig(mix_seed(cfg.seed, index, 2), cfg.n_cameras, s.grid, cfg.img_w,
                                  cfg.img_h);
  for (const auto& cam : s.rig.cameras) s.views.push_back(scene::render_view(s.grid, cam));
  s.visible = scene::compute_visible_mask(s.grid, s.rig);
  return s;
}

void write_dataset(const RunConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "occds-1";
  manifest["seed"] = cfg.seed;
  manifest["n_scenes"] = cfg.n_scenes;
  RunConfig snap = cfg;
  snap.out_dir.clear();  // dataset bytes must not depend on where the run lives
  manifest["config"] = serialize_config(snap);
  manifest["config_hash"] = config_hash(cfg);
  json scenes = json::array();
  for (int i = 0; i < cfg.n_scenes; ++i) {
    auto s = make_scene(cfg, i);
    auto stem = scene_stem(i);
    io::write_ovg((fs::path(dir) / (stem + ".ovg")).string(), s.grid);
    io::write_mask((fs::path(dir) / (stem + ".vmsk")).string(), s.visible, s.grid.X, s.grid.Y,
                   s.grid.Z);
    json sj;
    sj["grid"] = stem + ".ovg";
    sj["mask"] = stem + ".vmsk";
    json cams = json::array(), views = json::array();
    for (size_t c = 0; c < s.rig.cameras.size(); ++c) {
      auto vname = stem + "_cam" + std::to_string(c) + ".rvw";
      io::write_view((fs::path(dir) / vname).string(), s.views[c]);
      views.push_back(vname);
      cams.push_back(camera_json(s.rig.cameras[c]));
    }
    sj["views"] = views;
    sj["cameras"] = cams;
    sj["histogram"] = scene::class_histogram(s.grid);
    scenes.push_back(sj);
    if (i == 0) {
      json cats = json::array();
      for (const auto& cd : s.grid.categories)
        cats.push_back({{"name", cd.name}, {"foreground", cd.foreground}});
      manifest["categories"] = cats;
    }
  }
  manifest["scenes"] = scenes;
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
}

int dataset_size(const std::string& dir) {
  return static_cast<int>(load_manifest(dir).at("scenes").size());
}

SceneSample load_scene(const std::string& dir, int index) {
  auto m = load_manifest(dir);
  const auto& sj = m.at("scenes").at(index);
  SceneSample s;
  s.grid = io::read_ovg((fs::path(dir) / sj.at("grid").get<std::string>()).string());
  s.visible = io::read_mask((fs::path(dir) / sj.at("mask").get<std::string>()).string());
  for (const auto& cj : sj.at("cameras")) s.rig.cameras.push_back(camera_from_json(cj));
  for (const auto& vj : sj.at("views"))
    s.views.push_back(io::read_view((fs::path(dir) / vj.get<std::string>()).string()));
  return s;
}

std::vector<int64_t> dataset_histogram(const std::string& dir) {
  auto m = load_manifest(dir);
  std::vector<int64_t> total;
  for (const auto& sj : m.at("scenes")) {
    auto h = sj.at("histogram").get<std::vector<int64_t>>();
    if (total.size() < h.size()) total.resize(h.size(), 0);
    for (size_t i = 0; i < h.size(); ++i) total[i] += h[i];
  }
  return total;
}

std::vector<scene::CategoryDef> dataset_categories(const std::string& dir) {
  auto m = load_manifest(dir);
  std::vector<scene::CategoryDef> cats;
  for (const auto& cj : m.at("categories"))
    cats.push_back({cj.at("name").get<std::string>(), cj.at("foreground").get<bool>()});
  return cats;
}

}  // namespace occ::data
