#include "occ/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "occ/io.hpp"

namespace occ {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("config: double format failure");
  return std::string(buf, end);
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class T>
T parse_num(const std::string& key, const std::string& s) {
  T v{};
  auto begin = s.data(), end = s.data() + s.size();
  auto [p, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc{} || p != end)
    throw std::runtime_error("config: bad value '" + s + "' for key '" + key + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::runtime_error("config: bad value '" + s + "' for key '" + key + "'");
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> t;
    auto add_int = [&](const char* key, int RunConfig::* m) {
      t.push_back({key, [m](const RunConfig& c) { return std::to_string(c.*m); },
                   [m, key = std::string(key)](RunConfig& c, const std::string& s) {
                     c.*m = parse_num<int>(key, s);
                   }});
    };
    auto add_dbl = [&](const char* key, double RunConfig::* m) {
      t.push_back({key, [m](const RunConfig& c) { return fmt_double(c.*m); },
                   [m, key = std::string(key)](RunConfig& c, const std::string& s) {
                     c.*m = parse_num<double>(key, s);
                   }});
    };
    auto add_bool = [&](const char* key, bool RunConfig::* m) {
      t.push_back({key, [m](const RunConfig& c) { return c.*m ? "true" : "false"; },
                   [m, key = std::string(key)](RunConfig& c, const std::string& s) {
                     c.*m = parse_bool(key, s);
                   }});
    };
    add_int("scene.count", &RunConfig::n_scenes);
    add_int("scene.grid_x", &RunConfig::grid_x);
    add_int("scene.grid_y", &RunConfig::grid_y);
    add_int("scene.grid_z", &RunConfig::grid_z);
    add_dbl("scene.voxel_size", &RunConfig::voxel_size);
    add_int("scene.cameras", &RunConfig::n_cameras);
    add_int("scene.img_w", &RunConfig::img_w);
    add_int("scene.img_h", &RunConfig::img_h);
    add_int("scene.object_classes", &RunConfig::n_object_classes);
    add_dbl("scene.long_tail_exponent", &RunConfig::long_tail_exponent);
    add_dbl("scene.free_fraction", &RunConfig::free_fraction);
    add_int("model.c_feat", &RunConfig::c_feat);
    add_int("model.c_query", &RunConfig::c_query);
    add_int("model.c_mask", &RunConfig::c_mask);
    add_int("model.d_bins", &RunConfig::d_bins);
    add_dbl("model.d_min", &RunConfig::d_min);
    add_dbl("model.d_max", &RunConfig::d_max);
    add_int("model.heads", &RunConfig::heads);
    add_int("model.n_ref", &RunConfig::n_ref);
    add_int("model.layers", &RunConfig::n_layers);
    add_int("model.queries", &RunConfig::n_q);
    add_int("model.sigma_x", &RunConfig::sigma_x);
    add_int("model.sigma_y", &RunConfig::sigma_y);
    add_int("model.sigma_z", &RunConfig::sigma_z);
    add_int("model.enc_levels", &RunConfig::enc_levels);
    add_int("model.img_stride", &RunConfig::img_stride);
    add_bool("model.use_ivt", &RunConfig::use_ivt);
    add_int("group.k", &RunConfig::k_groups);
    add_dbl("loss.depth", &RunConfig::w_depth);
    add_dbl("loss.seg", &RunConfig::w_seg);
    add_dbl("loss.mask_cls", &RunConfig::w_mask_cls);
    add_dbl("train.lr", &RunConfig::lr);
    add_dbl("train.weight_decay", &RunConfig::weight_decay);
    add_dbl("train.clip_norm", &RunConfig::clip_norm);
    add_int("train.epochs", &RunConfig::epochs);
    add_int("train.steps", &RunConfig::steps);
    add_int("train.batch_size", &RunConfig::batch_size);
    add_int("train.log_every", &RunConfig::log_every);
    add_int("train.checkpoint_every", &RunConfig::checkpoint_every);
    t.push_back({"run.seed",
                 [](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, const std::string& s) {
                   c.seed = parse_num<uint64_t>("run.seed", s);
                 }});
    t.push_back({"run.out_dir", [](const RunConfig& c) { return c.out_dir; },
                 [](RunConfig& c, const std::string& s) { c.out_dir = s; }});
    return t;
  }();
  return table;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw std::runtime_error("config: unknown key '" + key + "'");
}

std::string strip(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

vt::VtConfig RunConfig::vt_config() const {
  vt::VtConfig v;
  v.c_feat = c_feat;
  v.c_query = c_query;
  v.d_bins = d_bins;
  v.d_min = d_min;
  v.d_max = d_max;
  v.heads = heads;
  v.n_ref = n_ref;
  v.img_stride = img_stride;
  v.sigma = {sigma_x, sigma_y, sigma_z};
  v.levels = enc_levels;
  return v;
}

gd::GdConfig RunConfig::gd_config() const {
  gd::GdConfig g;
  g.c_m = c_mask;
  g.c_query = c_query;
  g.n_q = n_q;
  g.n_layers = n_layers;
  g.heads = heads;
  g.n_ref = n_ref;
  return g;
}

void RunConfig::validate() const {
  auto req = [](bool ok, const char* what) {
    if (!ok) throw std::runtime_error(std::string("config: ") + what);
  };
  req(n_scenes > 0, "scene.count must be positive");
  req(grid_x > 0 && grid_y > 0 && grid_z > 0, "grid dims must be positive");
  req(voxel_size > 0, "voxel size must be positive");
  req(n_cameras > 0, "need at least one camera");
  req(img_w % img_stride == 0 && img_h % img_stride == 0,
      "image dims must be divisible by the backbone stride");
  req(grid_x % sigma_x == 0 && grid_y % sigma_y == 0 && grid_z % sigma_z == 0,
      "grid dims must be divisible by the compact downsample ratios");
  req(d_max > d_min && d_bins > 0, "depth bins must span a positive range");
  req(c_query % heads == 0, "c_query must be divisible by heads");
  req(k_groups >= 1, "group.k must be at least 1");
  req(n_q > 0 && n_layers > 0, "decoder needs queries and layers");
  req(lr > 0 && batch_size > 0, "optimizer settings must be positive");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, value);
}

std::string get_value(const RunConfig& cfg, const std::string& key) {
  return find_field(key).get(cfg);
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = strip(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) +
                               ": expected 'key = value'");
    apply_override(cfg, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& f : fields()) out << f.key << " = " << f.get(cfg) << "\n";
  return out.str();
}

uint64_t config_hash(const RunConfig& cfg) {
  // Only keys that change the model architecture or the data semantics take
  // part, so retuning the schedule or moving out_dir keeps checkpoints valid.
  std::ostringstream out;
  for (const auto& f : fields()) {
    bool relevant = f.key.rfind("scene.", 0) == 0 || f.key.rfind("model.", 0) == 0 ||
                    f.key.rfind("group.", 0) == 0 || f.key == "run.seed";
    if (relevant) out << f.key << " = " << f.get(cfg) << "\n";
  }
  return io::fnv1a(out.str());
}

}  // namespace occ
