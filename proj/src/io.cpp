#include "occ/io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace occ::io {

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("unexpected end of file");
  return v;
}

void put_magic(std::ostream& os, const char m[4]) { os.write(m, 4); }

void expect_magic(std::istream& is, const char m[4], const char* what) {
  char buf[4];
  is.read(buf, 4);
  if (!is || std::memcmp(buf, m, 4) != 0)
    throw std::runtime_error(std::string("bad magic for ") + what);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for read: " + path);
  return is;
}

}  // namespace

void write_ovg(const std::string& path, const scene::SemanticVoxelGrid& g) {
  auto os = open_out(path);
  put_magic(os, "OVG1");
  put<uint32_t>(os, g.X);
  put<uint32_t>(os, g.Y);
  put<uint32_t>(os, g.Z);
  put<float>(os, static_cast<float>(g.voxel_size));
  for (int a = 0; a < 3; ++a) put<float>(os, static_cast<float>(g.origin[a]));
  put<uint16_t>(os, static_cast<uint16_t>(g.categories.size()));
  for (const auto& c : g.categories) {
    put<uint16_t>(os, static_cast<uint16_t>(c.name.size()));
    os.write(c.name.data(), static_cast<std::streamsize>(c.name.size()));
    put<uint8_t>(os, c.foreground ? 1 : 0);
  }
  // x fastest on disk
  for (int z = 0; z < g.Z; ++z)
    for (int y = 0; y < g.Y; ++y)
      for (int x = 0; x < g.X; ++x) put<uint16_t>(os, g.at(x, y, z));
}

scene::SemanticVoxelGrid read_ovg(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "OVG1", path.c_str());
  scene::SemanticVoxelGrid g;
  g.X = static_cast<int>(get<uint32_t>(is));
  g.Y = static_cast<int>(get<uint32_t>(is));
  g.Z = static_cast<int>(get<uint32_t>(is));
  g.voxel_size = get<float>(is);
  for (int a = 0; a < 3; ++a) g.origin[a] = get<float>(is);
  int ncat = get<uint16_t>(is);
  for (int i = 0; i < ncat; ++i) {
    int len = get<uint16_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    uint8_t fg = get<uint8_t>(is);
    g.categories.push_back({name, fg != 0});
  }
  g.labels.assign(static_cast<size_t>(g.nvox()), scene::kEmptyLabel);
  for (int z = 0; z < g.Z; ++z)
    for (int y = 0; y < g.Y; ++y)
      for (int x = 0; x < g.X; ++x) g.labels[g.idx(x, y, z)] = get<uint16_t>(is);
  return g;
}

void write_view(const std::string& path, const scene::RenderedView& v) {
  auto os = open_out(path);
  put_magic(os, "RVW1");
  put<uint32_t>(os, v.height);
  put<uint32_t>(os, v.width);
  for (double d : v.depth) put<float>(os, static_cast<float>(d));
  for (uint16_t s : v.semantic) put<uint16_t>(os, s);
  for (double s : v.shading) put<float>(os, static_cast<float>(s));
}

scene::RenderedView read_view(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "RVW1", path.c_str());
  scene::RenderedView v;
  v.height = static_cast<int>(get<uint32_t>(is));
  v.width = static_cast<int>(get<uint32_t>(is));
  size_t npx = static_cast<size_t>(v.width) * v.height;
  v.depth.resize(npx);
  v.semantic.resize(npx);
  v.shading.resize(3 * npx);
  for (auto& d : v.depth) d = get<float>(is);
  for (auto& s : v.semantic) s = get<uint16_t>(is);
  for (auto& s : v.shading) s = get<float>(is);
  return v;
}

void write_mask(const std::string& path, const std::vector<uint8_t>& mask, int X, int Y, int Z) {
  if (static_cast<int64_t>(mask.size()) != static_cast<int64_t>(X) * Y * Z)
    throw std::invalid_argument("write_mask: size mismatch");
  auto os = open_out(path);
  put_magic(os, "VMSK");
  put<uint32_t>(os, X);
  put<uint32_t>(os, Y);
  put<uint32_t>(os, Z);
  os.write(reinterpret_cast<const char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
}

std::vector<uint8_t> read_mask(const std::string& path, int* X, int* Y, int* Z) {
  auto is = open_in(path);
  expect_magic(is, "VMSK", path.c_str());
  int x = static_cast<int>(get<uint32_t>(is));
  int y = static_cast<int>(get<uint32_t>(is));
  int z = static_cast<int>(get<uint32_t>(is));
  if (X) *X = x;
  if (Y) *Y = y;
  if (Z) *Z = z;
  std::vector<uint8_t> mask(static_cast<size_t>(x) * y * z);
  is.read(reinterpret_cast<char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
  if (!is) throw std::runtime_error("truncated mask file: " + path);
  return mask;
}

std::array<uint8_t, 3> category_color(uint16_t label) {
  // golden-angle hue walk, fixed saturation/value
  double h = std::fmod(0.618033988749895 * (label + 1), 1.0) * 6.0;
  double f = h - std::floor(h);
  int i = static_cast<int>(h) % 6;
  double v = 0.95, s = 0.75;
  double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r, g, b;
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {static_cast<uint8_t>(r * 255), static_cast<uint8_t>(g * 255),
          static_cast<uint8_t>(b * 255)};
}

void export_ply(const std::string& path, const scene::SemanticVoxelGrid& g) {
  int64_t n_occ = g.occupied_count();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os << "ply\nformat ascii 1.0\n";
  os << "comment occupied-voxel cubes, one color per category\n";
  os << "element vertex " << n_occ * 8 << "\n";
  os << "property float x\nproperty float y\nproperty float z\n";
  os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "element face " << n_occ * 12 << "\n";
  os << "property list uchar int vertex_indices\n";
  os << "end_header\n";
  static const int corner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                   {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  static const int tri[12][3] = {{0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7},
                                 {0, 1, 5}, {0, 5, 4}, {1, 2, 6}, {1, 6, 5},
                                 {2, 3, 7}, {2, 7, 6}, {3, 0, 4}, {3, 4, 7}};
  for (int x = 0; x < g.X; ++x)
    for (int y = 0; y < g.Y; ++y)
      for (int z = 0; z < g.Z; ++z) {
        uint16_t lab = g.at(x, y, z);
        if (lab == scene::kEmptyLabel) continue;
        auto col = category_color(lab);
        for (const auto& c : corner) {
          Eigen::Vector3d p =
              g.origin + g.voxel_size * Eigen::Vector3d(x + c[0], y + c[1], z + c[2]);
          os << static_cast<float>(p.x()) << " " << static_cast<float>(p.y()) << " "
             << static_cast<float>(p.z()) << " " << int(col[0]) << " " << int(col[1]) << " "
             << int(col[2]) << "\n";
        }
      }
  int64_t base = 0;
  for (int64_t i = 0; i < n_occ; ++i, base += 8)
    for (const auto& t : tri)
      os << "3 " << base + t[0] << " " << base + t[1] << " " << base + t[2] << "\n";
}

std::vector<std::pair<int64_t, uint16_t>> parse_ply_voxels(const std::string& path,
                                                           const scene::SemanticVoxelGrid& ref) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open for read: " + path);
  std::string line;
  int64_t nvert = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "element") {
      std::string kind;
      int64_t n;
      ls >> kind >> n;
      if (kind == "vertex") nvert = n;
    } else if (tok == "end_header") {
      break;
    }
  }
  if (nvert % 8 != 0) throw std::runtime_error("parse_ply_voxels: vertex count not a cube multiple");
  std::vector<std::pair<int64_t, uint16_t>> out;
  // reverse color -> label table for the categories of the reference grid
  for (int64_t c = 0; c < nvert / 8; ++c) {
    double sx = 0, sy = 0, sz = 0;
    int r = 0, g = 0, b = 0;
    for (int k = 0;k < 8; ++k) {
      double x, y, z;
      is >> x >> y >> z >> r >> g >> b;
      sx += x;
      sy += y;
      sz += z;
    }
    int vx = static_cast<int>(std::floor((sx / 8 - ref.origin.x()) / ref.voxel_size));
    int vy = static_cast<int>(std::floor((sy / 8 - ref.origin.y()) / ref.voxel_size));
    int vz = static_cast<int>(std::floor((sz / 8 - ref.origin.z()) / ref.voxel_size));
    uint16_t lab = scene::kEmptyLabel;
    for (uint16_t l = 0; l < ref.categories.size(); ++l) {
      auto col = category_color(l);
      if (col[0] == r && col[1] == g && col[2] == b) {
        lab = l;
        break;
      }
    }
    out.emplace_back(ref.idx(vx, vy, vz), lab);
  }
  return out;
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  auto os = open_out(path);
  put_magic(os, "OCKP");
  put<uint32_t>(os, 1);
  put<uint64_t>(os, ck.step);
  put<uint64_t>(os, ck.config_hash);
  put<uint32_t>(os, static_cast<uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    put<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint8_t>(os, 0);  // dtype f64
    put<uint8_t>(os, static_cast<uint8_t>(t.ndim()));
    for (int d : t.shape()) put<uint32_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  bool has_opt = !ck.opt_m.empty();
  put<uint8_t>(os, has_opt ? 1 : 0);
  if (has_opt) {
    for (size_t i = 0; i < ck.tensors.size(); ++i) {
      os.write(reinterpret_cast<const char*>(ck.opt_m[i].data()),
               static_cast<std::streamsize>(ck.opt_m[i].size() * sizeof(double)));
      os.write(reinterpret_cast<const char*>(ck.opt_v[i].data()),
               static_cast<std::streamsize>(ck.opt_v[i].size() * sizeof(double)));
    }
  }
}

Checkpoint read_checkpoint(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "OCKP", path.c_str());
  uint32_t version = get<uint32_t>(is);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  Checkpoint ck;
  ck.step = get<uint64_t>(is);
  ck.config_hash = get<uint64_t>(is);
  uint32_t count = get<uint32_t>(is);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t nlen = get<uint32_t>(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    uint8_t dtype = get<uint8_t>(is);
    if (dtype != 0) throw std::runtime_error("unsupported dtype tag");
    int rank = get<uint8_t>(is);
    Shape shape(rank);
    for (int d = 0; d < rank; ++d) shape[d] = static_cast<int>(get<uint32_t>(is));
    std::vector<double> data(static_cast<size_t>(numel(shape)));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    ck.tensors.emplace_back(name, Tensor::from(shape, std::move(data)));
  }
  uint8_t has_opt = get<uint8_t>(is);
  if (has_opt) {
    for (const auto& [name, t] : ck.tensors) {
      std::vector<double> m(static_cast<size_t>(t.size())), v(static_cast<size_t>(t.size()));
      is.read(reinterpret_cast<char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
      is.read(reinterpret_cast<char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
      ck.opt_m.push_back(std::move(m));
      ck.opt_v.push_back(std::move(v));
    }
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
  }
  return ck;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace occ::io
