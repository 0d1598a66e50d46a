#include "occ/ops_sample.hpp"

#include <cmath>
#include <stdexcept>

namespace occ {

namespace {

int64_t g_deform_ops = 0;

struct Corner3 {
  int64_t off;   // flat offset into one channel plane
  double w;      // blend weight
  double dwdx, dwdy, dwdz;  // weight derivative w.r.t. continuous index
};

// Expands a continuous lattice position into its (up to 8) corner weights.
// Returns false if the point is outside the lattice.
bool corners3(double cx, double cy, double cz, int X, int Y, int Z, Corner3 out[8]) {
  if (cx < 0.0 || cy < 0.0 || cz < 0.0 || cx > X - 1 || cy > Y - 1 || cz > Z - 1) return false;
  int x0 = static_cast<int>(std::floor(cx)), y0 = static_cast<int>(std::floor(cy)),
      z0 = static_cast<int>(std::floor(cz));
  x0 = std::min(x0, X - 2 < 0 ? 0 : X - 2);
  y0 = std::min(y0, Y - 2 < 0 ? 0 : Y - 2);
  z0 = std::min(z0, Z - 2 < 0 ? 0 : Z - 2);
  double fx = cx - x0, fy = cy - y0, fz = cz - z0;
  int n = 0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c) {
        int xi = std::min(x0 + a, X - 1), yi = std::min(y0 + b, Y - 1),
            zi = std::min(z0 + c, Z - 1);
        double wx = a ? fx : 1.0 - fx, wy = b ? fy : 1.0 - fy, wz = c ? fz : 1.0 - fz;
        double dx = a ? 1.0 : -1.0, dy = b ? 1.0 : -1.0, dz = c ? 1.0 : -1.0;
        out[n].off = (static_cast<int64_t>(xi) * Y + yi) * Z + zi;
        out[n].w = wx * wy * wz;
        out[n].dwdx = dx * wy * wz;
        out[n].dwdy = wx * dy * wz;
        out[n].dwdz = wx * wy * dz;
        ++n;
      }
  return true;
}

}  // namespace

Tensor trilinear_sample(const Tensor& vol, const Tensor& points, std::vector<uint8_t>* valid) {
  if (vol.ndim() != 4 || points.ndim() != 2 || points.dim(1) != 3)
    throw std::invalid_argument("trilinear_sample: expects vol [C,X,Y,Z], points [P,3]");
  int C = vol.dim(0), X = vol.dim(1), Y = vol.dim(2), Z = vol.dim(3);
  int P = points.dim(0);
  int64_t plane = static_cast<int64_t>(X) * Y * Z;
  Tensor out({C, P});
  if (valid) valid->assign(P, 0);
  std::vector<Corner3> cs(static_cast<size_t>(P) * 8);
  std::vector<uint8_t> ok(P, 0);
  for (int p = 0; p < P; ++p) {
    double cx = points.data()[p * 3 + 0] * (X - 1);
    double cy = points.data()[p * 3 + 1] * (Y - 1);
    double cz = points.data()[p * 3 + 2] * (Z - 1);
    ok[p] = corners3(cx, cy, cz, X, Y, Z, cs.data() + static_cast<size_t>(p) * 8) ? 1 : 0;
    if (valid) (*valid)[p] = ok[p];
    if (!ok[p]) continue;
    for (int c = 0; c < C; ++c) {
      const double* vp = vol.data().data() + c * plane;
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) {
        const Corner3& cr = cs[static_cast<size_t>(p) * 8 + k];
        acc += cr.w * vp[cr.off];
      }
      out.data()[static_cast<int64_t>(c) * P + p] = acc;
    }
  }
  wire_node(out, {vol, points},
            [vn = vol.n, pn = points.n, on = out.n, cs = std::move(cs), ok = std::move(ok), C,
             P, X, Y, Z, plane] {
    for (int p = 0; p < P; ++p) {
      if (!ok[p]) continue;
      double gx = 0.0, gy = 0.0, gz = 0.0;
      for (int c = 0; c < C; ++c) {
        double go = on->grad[static_cast<int64_t>(c) * P + p];
        if (go == 0.0) continue;
        const double* vp = vn->data.data() + c * plane;
        for (int k = 0; k < 8; ++k) {
          const Corner3& cr = cs[static_cast<size_t>(p) * 8 + k];
          if (vn->requires_grad) {
            vn->ensure_grad();
            vn->grad[c * plane + cr.off] += go * cr.w;
          }
          gx += go * cr.dwdx * vp[cr.off];
          gy += go * cr.dwdy * vp[cr.off];
          gz += go * cr.dwdz * vp[cr.off];
        }
      }
      if (pn->requires_grad) {
        pn->ensure_grad();
        pn->grad[p * 3 + 0] += gx * (X - 1);
        pn->grad[p * 3 + 1] += gy * (Y - 1);
        pn->grad[p * 3 + 2] += gz * (Z - 1);
      }
    }
  });
  return out;
}

Tensor scatter_sum(const Tensor& feats, const std::vector<int64_t>& voxel_of, int64_t ncells) {
  if (feats.ndim() != 2 || static_cast<int>(voxel_of.size()) != feats.dim(1))
    throw std::invalid_argument("scatter_sum: expects feats [C,P] and one index per point");
  int C = feats.dim(0), P = feats.dim(1);
  Tensor out({C, static_cast<int>(ncells)});
  for (int p = 0; p < P; ++p) {
    int64_t v = voxel_of[p];
    if (v < 0) continue;
    if (v >= ncells) throw std::out_of_range("scatter_sum: voxel index out of range");
    for (int c = 0; c < C; ++c)
      out.data()[c * ncells + v] += feats.data()[static_cast<int64_t>(c) * P + p];
  }
  wire_node(out, {feats}, [fn = feats.n, on = out.n, voxel_of, C, P, ncells] {
    if (!fn->requires_grad) return;
    fn->ensure_grad();
    for (int p = 0; p < P; ++p) {
      int64_t v = voxel_of[p];
      if (v < 0) continue;
      for (int c = 0; c < C; ++c)
        fn->grad[static_cast<int64_t>(c) * P + p] += on->grad[c * ncells + v];
    }
  });
  return out;
}

namespace {

// Shared forward/backward for 2D (Z=1, z coord pinned) and 3D deform reads.
Tensor deform_attend_impl(const Tensor& value, const Tensor& points, const Tensor& weights,
                          int spatial_dims) {
  int C = value.dim(0);
  int X, Y, Z;
  if (spatial_dims == 2) {
    // value [C,H,W] read with (u,v) -> lattice (W-1, H-1); store as X=H,Y=W,Z=1
    X = value.dim(1);
    Y = value.dim(2);
    Z = 1;
  } else {
    X = value.dim(1);
    Y = value.dim(2);
    Z = value.dim(3);
  }
  int Nq = points.dim(0), H = points.dim(1), R = points.dim(2);
  if (weights.shape() != Shape{Nq, H, R})
    throw std::invalid_argument("deform_attend: weights shape mismatch");
  if (C % H != 0) throw std::invalid_argument("deform_attend: heads must divide channels");
  int cd = points.dim(3);
  if (cd != spatial_dims) throw std::invalid_argument("deform_attend: point dim mismatch");
  int64_t plane = static_cast<int64_t>(X) * Y * Z;
  int ch_per_head = C / H;

  g_deform_ops += static_cast<int64_t>(Nq) * H * R;

  int64_t nsamp = static_cast<int64_t>(Nq) * H * R;
  std::vector<Corner3> cs(static_cast<size_t>(nsamp) * 8);
  std::vector<uint8_t> ok(nsamp, 0);
  for (int64_t s = 0; s < nsamp; ++s) {
    const double* pt = points.data().data() + s * cd;
    double cx, cy, cz;
    if (spatial_dims == 2) {
      // points carry (u,v): u along width (Y axis here), v along height (X)
      cx = pt[1] * (X - 1);
      cy = pt[0] * (Y - 1);
      cz = 0.0;
    } else {
      cx = pt[0] * (X - 1);
      cy = pt[1] * (Y - 1);
      cz = pt[2] * (Z - 1);
    }
    ok[s] = corners3(cx, cy, cz, X, Y, Z, cs.data() + static_cast<size_t>(s) * 8) ? 1 : 0;
  }

  Tensor out({Nq, C});
  for (int q = 0; q < Nq; ++q)
    for (int h = 0; h < H; ++h)
      for (int r = 0; r < R; ++r) {
        int64_t s = (static_cast<int64_t>(q) * H + h) * R + r;
        if (!ok[s]) continue;
        double w = weights.data()[s];
        for (int c = h * ch_per_head; c < (h + 1) * ch_per_head; ++c) {
          const double* vp = value.data().data() + c * plane;
          double acc = 0.0;
          for (int k = 0; k < 8; ++k) {
            const Corner3& cr = cs[static_cast<size_t>(s) * 8 + k];
            acc += cr.w * vp[cr.off];
          }
          out.data()[static_cast<int64_t>(q) * C + c] += w * acc;
        }
      }

  wire_node(out, {value, points, weights},
            [vn = value.n, pn = points.n, wn = weights.n, on = out.n, cs = std::move(cs),
             ok = std::move(ok), Nq, H, R, C, ch_per_head, plane, X, Y, Z, spatial_dims, cd] {
    for (int q = 0; q < Nq; ++q)
      for (int h = 0; h < H; ++h)
        for (int r = 0; r < R; ++r) {
          int64_t s = (static_cast<int64_t>(q) * H + h) * R + r;
          if (!ok[s]) continue;
          double w = wn->data[s];
          double dw = 0.0, gx = 0.0, gy = 0.0, gz = 0.0;
          for (int c = h * ch_per_head; c < (h + 1) * ch_per_head; ++c) {
            double go = on->grad[static_cast<int64_t>(q) * C + c];
            if (go == 0.0) continue;
            const double* vp = vn->data.data() + c * plane;
            double samp = 0.0;
            for (int k = 0; k < 8; ++k) {
              const Corner3& cr = cs[static_cast<size_t>(s) * 8 + k];
              samp += cr.w * vp[cr.off];
              if (vn->requires_grad) {
                vn->ensure_grad();
                vn->grad[c * plane + cr.off] += go * w * cr.w;
              }
              gx += go * w * cr.dwdx * vp[cr.off];
              gy += go * w * cr.dwdy * vp[cr.off];
              gz += go * w * cr.dwdz * vp[cr.off];
            }
            dw += go * samp;
          }
          if (wn->requires_grad) {
            wn->ensure_grad();
            wn->grad[s] += dw;
          }
          if (pn->requires_grad) {
            pn->ensure_grad();
            double* pg = pn->grad.data() + s * cd;
            if (spatial_dims == 2) {
              pg[0] += gy * (Y - 1);  // u moves along width lattice
              pg[1] += gx * (X - 1);
            } else {
              pg[0] += gx * (X - 1);
              pg[1] += gy * (Y - 1);
              pg[2] += gz * (Z - 1);
            }
          }
        }
  });
  return out;
}

}  // namespace

Tensor deform_attend_2d(const Tensor& value, const Tensor& points, const Tensor& weights) {
  if (value.ndim() != 3 || points.ndim() != 4 || points.dim(3) != 2)
    throw std::invalid_argument("deform_attend_2d: expects value [C,H,W], points [Nq,h,R,2]");
  return deform_attend_impl(value, points, weights, 2);
}

Tensor deform_attend_3d(const Tensor& value, const Tensor& points, const Tensor& weights) {
  if (value.ndim() != 4 || points.ndim() != 4 || points.dim(3) != 3)
    throw std::invalid_argument("deform_attend_3d: expects value [C,X,Y,Z], points [Nq,h,R,3]");
  return deform_attend_impl(value, points, weights, 3);
}

int64_t deform_sample_op_count() { return g_deform_ops; }
void reset_deform_sample_op_count() { g_deform_ops = 0; }

}  // namespace occ
