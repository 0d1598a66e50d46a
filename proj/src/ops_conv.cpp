#include "occ/ops_conv.hpp"

#include <Eigen/Dense>

#include <stdexcept>

namespace occ {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct ConvGeom {
  int c;              // channels of the gathered tensor
  Int3 in;            // gathered spatial dims
  Int3 out;           // iterated spatial dims
  Int3 k, s, p;
  int64_t patch() const { return static_cast<int64_t>(c) * k[0] * k[1] * k[2]; }
  int64_t nout() const { return static_cast<int64_t>(out[0]) * out[1] * out[2]; }
};

// cols[(c,dx,dy,dz), (ox,oy,oz)] = src[c, o*s+d-p], zero outside.
void im2col(const double* src, const ConvGeom& g, std::vector<double>& cols) {
  cols.assign(static_cast<size_t>(g.patch() * g.nout()), 0.0);
  int64_t in_yz = static_cast<int64_t>(g.in[1]) * g.in[2];
  int64_t no = g.nout();
  for (int c = 0; c < g.c; ++c)
    for (int dx = 0; dx < g.k[0]; ++dx)
      for (int dy = 0; dy < g.k[1]; ++dy)
        for (int dz = 0; dz < g.k[2]; ++dz) {
          int64_t row = (((static_cast<int64_t>(c) * g.k[0] + dx) * g.k[1] + dy) * g.k[2] + dz);
          double* dst = cols.data() + row * no;
          const double* sp = src + static_cast<int64_t>(c) * g.in[0] * in_yz;
          int64_t o = 0;
          for (int ox = 0; ox < g.out[0]; ++ox) {
            int ix = ox * g.s[0] + dx - g.p[0];
            for (int oy = 0; oy < g.out[1]; ++oy) {
              int iy = oy * g.s[1] + dy - g.p[1];
              for (int oz = 0; oz < g.out[2]; ++oz, ++o) {
                int iz = oz * g.s[2] + dz - g.p[2];
                if (ix >= 0 && ix < g.in[0] && iy >= 0 && iy < g.in[1] && iz >= 0 &&
                    iz < g.in[2])
                  dst[o] = sp[(static_cast<int64_t>(ix) * g.in[1] + iy) * g.in[2] + iz];
              }
            }
          }
        }
}

// dst[c, o*s+d-p] += cols[(c,d), o]; adjoint of im2col.
void col2im(const std::vector<double>& cols, const ConvGeom& g, double* dst) {
  int64_t in_yz = static_cast<int64_t>(g.in[1]) * g.in[2];
  int64_t no = g.nout();
  for (int c = 0; c < g.c; ++c)
    for (int dx = 0; dx < g.k[0]; ++dx)
      for (int dy = 0; dy < g.k[1]; ++dy)
        for (int dz = 0; dz < g.k[2]; ++dz) {
          int64_t row = (((static_cast<int64_t>(c) * g.k[0] + dx) * g.k[1] + dy) * g.k[2] + dz);
          const double* src = cols.data() + row * no;
          double* dp = dst + static_cast<int64_t>(c) * g.in[0] * in_yz;
          int64_t o = 0;
          for (int ox = 0; ox < g.out[0]; ++ox) {
            int ix = ox * g.s[0] + dx - g.p[0];
            for (int oy = 0; oy < g.out[1]; ++oy) {
              int iy = oy * g.s[1] + dy - g.p[1];
              for (int oz = 0; oz < g.out[2]; ++oz, ++o) {
                int iz = oz * g.s[2] + dz - g.p[2];
                if (ix >= 0 && ix < g.in[0] && iy >= 0 && iy < g.in[1] && iz >= 0 &&
                    iz < g.in[2])
                  dp[(static_cast<int64_t>(ix) * g.in[1] + iy) * g.in[2] + iz] += src[o];
              }
            }
          }
        }
}

int out_dim(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, Int3 stride, Int3 padding) {
  if (x.ndim() != 4 || w.ndim() != 5 || x.dim(0) != w.dim(1))
    throw std::invalid_argument("conv3d: expects x [Cin,X,Y,Z], w [Cout,Cin,kx,ky,kz]");
  int cin = x.dim(0), cout = w.dim(0);
  ConvGeom g;
  g.c = cin;
  g.in = {x.dim(1), x.dim(2), x.dim(3)};
  g.k = {w.dim(2), w.dim(3), w.dim(4)};
  g.s = stride;
  g.p = padding;
  for (int a = 0; a < 3; ++a) {
    g.out[a] = out_dim(g.in[a], g.k[a], g.s[a], g.p[a]);
    if (g.out[a] <= 0) throw std::invalid_argument("conv3d: non-positive output dim");
  }
  Tensor out({cout, g.out[0], g.out[1], g.out[2]});
  std::vector<double> cols;
  im2col(x.data().data(), g, cols);
  {
    CMatMap W(w.data().data(), cout, g.patch());
    CMatMap C(cols.data(), g.patch(), g.nout());
    MatMap O(out.data().data(), cout, g.nout());
    O.noalias() = W * C;
    if (bias.defined()) {
      for (int co = 0; co < cout; ++co)
        O.row(co).array() += bias.data()[co];
    }
  }
  std::vector<Tensor> parents = {x, w};
  if (bias.defined()) parents.push_back(bias);
  wire_node(out, parents, [xn = x.n, wn = w.n, bn = bias.defined() ? bias.n : nullptr,
                           on = out.n, g, cout] {
    CMatMap G(on->grad.data(), cout, g.nout());
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      for (int co = 0; co < cout; ++co) bn->grad[co] += G.row(co).sum();
    }
    if (wn->requires_grad) {
      std::vector<double> cols;
      im2col(xn->data.data(), g, cols);
      CMatMap C(cols.data(), g.patch(), g.nout());
      wn->ensure_grad();
      MatMap dW(wn->grad.data(), cout, g.patch());
      dW.noalias() += G * C.transpose();
    }
    if (xn->requires_grad) {
      xn->ensure_grad();
      std::vector<double> dcols(static_cast<size_t>(g.patch() * g.nout()));
      CMatMap W(wn->data.data(), cout, g.patch());
      MatMap D(dcols.data(), g.patch(), g.nout());
      D.noalias() = W.transpose() * G;
      col2im(dcols, g, xn->grad.data());
    }
  });
  return out;
}

Tensor conv3d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias, Int3 stride,
                        Int3 padding, Int3 out_size) {
  if (x.ndim() != 4 || w.ndim() != 5 || x.dim(0) != w.dim(0))
    throw std::invalid_argument(
        "conv3d_transpose: expects x [Cin,X,Y,Z], w [Cin,Cout,kx,ky,kz]");
  int cin = x.dim(0), cout = w.dim(1);
  ConvGeom g;  // geometry of the matching forward conv: gathers from the output
  g.c = cout;
  g.k = {w.dim(2), w.dim(3), w.dim(4)};
  g.s = stride;
  g.p = padding;
  Int3 xin = {x.dim(1), x.dim(2), x.dim(3)};
  for (int a = 0; a < 3; ++a) {
    g.out[a] = xin[a];
    g.in[a] = out_size[a] > 0 ? out_size[a] : (xin[a] - 1) * g.s[a] + g.k[a] - 2 * g.p[a];
    if (g.in[a] <= 0) throw std::invalid_argument("conv3d_transpose: non-positive output dim");
  }
  Tensor out({cout, g.in[0], g.in[1], g.in[2]});
  {
    // cols[(co,d), i] = sum_ci x[ci,i] * w[ci,co,d]; scatter into out.
    std::vector<double> cols(static_cast<size_t>(g.patch() * g.nout()));
    CMatMap W(w.data().data(), cin, g.patch());
    CMatMap X(x.data().data(), cin, g.nout());
    MatMap C(cols.data(), g.patch(), g.nout());
    C.noalias() = W.transpose() * X;
    col2im(cols, g, out.data().data());
    if (bias.defined())
      for (int co = 0; co < cout; ++co) {
        double* op = out.data().data() + static_cast<int64_t>(co) * g.in[0] * g.in[1] * g.in[2];
        int64_t nv = static_cast<int64_t>(g.in[0]) * g.in[1] * g.in[2];
        for (int64_t i = 0; i < nv; ++i) op[i] += bias.data()[co];
      }
  }
  std::vector<Tensor> parents = {x, w};
  if (bias.defined()) parents.push_back(bias);
  wire_node(out, parents, [xn = x.n, wn = w.n, bn = bias.defined() ? bias.n : nullptr,
                           on = out.n, g, cin, cout] {
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      int64_t nv = static_cast<int64_t>(g.in[0]) * g.in[1] * g.in[2];
      for (int co = 0; co < cout; ++co) {
        const double* gp = on->grad.data() + static_cast<int64_t>(co) * nv;
        for (int64_t i = 0; i < nv; ++i) bn->grad[co] += gp[i];
      }
    }
    std::vector<double> dcols;
    im2col(on->grad.data(), g, dcols);  // dcols[(co,d), i] = g[co, i*s+d-p]
    CMatMap D(dcols.data(), g.patch(), g.nout());
    if (xn->requires_grad) {
      xn->ensure_grad();
      CMatMap W(wn->data.data(), cin, g.patch());
      MatMap dX(xn->grad.data(), cin, g.nout());
      dX.noalias() += W * D;
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      CMatMap X(xn->data.data(), cin, g.nout());
      MatMap dW(wn->grad.data(), cin, g.patch());
      dW.noalias() += X * D.transpose();
    }
  });
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding) {
  if (x.ndim() != 3 || w.ndim() != 4)
    throw std::invalid_argument("conv2d: expects x [Cin,H,W], w [Cout,Cin,kh,kw]");
  Tensor x3 = reshape(x, {x.dim(0), x.dim(1), x.dim(2), 1});
  Tensor w3 = reshape(w, {w.dim(0), w.dim(1), w.dim(2), w.dim(3), 1});
  Tensor y = conv3d(x3, w3, bias, {stride, stride, 1}, {padding, padding, 0});
  return reshape(y, {y.dim(0), y.dim(1), y.dim(2)});
}

}  // namespace occ
