#include "occ/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace occ {

Tensor ParamStore::add(const std::string& name, Shape shape, double init_std) {
  Tensor t(shape, /*requires_grad=*/true);
  if (init_std > 0.0) {
    std::normal_distribution<double> dist(0.0, init_std);
    for (double& v : t.data()) v = dist(rng_);
  }
  entries_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::add_zeros(const std::string& name, Shape shape) {
  return add(name, std::move(shape), 0.0);
}

Tensor ParamStore::add_full(const std::string& name, Shape shape, double v) {
  Tensor t = add(name, std::move(shape), 0.0);
  std::fill(t.data().begin(), t.data().end(), v);
  return t;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(t);
  return out;
}

Tensor ParamStore::find(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw std::runtime_error("ParamStore: unknown parameter " + name);
}

Linear::Linear(ParamStore& ps, const std::string& name, int in, int out, bool zero_init) {
  double std = zero_init ? 0.0 : std::sqrt(2.0 / static_cast<double>(in + out));
  w = ps.add(name + ".w", {in, out}, std);
  b = ps.add_zeros(name + ".b", {out});
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, w);
  // row-broadcast bias
  int n = y.dim(0), c = y.dim(1);
  Tensor ones = Tensor::full({n, 1}, 1.0);
  Tensor brow = reshape(b, {1, c});
  return add(y, matmul(ones, brow));
}

LayerNormParams::LayerNormParams(ParamStore& ps, const std::string& name, int dim) {
  gamma = ps.add_full(name + ".gamma", {dim}, 1.0);
  beta = ps.add_zeros(name + ".beta", {dim});
}

Tensor LayerNormParams::operator()(const Tensor& x) const {
  return layer_norm(x, gamma, beta);
}

SelfAttentionBlock::SelfAttentionBlock(ParamStore& ps, const std::string& name, int dim,
                                       int heads_, int ffn_mult)
    : heads(heads_),
      ln_attn(ps, name + ".ln_attn", dim),
      ln_ffn(ps, name + ".ln_ffn", dim),
      wq(ps, name + ".wq", dim, dim),
      wk(ps, name + ".wk", dim, dim),
      wv(ps, name + ".wv", dim, dim),
      wo(ps, name + ".wo", dim, dim, /*zero_init=*/true),
      ffn1(ps, name + ".ffn1", dim, dim * ffn_mult),
      ffn2(ps, name + ".ffn2", dim * ffn_mult, dim, /*zero_init=*/true) {
  if (dim % heads_ != 0) throw std::invalid_argument("SelfAttentionBlock: heads must divide dim");
}

Tensor SelfAttentionBlock::operator()(const Tensor& x, const Tensor& pos) const {
  int n = x.dim(0), dim = x.dim(1);
  int hd = dim / heads;
  Tensor xn = ln_attn(x);
  Tensor qin = pos.defined() ? add(xn, pos) : xn;
  Tensor q = wq(qin), k = wk(qin), v = wv(xn);
  double scl = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice(q, 1, h * hd, hd);
    Tensor kh = slice(k, 1, h * hd, hd);
    Tensor vh = slice(v, 1, h * hd, hd);
    Tensor scores = scale(matmul(qh, transpose2d(kh)), scl);  // [n,n]
    Tensor attn = softmax(scores, 1);
    head_outs.push_back(matmul(attn, vh));
  }
  Tensor merged = concat(head_outs, 1);
  Tensor out = add(x, wo(merged));
  Tensor f = ffn2(relu(ffn1(ln_ffn(out))));
  return add(out, f);
}

}  // namespace occ
