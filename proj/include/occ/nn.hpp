#pragma once

#include <random>
#include <string>
#include <vector>

#include "occ/tensor.hpp"

namespace occ {

// Ordered, named parameter registry; creation order is the checkpoint and
// optimizer-slot order.
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed) : rng_(seed) {}

  Tensor add(const std::string& name, Shape shape, double init_std);
  Tensor add_zeros(const std::string& name, Shape shape);
  Tensor add_full(const std::string& name, Shape shape, double v);

  std::vector<Tensor> tensors() const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  Tensor find(const std::string& name) const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::mt19937_64 rng_;
};

struct Linear {
  Tensor w;  // [in,out]
  Tensor b;  // [out]
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int in, int out, bool zero_init = false);
  // x [N,in] -> [N,out]
  Tensor operator()(const Tensor& x) const;
};

struct LayerNormParams {
  Tensor gamma, beta;
  LayerNormParams() = default;
  LayerNormParams(ParamStore& ps, const std::string& name, int dim);
  Tensor operator()(const Tensor& x) const;
};

// Pre-norm multi-head self-attention block with FFN:
//   x += Wo * MHSA(LN(x) + pos)   (pos added to queries and keys only)
//   x += FFN(LN(x))
struct SelfAttentionBlock {
  int heads = 8;
  LayerNormParams ln_attn, ln_ffn;
  Linear wq, wk, wv, wo, ffn1, ffn2;
  SelfAttentionBlock() = default;
  SelfAttentionBlock(ParamStore& ps, const std::string& name, int dim, int heads,
                     int ffn_mult = 2);
  // x [N,dim]; pos [N,dim] or undefined.
  Tensor operator()(const Tensor& x, const Tensor& pos) const;
};

}  // namespace occ
