#include "occ/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace occ {

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  if (max_norm <= 0.0) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
  double sq = 0.0;
  for (auto& p : params) {
    p.n->ensure_grad();
    for (double g : p.grad()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm) {
    double s = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.grad()) g *= s;
  }
  return norm;
}

void AdamW::step(std::vector<Tensor>& params) {
  if (m.empty()) {
    m.resize(params.size());
    v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m[i].assign(params[i].size(), 0.0);
      v[i].assign(params[i].size(), 0.0);
    }
  }
  if (m.size() != params.size()) throw std::runtime_error("AdamW: parameter count changed");
  ++step_count;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    p.n->ensure_grad();
    if (m[i].size() != p.data().size()) throw std::runtime_error("AdamW: shape changed");
    for (size_t j = 0; j < p.data().size(); ++j) {
      double g = p.grad()[j];
      if (std::isnan(g) || std::isinf(g))
        throw std::runtime_error("AdamW: non-finite gradient at param " + std::to_string(i) +
                                 "[" + std::to_string(j) + "]");
      m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
      v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
      double mhat = m[i][j] / bc1;
      double vhat = v[i][j] / bc2;
      p.data()[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.data()[j]);
    }
  }
}

void AdamW::zero_grad(std::vector<Tensor>& params) {
  for (auto& p : params) {
    p.n->ensure_grad();
    std::fill(p.grad().begin(), p.grad().end(), 0.0);
  }
}

}  // namespace occ
