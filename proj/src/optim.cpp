#include "rvt/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace rvt {

void sgd_step(const std::vector<Tensor>& params, double lr, bool zero_grads) {
  for (Tensor p : params) {
    if (!p.defined()) throw std::runtime_error("sgd_step: undefined parameter");
    auto g = p.grad();
    if (!g.empty() && lr != 0.0) {
      auto v = p.mutable_values();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    }
    if (zero_grads) p.zero_grad();
  }
}

void Adam::step(const std::vector<Tensor>& params, bool zero_grads) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].numel(), 0.0);
      v_[i].assign(params[i].numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) {
    throw std::runtime_error("Adam::step: parameter list size changed between steps");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto g = p.grad();
    if (!g.empty()) {
      auto val = p.mutable_values();
      if (m_[i].size() != val.size()) throw std::runtime_error("Adam::step: parameter shape changed");
      for (std::size_t j = 0; j < val.size(); ++j) {
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        val[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
    if (zero_grads) p.zero_grad();
  }
}

}  // namespace rvt
