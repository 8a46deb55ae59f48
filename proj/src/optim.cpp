#include "topogan/optim.hpp"

#include <cmath>
#include <string>

#include "topogan/error.hpp"

namespace topogan::ad {

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    if (!p.is_leaf() || !p.requires_grad()) throw ContractError("Adam needs trainable leaves");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto values = params_[k].mutable_data();
    const auto grad = params_[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      values[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::restore(std::int64_t step, std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v) {
  if (step < 0) throw ContractError("Adam step count must be >= 0");
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw ContractError("Adam moments do not match the parameter list");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (m[k].size() != params_[k].numel() || v[k].size() != params_[k].numel()) {
      throw ContractError("Adam moment " + std::to_string(k) + " has the wrong size");
    }
  }
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace topogan::ad
