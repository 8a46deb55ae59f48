#pragma once

#include <cstdint>
#include <vector>

#include "topogan/tensor.hpp"

namespace topogan::ad {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed list of parameter leaves.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  /// One update from the current parameter gradients. Parameters that never
  /// received a gradient are treated as having a zero gradient.
  void step();
  void zero_grad();

  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  /// Restores moments and step count; throws ContractError on shape mismatch.
  void restore(std::int64_t step, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v);

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::int64_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace topogan::ad
