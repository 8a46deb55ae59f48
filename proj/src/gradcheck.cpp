#include "topogan/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "topogan/error.hpp"

namespace topogan::ad {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradCheckReport grad_check(const std::function<Tensor()>& loss, std::vector<NamedTensor> params,
                           double h, double floor) {
  for (auto& [name, p] : params) {
    if (!p.is_leaf() || !p.requires_grad()) {
      throw ContractError("grad_check: '" + name + "' is not a trainable leaf");
    }
    p.zero_grad();
  }
  const Tensor base = loss();
  base.backward();
  const double scaled_floor = floor * std::max(1.0, std::abs(base.item()));
  std::vector<std::vector<double>> analytic;
  for (auto& [name, p] : params) {
    analytic.emplace_back(p.grad().begin(), p.grad().end());
    analytic.back().resize(p.numel(), 0.0);  // unreached parameters have zero gradient
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].second.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + h;
      const double up = loss().item();
      values[i] = original - h;
      const double down = loss().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[k][i], numeric, scaled_floor);
      ++report.checked;
      if (err > report.max_rel_error || report.worst_name.empty()) {
        report.max_rel_error = err;
        report.worst_name = params[k].first;
        report.worst_index = i;
        report.worst_analytic = analytic[k][i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace topogan::ad
