#pragma once

// Adversarial objectives over discriminator scores. D losses are negated
// objectives to be minimized; every log is taken of a score clamped into
// [1e-12, 1 - 1e-12].

#include <optional>
#include <string>
#include <string_view>

#include "topogan/dataset.hpp"
#include "topogan/random.hpp"
#include "topogan/tensor.hpp"

namespace topogan::obj {

using ad::Tensor;

inline constexpr double kScoreClamp = 1e-12;

enum class Objective { kGan, kCgan, kCrcganA, kCrcganB };

/// gan | cgan | crcgan-a | crcgan-b; anything else raises ParameterError.
Objective parse_objective(std::string_view name);
std::string objective_name(Objective objective);
bool needs_mismatch(Objective objective);

struct ScoreBatch {
  Tensor real;                       // D(x|y1)
  std::optional<Tensor> mismatched;  // D(x|y2) or D(x2|y)
  Tensor fake;                       // D(G(z|y)|y)
};

struct LossOptions {
  bool non_saturating = false;
  double mismatch_weight = 1.0;
};

struct Losses {
  Tensor d_loss;
  Tensor g_loss;
};

Tensor clamp_scores(const Tensor& scores);

/// mean l(1 - fake) when saturating, -mean l(fake) otherwise.
Tensor generator_loss(const Tensor& fake, bool non_saturating);

Losses gan_losses(const ScoreBatch& scores, const LossOptions& options = {});
Losses cgan_losses(const ScoreBatch& scores, const LossOptions& options = {});
Losses crcgan_a_losses(const ScoreBatch& scores, const LossOptions& options = {});
Losses crcgan_b_losses(const ScoreBatch& scores, const LossOptions& options = {});
Losses losses(Objective objective, const ScoreBatch& scores, const LossOptions& options = {});

struct ConditionSampler {
  data::ConditionKind kind = data::ConditionKind::kClass;
  int cardinality = 2;
  double lo = 0.3;
  double hi = 0.8;
  double margin = 0.05;
};

/// Class conditions: uniform over labels other than y1. Continuous: uniform
/// over [lo, hi], redrawn while |y2 - y1| < margin.
data::Condition sample_mismatched_condition(const data::Condition& y1,
                                            const ConditionSampler& sampler, Rng& rng);

}  // namespace topogan::obj
