#include "topogan/objectives.hpp"

#include <cmath>

#include "topogan/error.hpp"

namespace topogan::obj {

namespace {

Tensor log_score(const Tensor& s) { return ad::log_clamped(clamp_scores(s), kScoreClamp); }
Tensor log_one_minus(const Tensor& s) {
  return ad::log_clamped(ad::one_minus(clamp_scores(s)), kScoreClamp);
}

void check_group(const Tensor& t, const char* what, std::size_t n) {
  if (!t.defined() || t.numel() == 0) throw ContractError(std::string("empty ") + what + " scores");
  if (n != 0 && t.numel() != n) throw ContractError(std::string("inconsistent ") + what + " batch size");
}

Losses two_term(const ScoreBatch& scores, const LossOptions& options) {
  check_group(scores.real, "real", 0);
  check_group(scores.fake, "fake", 0);
  const auto d = ad::scale(ad::add(ad::mean(log_score(scores.real)),
                                   ad::mean(log_one_minus(scores.fake))),
                           -1.0);
  return {d, generator_loss(scores.fake, options.non_saturating)};
}

Losses three_term(const ScoreBatch& scores, const LossOptions& options) {
  if (!scores.mismatched) throw ContractError("objective needs mismatched scores");
  check_group(scores.real, "real", 0);
  check_group(*scores.mismatched, "mismatched", scores.real.numel());
  check_group(scores.fake, "fake", 0);
  auto d = ad::add(ad::mean(log_score(scores.real)), ad::mean(log_one_minus(scores.fake)));
  if (options.mismatch_weight != 0.0) {
    d = ad::add(d, ad::scale(ad::mean(log_one_minus(*scores.mismatched)), options.mismatch_weight));
  }
  return {ad::scale(d, -1.0), generator_loss(scores.fake, options.non_saturating)};
}

}  // namespace

Objective parse_objective(std::string_view name) {
  if (name == "gan") return Objective::kGan;
  if (name == "cgan") return Objective::kCgan;
  if (name == "crcgan-a") return Objective::kCrcganA;
  if (name == "crcgan-b") return Objective::kCrcganB;
  throw ParameterError("unknown objective '" + std::string(name) + "'");
}

std::string objective_name(Objective objective) {
  switch (objective) {
    case Objective::kGan: return "gan";
    case Objective::kCgan: return "cgan";
    case Objective::kCrcganA: return "crcgan-a";
    case Objective::kCrcganB: return "crcgan-b";
  }
  return "?";
}

bool needs_mismatch(Objective objective) {
  return objective == Objective::kCrcganA || objective == Objective::kCrcganB;
}

Tensor clamp_scores(const Tensor& scores) {
  return ad::clamp(scores, kScoreClamp, 1.0 - kScoreClamp);
}

Tensor generator_loss(const Tensor& fake, bool non_saturating) {
  check_group(fake, "fake", 0);
  return non_saturating ? ad::scale(ad::mean(log_score(fake)), -1.0)
                        : ad::mean(log_one_minus(fake));
}

Losses gan_losses(const ScoreBatch& scores, const LossOptions& options) {
  if (scores.mismatched) throw ContractError("gan objective takes no mismatched scores");
  return two_term(scores, options);
}

Losses cgan_losses(const ScoreBatch& scores, const LossOptions& options) {
  if (scores.mismatched) throw ContractError("cgan objective takes no mismatched scores");
  return two_term(scores, options);
}

Losses crcgan_a_losses(const ScoreBatch& scores, const LossOptions& options) {
  return three_term(scores, options);
}

// Identical to variant A at the score level; the variants differ only in how
// the mismatched scores are produced.
Losses crcgan_b_losses(const ScoreBatch& scores, const LossOptions& options) {
  return three_term(scores, options);
}

Losses losses(Objective objective, const ScoreBatch& scores, const LossOptions& options) {
  switch (objective) {
    case Objective::kGan: return gan_losses(scores, options);
    case Objective::kCgan: return cgan_losses(scores, options);
    case Objective::kCrcganA: return crcgan_a_losses(scores, options);
    case Objective::kCrcganB: return crcgan_b_losses(scores, options);
  }
  throw ParameterError("unknown objective");
}

data::Condition sample_mismatched_condition(const data::Condition& y1,
                                            const ConditionSampler& sampler, Rng& rng) {
  if (data::kind_of(y1) != sampler.kind) throw DomainError("condition kind does not match sampler");
  if (const auto* label = std::get_if<data::ClassLabel>(&y1)) {
    if (sampler.cardinality < 2) throw DomainError("no mismatched label exists for cardinality 1");
    if (label->index < 0 || label->index >= sampler.cardinality) {
      throw DomainError("class index outside sampler domain");
    }
    for (;;) {
      const int y2 = static_cast<int>(rng.below(static_cast<std::uint64_t>(sampler.cardinality)));
      if (y2 != label->index) return data::ClassLabel{y2, sampler.cardinality};
    }
  }
  const double v = std::get<data::ContinuousCondition>(y1).value;
  if (!(sampler.lo < sampler.hi) || sampler.margin < 0) throw DomainError("invalid sampler range");
  if (v - sampler.lo < sampler.margin && sampler.hi - v < sampler.margin) {
    throw DomainError("no condition in range lies outside the margin");
  }
  for (;;) {
    const auto y2 = static_cast<float>(rng.uniform(sampler.lo, sampler.hi));
    if (std::abs(y2 - v) >= sampler.margin) return data::ContinuousCondition{y2};
  }
}

}  // namespace topogan::obj
