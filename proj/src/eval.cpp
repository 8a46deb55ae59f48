#include "topogan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "topogan/error.hpp"
#include "topogan/objectives.hpp"
#include "topogan/trainer.hpp"

namespace topogan::eval {

double measure_volfrac(const Image& image) {
  if (image.pixels.empty()) throw DimensionError("empty image");
  return std::accumulate(image.pixels.begin(), image.pixels.end(), 0.0) /
         static_cast<double>(image.pixels.size());
}

double condition_target(const Checkpoint& ckpt, const data::Condition& condition) {
  if (const auto* c = std::get_if<data::ContinuousCondition>(&condition)) return c->value;
  const auto& label = std::get<data::ClassLabel>(condition);
  const auto targets = train::class_targets(ckpt);
  if (label.index < 0 || label.index >= static_cast<int>(targets.size())) {
    throw DomainError("class " + std::to_string(label.index) + " has no stored target");
  }
  return targets[label.index];
}

EvalReport summarize(std::vector<double> volfracs, double target, double tolerance) {
  EvalReport r;
  r.target = target;
  r.tolerance = tolerance;
  r.count = static_cast<int>(volfracs.size());
  r.per_sample = std::move(volfracs);
  if (r.count == 0) return r;
  std::vector<double> err;
  for (double v : r.per_sample) err.push_back(std::abs(v - target));
  const double n = r.count;
  r.mean_vf = std::accumulate(r.per_sample.begin(), r.per_sample.end(), 0.0) / n;
  r.mean_abs_err = std::accumulate(err.begin(), err.end(), 0.0) / n;
  double ss = 0;
  for (double e : err) ss += (e - r.mean_abs_err) * (e - r.mean_abs_err);
  r.std_abs_err = std::sqrt(ss / n);
  r.frac_within_tol = std::count_if(err.begin(), err.end(), [&](double e) { return e <= tolerance; }) / n;
  return r;
}

EvalReport conditional_eval(const Checkpoint& ckpt, const std::string& checkpoint_id,
                            const data::Condition& condition, int count, double tolerance,
                            std::uint64_t seed, std::optional<double> reanalyze_penal) {
  if (tolerance < 0) throw ParameterError("tolerance must be >= 0");
  const double target = condition_target(ckpt, condition);
  std::vector<double> vf, c;
  for (const auto& im : train::sample(ckpt, condition, count, seed)) {
    const auto p = postprocess(im);
    vf.push_back(measure_volfrac(p));
    if (reanalyze_penal) {
      c.push_back(reanalyze(p, fem::BoundaryConditions::cantilever({p.width, p.height}), *reanalyze_penal));
    }
  }
  auto r = summarize(std::move(vf), target, tolerance);
  if (reanalyze_penal) r.compliance = std::move(c);
  r.objective = obj::objective_name(static_cast<obj::Objective>(ckpt.at("meta/objective").data.at(0)));
  r.checkpoint = checkpoint_id;
  r.seed = seed;
  return r;
}

std::string report_json(const EvalReport& r) {
  nlohmann::json j;
  j["target"] = r.target;
  j["count"] = r.count;
  j["tolerance"] = r.tolerance;
  j["mean_vf"] = r.mean_vf;
  j["mean_abs_err"] = r.mean_abs_err;
  j["std_abs_err"] = r.std_abs_err;
  j["frac_within_tol"] = r.frac_within_tol;
  j["per_sample"] = r.per_sample;
  if (r.compliance) j["compliance"] = *r.compliance;
  j["objective"] = r.objective;
  j["checkpoint"] = r.checkpoint;
  j["seed"] = r.seed;
  return j.dump(2);
}

double reanalyze(const Image& image, const fem::BoundaryConditions& bc, double penal, double x_min) {
  if (!(x_min > 0 && x_min <= 1)) throw ParameterError("x_min must lie in (0, 1]");
  const fem::MeshSpec mesh{image.width, image.height};
  mesh.validate();
  fem::DensityField x{image.width, image.height, image.pixels};
  for (double& v : x.values) v = std::clamp(v, x_min, 1.0);
  return fem::compliance(x, fem::assemble_and_solve(x, penal, mesh, bc), penal, mesh);
}

}  // namespace topogan::eval
