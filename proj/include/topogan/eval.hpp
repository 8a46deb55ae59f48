#pragma once

// Conditional-fidelity evaluation of generator checkpoints and FEM
// re-analysis of generated structures.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "topogan/checkpoint.hpp"
#include "topogan/dataset.hpp"
#include "topogan/fem.hpp"
#include "topogan/image.hpp"

namespace topogan::eval {

/// Pixel mean.
double measure_volfrac(const Image& image);

struct EvalReport {
  double target = 0;
  int count = 0;
  double tolerance = 0;
  std::vector<double> per_sample;  // measured volume fractions
  double mean_vf = 0;
  double mean_abs_err = 0;
  double std_abs_err = 0;
  double frac_within_tol = 0;
  std::optional<std::vector<double>> compliance;
  std::string objective;
  std::string checkpoint;
  std::uint64_t seed = 0;
};

/// Target volume fraction of a condition: the value itself for continuous
/// conditions, the stored per-class training mean for class labels.
double condition_target(const Checkpoint& ckpt, const data::Condition& condition);

/// Samples `count` images at `condition`, post-processes them and compares
/// their volume fractions with the condition target. With `reanalyze_penal`,
/// each post-processed image is also solved under the default cantilever.
EvalReport conditional_eval(const Checkpoint& ckpt, const std::string& checkpoint_id,
                            const data::Condition& condition, int count, double tolerance,
                            std::uint64_t seed,
                            std::optional<double> reanalyze_penal = std::nullopt);

/// Aggregates measured volume fractions against `target`.
EvalReport summarize(std::vector<double> volfracs, double target, double tolerance);

std::string report_json(const EvalReport& report);

/// Compliance of `image` read as a density field (row 0 on top), pixels
/// clamped into [x_min, 1].
double reanalyze(const Image& image, const fem::BoundaryConditions& bc, double penal,
                 double x_min = 1e-3);

}  // namespace topogan::eval
