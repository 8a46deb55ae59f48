#pragma once

// Alternating adversarial training: per step one discriminator update, then
// one generator update on fresh noise. Iteration k visits the dataset in an
// order shuffled from (seed, k); a batch that runs past the end wraps around.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "topogan/checkpoint.hpp"
#include "topogan/dataset.hpp"
#include "topogan/nets.hpp"
#include "topogan/objectives.hpp"
#include "topogan/optim.hpp"

namespace topogan::train {

struct TrainConfig {
  obj::Objective objective = obj::Objective::kCrcganA;
  int batch_size = 100;
  std::int64_t steps = 0;
  std::optional<std::int64_t> iterations;  // overrides `steps` when set
  std::optional<int> steps_per_iteration;  // default ceil(n / batch_size)
  ad::AdamConfig adam;
  std::uint64_t seed = 0;
  bool minibatch = false;
  int checkpoint_every = 0;  // steps; 0 writes final.ckpt only
  int metrics_every = 1;
  bool non_saturating = true;
  double mismatch_margin = 0.05;
  double collapse_fraction = 0.1;
  int collapse_window = 100;

  // Architecture; image size and condition fields are taken from the dataset.
  nets::GeneratorSpec generator;
  nets::DiscriminatorSpec discriminator;

  void validate() const;
};

struct StepMetrics {
  std::int64_t step = 0;  // 1-based index of the completed step
  std::int64_t iter = 0;  // 0-based iteration the step belongs to
  double d_loss = 0;
  double g_loss = 0;
  double diversity = 0;
  double mean_score_real = 0;
  double mean_score_fake = 0;
  std::optional<double> mean_score_mismatch;
  double wall_ms = 0;
  bool collapse_warning = false;
};

std::string metrics_json(const StepMetrics& m);

/// Mean pairwise L1 distance over an N x ... batch, divided by the per-image
/// element count. Throws ContractError for N < 2.
double diversity_metric(const ad::Tensor& images);

class CollapseMonitor {
 public:
  CollapseMonitor(double fraction, int window) : fraction_(fraction), window_(window) {}

  /// True when `diversity` is below fraction * median of the trailing window.
  bool observe(double diversity);
  const std::deque<double>& history() const { return history_; }
  void restore(std::vector<double> history);

 private:
  double fraction_;
  std::size_t window_;
  std::deque<double> history_;
};

class Trainer {
 public:
  Trainer(TrainConfig config, const data::Dataset& dataset);
  /// Continues from `ckpt`; throws ConsistencyError when the checkpoint was
  /// written for a different architecture or objective.
  Trainer(TrainConfig config, const data::Dataset& dataset, const Checkpoint& ckpt);

  StepMetrics step();

  Checkpoint checkpoint() const;
  std::int64_t steps_done() const { return step_; }
  std::int64_t total_steps() const;
  int steps_per_iteration() const { return steps_per_iter_; }

  const TrainConfig& config() const { return config_; }
  const nets::Generator& generator() const { return gen_; }
  const nets::Discriminator& discriminator() const { return disc_; }

 private:
  std::vector<std::size_t> batch_indices(std::int64_t step);
  std::vector<data::Condition> mismatched_conditions(const std::vector<data::Condition>& y);
  std::vector<const data::ConditionedSample*> mismatched_samples(const std::vector<data::Condition>& y);

  TrainConfig config_;
  const data::Dataset& data_;
  int steps_per_iter_;
  nets::Generator gen_;
  nets::Discriminator disc_;
  ad::Adam opt_g_;
  ad::Adam opt_d_;
  Rng rng_;
  CollapseMonitor monitor_;
  std::int64_t step_ = 0;
  std::vector<double> class_targets_;

  std::int64_t order_iter_ = -1;
  std::vector<std::size_t> order_;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics_log;
  std::vector<std::filesystem::path> checkpoints;
  std::int64_t collapse_warnings = 0;
};

/// Runs the configured budget, writing metrics.jsonl, ckpt_<step>.ckpt at the
/// checkpoint cadence and final.ckpt into `out_dir`. With `resume_from`,
/// metrics lines past the checkpoint step are dropped before continuing.
TrainResult train(const TrainConfig& config, const data::Dataset& dataset,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume_from = std::nullopt);

/// Rebuilds the generator stored in a checkpoint.
nets::Generator load_generator(const Checkpoint& ckpt);

/// Per-class mean pixel value of the training data, empty for continuous
/// conditions.
std::vector<double> class_targets(const Checkpoint& ckpt);

/// `count` generator samples at `condition`, deterministic in `seed`.
std::vector<Image> sample(const Checkpoint& ckpt, const data::Condition& condition, int count,
                          std::uint64_t seed);

}  // namespace topogan::train
