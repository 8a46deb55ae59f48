#pragma once

// Labeled image datasets: SIMP parameter sweeps, noise augmentation, MNIST
// ingestion, synthetic class datasets, and the TOPD binary container.
//
// TOPD layout (little-endian):
//   "TOPD" | u32 version=1 | u32 width | u32 height | u32 count
//   | u8 condition kind (0 continuous, 1 class) | u32 class cardinality
//   then per record:
//   f32 condition | f32 volfrac | f32 penal | f32 rmin | f32 compliance
//   | u8 converged | width*height f32 pixels, row-major

#include <cstdint>
#include <filesystem>
#include <optional>
#include <variant>
#include <vector>

#include "topogan/fem.hpp"
#include "topogan/image.hpp"

namespace topogan::data {

struct ContinuousCondition {
  float value = 0.0f;
  bool operator==(const ContinuousCondition&) const = default;
};

struct ClassLabel {
  int index = 0;
  int cardinality = 0;
  bool operator==(const ClassLabel&) const = default;
};

using Condition = std::variant<ContinuousCondition, ClassLabel>;

enum class ConditionKind : std::uint8_t { kContinuous = 0, kClass = 1 };

ConditionKind kind_of(const Condition& c);

/// SIMP provenance of a sample; all-zero when unknown.
struct SampleMeta {
  float volfrac = 0.0f;
  float penal = 0.0f;
  float rmin = 0.0f;
  float compliance = 0.0f;
  bool converged = false;
  bool operator==(const SampleMeta&) const = default;
};

struct ConditionedSample {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;
  Condition condition;
  SampleMeta meta;

  Image image() const;
  bool operator==(const ConditionedSample&) const = default;
};

struct Dataset {
  int width = 0;
  int height = 0;
  ConditionKind kind = ConditionKind::kContinuous;
  int cardinality = 0;  // 0 for continuous conditions
  std::vector<ConditionedSample> samples;

  /// Throws ConsistencyError when samples disagree with the header fields.
  void validate() const;
  bool operator==(const Dataset&) const = default;
};

struct SweepGrid {
  std::vector<double> volfrac;
  std::vector<double> penal;
  std::vector<double> rmin;
  fem::MeshSpec mesh;

  static constexpr double kVolfracMin = 0.3, kVolfracMax = 0.8;
  static constexpr double kPenalMin = 2.0, kPenalMax = 4.0;
  static constexpr double kRminMin = 1.5, kRminMax = 3.0;

  std::size_t size() const { return volfrac.size() * penal.size() * rmin.size(); }
  void validate() const;
};

ConditionedSample from_image(const Image& image, Condition condition, SampleMeta meta = {});

/// One SIMP run per grid point, ordered volfrac-major, then penal, then rmin.
/// `controls` supplies x_min, move, change_tol and max_iters. Runs that hit
/// max_iters stay in the dataset with meta.converged = false.
Dataset sweep_generate(const SweepGrid& grid, const fem::BoundaryConditions& bc,
                       const fem::SimpParams& controls = {});

/// Perturbs `noise_count` distinct pixels, chosen uniformly, by uniform noise
/// in [-amplitude, amplitude] and clamps to [0, 1].
ConditionedSample augment(const ConditionedSample& sample, int noise_count,
                          double noise_amplitude, std::uint64_t seed);

/// Appends one augmented copy of every sample (1% of pixels, amplitude 0.5
/// by default), doubling the dataset.
Dataset augment_dataset(const Dataset& ds, std::uint64_t seed,
                        std::optional<int> noise_count = std::nullopt,
                        double noise_amplitude = 0.5);

void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// Reads IDX3 images and IDX1 labels. With `downscale`, each image is
/// average-pooled over 2x2 blocks.
Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path, bool downscale = false);

/// Band images whose pixel mean for class k is (k+1)/(class_count+1); the
/// band orientation and position are jittered per sample.
Dataset synth_classes(int class_count, int per_class, int size, std::uint64_t seed);

/// Target pixel mean of class k in synth_classes.
double synth_class_target(int k, int class_count);

/// Seeded Fisher-Yates shuffle of the sample order.
void shuffle(Dataset& ds, std::uint64_t seed);

}  // namespace topogan::data
