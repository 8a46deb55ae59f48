#pragma once

// Conditional DCGAN-style generator and discriminator, plus minibatch
// discrimination.
//
// Generator:     [z | y] -> dense -> base x H/4 x W/4 -> lrelu
//                -> tconv(4, s2) -> mid x H/2 x W/2 -> lrelu
//                -> tconv(4, s2) -> 1 x H x W -> sigmoid
// Discriminator: [x | y broadcast as channels] -> conv(4, s2) -> lrelu
//                -> conv(4, s2) -> lrelu -> dense(A) -> lrelu = f
//                -> [f | minibatch(f) / (N-1) | y] -> dense(1) -> sigmoid

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "topogan/dataset.hpp"
#include "topogan/gradcheck.hpp"
#include "topogan/random.hpp"
#include "topogan/tensor.hpp"

namespace topogan::nets {

using ad::NamedTensor;
using ad::Tensor;

struct ConditionSpec {
  data::ConditionKind kind = data::ConditionKind::kClass;
  int cardinality = 2;

  /// Width of the encoded condition: one-hot for classes, 1 for continuous.
  int dim() const;
  void validate() const;
  bool operator==(const ConditionSpec&) const = default;
};

/// N x dim encoding of a batch of conditions.
Tensor encode_conditions(std::span<const data::Condition> conditions, const ConditionSpec& spec);

struct GeneratorSpec {
  int z_dim = 64;
  ConditionSpec condition;
  int width = 16;
  int height = 16;
  int base_channels = 128;
  int mid_channels = 64;
  double slope = 0.2;

  void validate() const;
};

struct MinibatchSpec {
  bool enabled = false;
  int kernels = 32;     // B
  int kernel_dim = 8;   // C
};

struct DiscriminatorSpec {
  int width = 16;
  int height = 16;
  ConditionSpec condition;
  int conv1_channels = 32;
  int conv2_channels = 64;
  int feature_dim = 64;  // A
  MinibatchSpec minibatch;
  double slope = 0.2;

  void validate() const;
};

struct Dense {
  Tensor weight;  // in x out
  Tensor bias;
  Tensor operator()(const Tensor& x) const;
};

struct Conv {
  Tensor weight;  // out x in x k x k
  Tensor bias;
  int stride = 2;
  int padding = 1;
  Tensor operator()(const Tensor& x) const;
};

struct ConvTranspose {
  Tensor weight;  // in x out x k x k
  Tensor bias;
  int stride = 2;
  int padding = 1;
  Tensor operator()(const Tensor& x) const;
};

/// N x A features times the learned A x (B*C) tensor, reshaped to N x B x C,
/// reduced to N x B batch-similarity features.
Tensor minibatch_features(const Tensor& features, const Tensor& t, int kernels, int kernel_dim);

class Generator {
 public:
  Generator(GeneratorSpec spec, std::uint64_t seed);

  /// z: N x z_dim, condition: N x condition.dim() -> N x 1 x H x W in [0, 1].
  Tensor forward(const Tensor& z, const Tensor& condition) const;

  const GeneratorSpec& spec() const { return spec_; }
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;

 private:
  GeneratorSpec spec_;
  Dense fc_;
  ConvTranspose up1_;
  ConvTranspose up2_;
};

class Discriminator {
 public:
  Discriminator(DiscriminatorSpec spec, std::uint64_t seed);

  /// x: N x 1 x H x W, condition: N x condition.dim() -> N x 1 scores in (0, 1).
  Tensor forward(const Tensor& x, const Tensor& condition) const;
  /// Input of the final dense layer, N x final_feature_length().
  Tensor features(const Tensor& x, const Tensor& condition) const;
  int final_feature_length() const;

  const DiscriminatorSpec& spec() const { return spec_; }
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;

 private:
  DiscriminatorSpec spec_;
  Conv conv1_;
  Conv conv2_;
  Dense fc_;
  Tensor minibatch_t_;
  Dense out_;
};

/// Standard-normal N x z_dim noise from `rng`.
Tensor sample_noise(int n, int z_dim, Rng& rng);

/// Stacks sample images into an N x 1 x H x W tensor.
Tensor images_to_tensor(std::span<const data::ConditionedSample* const> samples);

}  // namespace topogan::nets
