#include "topogan/nets.hpp"

#include <algorithm>
#include <string>

#include "topogan/error.hpp"

namespace topogan::nets {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kMinibatchInitStd = 0.1;

Tensor normal_param(ad::Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(ad::numel_of(shape));
  for (double& x : v) x = stddev * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor zero_param(int n) { return Tensor::zeros({n}, true); }

std::size_t count(const std::vector<NamedTensor>& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

// Broadcasts N x D condition rows to N x D x H x W constant planes.
Tensor condition_planes(const Tensor& condition, int h, int w) {
  const int n = condition.dim(0), d = condition.dim(1);
  std::vector<double> v(static_cast<std::size_t>(n) * d * h * w);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c)
      std::fill_n(v.begin() + (static_cast<std::ptrdiff_t>(i) * d + c) * h * w, h * w,
                  condition.data()[static_cast<std::size_t>(i) * d + c]);
  return Tensor::from({n, d, h, w}, std::move(v));
}

void check_condition(const Tensor& condition, int n, const ConditionSpec& spec) {
  if (condition.ndim() != 2 || condition.dim(0) != n || condition.dim(1) != spec.dim()) {
    throw ShapeError("condition tensor " + ad::shape_str(condition.shape()) + " for batch " +
                     std::to_string(n) + " with condition width " + std::to_string(spec.dim()));
  }
}

}  // namespace

int ConditionSpec::dim() const { return kind == data::ConditionKind::kClass ? cardinality : 1; }

void ConditionSpec::validate() const {
  if (kind == data::ConditionKind::kClass && cardinality < 1) {
    throw SpecError("class conditions need cardinality >= 1");
  }
}

Tensor encode_conditions(std::span<const data::Condition> conditions, const ConditionSpec& spec) {
  const int n = static_cast<int>(conditions.size());
  const int d = spec.dim();
  std::vector<double> v(static_cast<std::size_t>(n) * d, 0.0);
  for (int i = 0; i < n; ++i) {
    if (data::kind_of(conditions[i]) != spec.kind) throw DomainError("condition kind mismatch");
    if (const auto* label = std::get_if<data::ClassLabel>(&conditions[i])) {
      if (label->index < 0 || label->index >= spec.cardinality) {
        throw DomainError("class index " + std::to_string(label->index) + " outside cardinality " +
                          std::to_string(spec.cardinality));
      }
      v[static_cast<std::size_t>(i) * d + label->index] = 1.0;
    } else {
      v[i] = std::get<data::ContinuousCondition>(conditions[i]).value;
    }
  }
  return Tensor::from({n, d}, std::move(v));
}

void GeneratorSpec::validate() const {
  condition.validate();
  if (z_dim < 1) throw SpecError("z_dim must be >= 1");
  if (width < 4 || height < 4 || width % 4 != 0 || height % 4 != 0) {
    throw SpecError("generator output " + std::to_string(width) + "x" + std::to_string(height) +
                    " is not a multiple of 4");
  }
  if (base_channels < 1 || mid_channels < 1) throw SpecError("channel counts must be >= 1");
}

void DiscriminatorSpec::validate() const {
  condition.validate();
  if (width < 4 || height < 4 || width % 4 != 0 || height % 4 != 0) {
    throw SpecError("discriminator input " + std::to_string(width) + "x" +
                    std::to_string(height) + " is not a multiple of 4");
  }
  if (conv1_channels < 1 || conv2_channels < 1 || feature_dim < 1) {
    throw SpecError("layer widths must be >= 1");
  }
  if (minibatch.enabled && (minibatch.kernels < 1 || minibatch.kernel_dim < 1)) {
    throw SpecError("minibatch discrimination needs B, C >= 1");
  }
}

Tensor Dense::operator()(const Tensor& x) const { return ad::add_bias(ad::matmul(x, weight), bias); }

Tensor Conv::operator()(const Tensor& x) const {
  return ad::add_bias(ad::conv2d(x, weight, stride, padding), bias);
}

Tensor ConvTranspose::operator()(const Tensor& x) const {
  return ad::add_bias(ad::conv_transpose2d(x, weight, stride, padding), bias);
}

Tensor minibatch_features(const Tensor& features, const Tensor& t, int kernels, int kernel_dim) {
  const int n = features.dim(0);
  const auto m = ad::reshape(ad::matmul(features, t), {n, kernels, kernel_dim});
  return ad::minibatch_similarity(m);
}

Generator::Generator(GeneratorSpec spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  Rng rng(seed);
  const int in = spec_.z_dim + spec_.condition.dim();
  const int cells = (spec_.height / 4) * (spec_.width / 4);
  fc_ = {normal_param({in, spec_.base_channels * cells}, kInitStd, rng),
         zero_param(spec_.base_channels * cells)};
  up1_ = {normal_param({spec_.base_channels, spec_.mid_channels, 4, 4}, kInitStd, rng),
          zero_param(spec_.mid_channels), 2, 1};
  up2_ = {normal_param({spec_.mid_channels, 1, 4, 4}, kInitStd, rng), zero_param(1), 2, 1};
}

Tensor Generator::forward(const Tensor& z, const Tensor& condition) const {
  if (z.ndim() != 2 || z.dim(1) != spec_.z_dim) {
    throw ShapeError("noise " + ad::shape_str(z.shape()) + " for z_dim " + std::to_string(spec_.z_dim));
  }
  const int n = z.dim(0);
  check_condition(condition, n, spec_.condition);
  auto h = fc_(ad::concat({z, condition}, 1));
  h = ad::leaky_relu(ad::reshape(h, {n, spec_.base_channels, spec_.height / 4, spec_.width / 4}),
                     spec_.slope);
  h = ad::leaky_relu(up1_(h), spec_.slope);
  return ad::sigmoid(up2_(h));
}

std::vector<NamedTensor> Generator::parameters() const {
  return {{"fc.weight", fc_.weight},   {"fc.bias", fc_.bias},   {"up1.weight", up1_.weight},
          {"up1.bias", up1_.bias},     {"up2.weight", up2_.weight}, {"up2.bias", up2_.bias}};
}

std::size_t Generator::parameter_count() const { return count(parameters()); }

Discriminator::Discriminator(DiscriminatorSpec spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  Rng rng(seed);
  const int cond = spec_.condition.dim();
  conv1_ = {normal_param({spec_.conv1_channels, 1 + cond, 4, 4}, kInitStd, rng),
            zero_param(spec_.conv1_channels), 2, 1};
  conv2_ = {normal_param({spec_.conv2_channels, spec_.conv1_channels, 4, 4}, kInitStd, rng),
            zero_param(spec_.conv2_channels), 2, 1};
  const int flat = spec_.conv2_channels * (spec_.height / 4) * (spec_.width / 4);
  fc_ = {normal_param({flat, spec_.feature_dim}, kInitStd, rng), zero_param(spec_.feature_dim)};
  if (spec_.minibatch.enabled) {
    minibatch_t_ = normal_param(
        {spec_.feature_dim, spec_.minibatch.kernels * spec_.minibatch.kernel_dim},
        kMinibatchInitStd, rng);
  }
  out_ = {normal_param({final_feature_length(), 1}, kInitStd, rng), zero_param(1)};
}

int Discriminator::final_feature_length() const {
  return spec_.feature_dim + (spec_.minibatch.enabled ? spec_.minibatch.kernels : 0) +
         spec_.condition.dim();
}

Tensor Discriminator::features(const Tensor& x, const Tensor& condition) const {
  if (x.ndim() != 4 || x.dim(1) != 1 || x.dim(2) != spec_.height || x.dim(3) != spec_.width) {
    throw ShapeError("discriminator input " + ad::shape_str(x.shape()));
  }
  const int n = x.dim(0);
  check_condition(condition, n, spec_.condition);
  auto h = ad::concat({x, condition_planes(condition, spec_.height, spec_.width)}, 1);
  h = ad::leaky_relu(conv1_(h), spec_.slope);
  h = ad::leaky_relu(conv2_(h), spec_.slope);
  const auto f = ad::leaky_relu(fc_(ad::reshape(h, {n, static_cast<int>(h.numel()) / n})), spec_.slope);
  if (!spec_.minibatch.enabled) return ad::concat({f, condition}, 1);
  // divided by the number of other samples
  const auto o = ad::scale(
      minibatch_features(f, minibatch_t_, spec_.minibatch.kernels, spec_.minibatch.kernel_dim),
      1.0 / std::max(n - 1, 1));
  return ad::concat({f, o, condition}, 1);
}

Tensor Discriminator::forward(const Tensor& x, const Tensor& condition) const {
  return ad::sigmoid(out_(features(x, condition)));
}

std::vector<NamedTensor> Discriminator::parameters() const {
  std::vector<NamedTensor> p = {{"conv1.weight", conv1_.weight}, {"conv1.bias", conv1_.bias},
                                {"conv2.weight", conv2_.weight}, {"conv2.bias", conv2_.bias},
                                {"fc.weight", fc_.weight},       {"fc.bias", fc_.bias}};
  if (spec_.minibatch.enabled) p.emplace_back("minibatch.T", minibatch_t_);
  p.emplace_back("out.weight", out_.weight);
  p.emplace_back("out.bias", out_.bias);
  return p;
}

std::size_t Discriminator::parameter_count() const { return count(parameters()); }

Tensor sample_noise(int n, int z_dim, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(n) * z_dim);
  for (double& x : v) x = rng.normal();
  return Tensor::from({n, z_dim}, std::move(v));
}

Tensor images_to_tensor(std::span<const data::ConditionedSample* const> samples) {
  if (samples.empty()) throw ContractError("empty image batch");
  const int h = samples.front()->height, w = samples.front()->width;
  const int n = static_cast<int>(samples.size());
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(n) * h * w);
  for (const auto* s : samples) {
    if (s->height != h || s->width != w) throw ShapeError("image batch with mixed sizes");
    v.insert(v.end(), s->pixels.begin(), s->pixels.end());
  }
  return Tensor::from({n, 1, h, w}, std::move(v));
}

}  // namespace topogan::nets
