#include "topogan/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "topogan/error.hpp"

namespace topogan::train {

namespace {

using ad::Tensor;

enum Stream : std::uint64_t { kTrainRng = 0, kShuffle = 1, kGenInit = 2, kDiscInit = 3 };

constexpr int kMismatchAttempts = 100000;

std::vector<double> encode_spec(const nets::GeneratorSpec& s) {
  return {double(s.z_dim), double(s.condition.kind), double(s.condition.cardinality), double(s.width),
          double(s.height), double(s.base_channels), double(s.mid_channels), s.slope};
}

std::vector<double> encode_spec(const nets::DiscriminatorSpec& s) {
  return {double(s.width), double(s.height), double(s.condition.kind), double(s.condition.cardinality),
          double(s.conv1_channels), double(s.conv2_channels), double(s.feature_dim),
          double(s.minibatch.enabled), double(s.minibatch.kernels), double(s.minibatch.kernel_dim),
          s.slope};
}

nets::GeneratorSpec decode_generator_spec(const TensorRecord& t) {
  if (t.data.size() != 8) throw FormatError("malformed generator spec", 0);
  const auto& d = t.data;
  nets::GeneratorSpec s;
  s.z_dim = int(d[0]);
  s.condition = {static_cast<data::ConditionKind>(int(d[1])), int(d[2])};
  s.width = int(d[3]);
  s.height = int(d[4]);
  s.base_channels = int(d[5]);
  s.mid_channels = int(d[6]);
  s.slope = d[7];
  return s;
}

nets::ConditionSpec condition_spec(const TrainConfig& config, const data::Dataset& ds) {
  if (config.objective == obj::Objective::kGan) return {data::ConditionKind::kContinuous, 0};
  return {ds.kind, ds.kind == data::ConditionKind::kClass ? ds.cardinality : 0};
}

nets::GeneratorSpec generator_spec(const TrainConfig& config, const data::Dataset& ds) {
  auto s = config.generator;
  s.width = ds.width;
  s.height = ds.height;
  s.condition = condition_spec(config, ds);
  return s;
}

nets::DiscriminatorSpec discriminator_spec(const TrainConfig& config, const data::Dataset& ds) {
  auto s = config.discriminator;
  s.width = ds.width;
  s.height = ds.height;
  s.condition = condition_spec(config, ds);
  s.minibatch.enabled = config.minibatch;
  return s;
}

const data::Dataset& checked(const data::Dataset& ds, const TrainConfig& config) {
  config.validate();
  ds.validate();
  if (ds.samples.empty()) throw ParameterError("training dataset is empty");
  if (config.objective == obj::Objective::kCrcganB && ds.samples.size() < 2) {
    throw ParameterError("crcgan-b needs at least two samples");
  }
  return ds;
}

std::vector<std::uint32_t> dims_of(const Tensor& t) {
  return {t.shape().begin(), t.shape().end()};
}

std::vector<double> values_of(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void save_params(Checkpoint& ckpt, const std::string& prefix, const std::vector<ad::NamedTensor>& params,
                 const ad::Adam& opt) {
  for (const auto& [name, t] : params) ckpt.add(prefix + "/" + name, dims_of(t), values_of(t));
  const std::string o = "opt" + prefix;
  ckpt.add(o + "/step", {1}, {double(opt.step_count())});
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    ckpt.add(o + "/m/" + name, dims_of(t), opt.first_moments()[i]);
    ckpt.add(o + "/v/" + name, dims_of(t), opt.second_moments()[i]);
  }
}

void load_values(const Checkpoint& ckpt, const std::string& prefix,
                 const std::vector<ad::NamedTensor>& params) {
  for (auto [name, t] : params) {
    const auto& rec = ckpt.at(prefix + "/" + name);
    if (rec.shape != dims_of(t)) throw ConsistencyError("checkpoint tensor " + rec.name + " has the wrong shape");
    std::copy(rec.data.begin(), rec.data.end(), t.mutable_data().begin());
  }
}

void load_params(const Checkpoint& ckpt, const std::string& prefix,
                 const std::vector<ad::NamedTensor>& params, ad::Adam& opt) {
  load_values(ckpt, prefix, params);
  const std::string o = "opt" + prefix;
  std::vector<std::vector<double>> m, v;
  for (const auto& [name, t] : params) {
    m.push_back(ckpt.at(o + "/m/" + name).data);
    v.push_back(ckpt.at(o + "/v/" + name).data);
  }
  opt.restore(static_cast<std::int64_t>(ckpt.at(o + "/step").data.at(0)), std::move(m), std::move(v));
}

std::vector<Tensor> tensors_of(const std::vector<ad::NamedTensor>& params) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

double mean_of(const Tensor& t) {
  return std::accumulate(t.data().begin(), t.data().end(), 0.0) / static_cast<double>(t.numel());
}

bool conditions_differ(const data::Condition& a, const data::Condition& b, double margin) {
  if (const auto* la = std::get_if<data::ClassLabel>(&a)) {
    return la->index != std::get<data::ClassLabel>(b).index;
  }
  return std::abs(std::get<data::ContinuousCondition>(a).value -
                  std::get<data::ContinuousCondition>(b).value) >= margin;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ParameterError("batch size must be >= 1");
  if (minibatch && batch_size < 2) throw ParameterError("minibatch discrimination needs batch size >= 2");
  if (steps < 0 || (iterations && *iterations < 0)) throw ParameterError("budget must be >= 0");
  if (steps_per_iteration && *steps_per_iteration < 1) throw ParameterError("steps per iteration must be >= 1");
  if (checkpoint_every < 0 || metrics_every < 1) throw ParameterError("invalid cadence");
  if (mismatch_margin < 0) throw ParameterError("mismatch margin must be >= 0");
  if (collapse_window < 1 || collapse_fraction < 0) throw ParameterError("invalid collapse monitor");
}

std::string metrics_json(const StepMetrics& m) {
  nlohmann::json j;
  j["step"] = m.step;
  j["iter"] = m.iter;
  j["d_loss"] = m.d_loss;
  j["g_loss"] = m.g_loss;
  j["diversity"] = m.diversity;
  j["mean_score_real"] = m.mean_score_real;
  j["mean_score_fake"] = m.mean_score_fake;
  j["mean_score_mismatch"] = m.mean_score_mismatch ? nlohmann::json(*m.mean_score_mismatch) : nlohmann::json();
  j["wall_ms"] = m.wall_ms;
  j["collapse_warning"] = m.collapse_warning;
  return j.dump();
}

double diversity_metric(const Tensor& images) {
  if (images.ndim() < 1 || images.dim(0) < 2) throw ContractError("diversity needs at least two images");
  const std::size_t n = images.dim(0), p = images.numel() / n;
  const auto x = images.data();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = 0;
      for (std::size_t k = 0; k < p; ++k) d += std::abs(x[i * p + k] - x[j * p + k]);
      total += d;
    }
  return total / (static_cast<double>(n * (n - 1) / 2) * static_cast<double>(p));
}

bool CollapseMonitor::observe(double diversity) {
  bool warn = false;
  if (!history_.empty()) {
    std::vector<double> sorted(history_.begin(), history_.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t h = sorted.size();
    const double median = h % 2 ? sorted[h / 2] : 0.5 * (sorted[h / 2 - 1] + sorted[h / 2]);
    warn = diversity < fraction_ * median;
  }
  history_.push_back(diversity);
  if (history_.size() > window_) history_.pop_front();
  return warn;
}

void CollapseMonitor::restore(std::vector<double> history) {
  history_.assign(history.begin(), history.end());
  while (history_.size() > window_) history_.pop_front();
}

Trainer::Trainer(TrainConfig config, const data::Dataset& dataset)
    : config_(std::move(config)),
      data_(checked(dataset, config_)),
      steps_per_iter_(config_.steps_per_iteration.value_or(
          static_cast<int>((dataset.samples.size() + config_.batch_size - 1) / config_.batch_size))),
      gen_(generator_spec(config_, dataset), derive_seed(config_.seed, kGenInit)),
      disc_(discriminator_spec(config_, dataset), derive_seed(config_.seed, kDiscInit)),
      opt_g_(tensors_of(gen_.parameters()), config_.adam),
      opt_d_(tensors_of(disc_.parameters()), config_.adam),
      rng_(derive_seed(config_.seed, kTrainRng)),
      monitor_(config_.collapse_fraction, config_.collapse_window) {
  if (data_.kind == data::ConditionKind::kClass) {
    class_targets_.assign(data_.cardinality, 0.0);
    std::vector<std::size_t> counts(data_.cardinality, 0);
    for (const auto& s : data_.samples) {
      const int k = std::get<data::ClassLabel>(s.condition).index;
      class_targets_[k] += std::accumulate(s.pixels.begin(), s.pixels.end(), 0.0) / s.pixels.size();
      ++counts[k];
    }
    for (int k = 0; k < data_.cardinality; ++k)
      if (counts[k]) class_targets_[k] /= static_cast<double>(counts[k]);
  }
}

Trainer::Trainer(TrainConfig config, const data::Dataset& dataset, const Checkpoint& ckpt)
    : Trainer(std::move(config), dataset) {
  if (ckpt.at("meta/objective").data != std::vector<double>{double(config_.objective)} ||
      ckpt.at("meta/generator").data != encode_spec(gen_.spec()) ||
      ckpt.at("meta/discriminator").data != encode_spec(disc_.spec())) {
    throw ConsistencyError("checkpoint was written for a different objective or architecture");
  }
  load_params(ckpt, "G", gen_.parameters(), opt_g_);
  load_params(ckpt, "D", disc_.parameters(), opt_d_);
  monitor_.restore(ckpt.at("monitor/history").data);
  rng_.restore(ckpt.rng_state);
  step_ = static_cast<std::int64_t>(ckpt.step);
}

std::int64_t Trainer::total_steps() const {
  return config_.iterations ? *config_.iterations * steps_per_iter_ : config_.steps;
}

std::vector<std::size_t> Trainer::batch_indices(std::int64_t step) {
  const std::int64_t iter = step / steps_per_iter_;
  const std::size_t n = data_.samples.size();
  if (iter != order_iter_) {
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(derive_seed(config_.seed, kShuffle), static_cast<std::uint64_t>(iter)));
    for (std::size_t i = n; i > 1; --i) std::swap(order_[i - 1], order_[shuffle_rng.below(i)]);
    order_iter_ = iter;
  }
  const std::size_t start = static_cast<std::size_t>(step % steps_per_iter_) * config_.batch_size;
  std::vector<std::size_t> idx(config_.batch_size);
  for (int k = 0; k < config_.batch_size; ++k) idx[k] = order_[(start + k) % n];
  return idx;
}

std::vector<data::Condition> Trainer::mismatched_conditions(const std::vector<data::Condition>& y) {
  obj::ConditionSampler s{data_.kind, data_.cardinality, 0.3, 0.8, config_.mismatch_margin};
  if (data_.kind == data::ConditionKind::kContinuous) {
    auto [lo, hi] = std::minmax_element(data_.samples.begin(), data_.samples.end(), [](const auto& a, const auto& b) {
      return std::get<data::ContinuousCondition>(a.condition).value <
             std::get<data::ContinuousCondition>(b.condition).value;
    });
    s.lo = std::get<data::ContinuousCondition>(lo->condition).value;
    s.hi = std::get<data::ContinuousCondition>(hi->condition).value;
  }
  std::vector<data::Condition> out;
  out.reserve(y.size());
  for (const auto& c : y) out.push_back(obj::sample_mismatched_condition(c, s, rng_));
  return out;
}

std::vector<const data::ConditionedSample*> Trainer::mismatched_samples(const std::vector<data::Condition>& y) {
  std::vector<const data::ConditionedSample*> out;
  out.reserve(y.size());
  for (const auto& c : y) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMismatchAttempts) throw DomainError("no training sample with a different condition");
      const auto& s = data_.samples[rng_.below(data_.samples.size())];
      if (conditions_differ(s.condition, c, config_.mismatch_margin)) {
        out.push_back(&s);
        break;
      }
    }
  }
  return out;
}

StepMetrics Trainer::step() {
  const auto start = std::chrono::steady_clock::now();
  StepMetrics m;
  m.iter = step_ / steps_per_iter_;

  const auto idx = batch_indices(step_);
  std::vector<const data::ConditionedSample*> batch;
  std::vector<data::Condition> y;
  for (auto i : idx) {
    batch.push_back(&data_.samples[i]);
    y.push_back(config_.objective == obj::Objective::kGan ? data::Condition(data::ContinuousCondition{0})
                                                          : data_.samples[i].condition);
  }
  const int n = static_cast<int>(batch.size());
  const auto x = nets::images_to_tensor(batch);
  const auto y_enc = nets::encode_conditions(y, gen_.spec().condition);
  const auto z = nets::sample_noise(n, gen_.spec().z_dim, rng_);

  Tensor fake;
  {
    ad::NoGradGuard no_grad;
    fake = gen_.forward(z, y_enc);
  }

  opt_d_.zero_grad();
  obj::ScoreBatch scores{disc_.forward(x, y_enc), std::nullopt, disc_.forward(fake, y_enc)};
  if (config_.objective == obj::Objective::kCrcganA) {
    const auto y2 = mismatched_conditions(y);
    scores.mismatched = disc_.forward(x, nets::encode_conditions(y2, gen_.spec().condition));
  } else if (config_.objective == obj::Objective::kCrcganB) {
    scores.mismatched = disc_.forward(nets::images_to_tensor(mismatched_samples(y)), y_enc);
  }
  const obj::LossOptions options{config_.non_saturating, 1.0};
  const auto d_loss = obj::losses(config_.objective, scores, options).d_loss;
  m.d_loss = d_loss.item();
  if (!std::isfinite(m.d_loss)) {
    throw TrainingError("non-finite discriminator loss at step " + std::to_string(step_ + 1));
  }
  d_loss.backward();
  opt_d_.step();

  opt_g_.zero_grad();
  const auto z2 = nets::sample_noise(n, gen_.spec().z_dim, rng_);
  const auto g_loss = obj::generator_loss(disc_.forward(gen_.forward(z2, y_enc), y_enc), config_.non_saturating);
  m.g_loss = g_loss.item();
  if (!std::isfinite(m.g_loss)) {
    throw TrainingError("non-finite generator loss at step " + std::to_string(step_ + 1));
  }
  g_loss.backward();
  opt_g_.step();

  m.mean_score_real = mean_of(scores.real);
  m.mean_score_fake = mean_of(scores.fake);
  if (scores.mismatched) m.mean_score_mismatch = mean_of(*scores.mismatched);
  m.diversity = n >= 2 ? diversity_metric(fake) : 0.0;
  m.collapse_warning = n >= 2 && monitor_.observe(m.diversity);
  m.step = ++step_;
  m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return m;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.step = static_cast<std::uint64_t>(step_);
  ckpt.add("meta/objective", {1}, {double(config_.objective)});
  const auto g = encode_spec(gen_.spec()), d = encode_spec(disc_.spec());
  ckpt.add("meta/generator", {std::uint32_t(g.size())}, g);
  ckpt.add("meta/discriminator", {std::uint32_t(d.size())}, d);
  ckpt.add("meta/class_targets", {std::uint32_t(class_targets_.size())}, class_targets_);
  save_params(ckpt, "G", gen_.parameters(), opt_g_);
  save_params(ckpt, "D", disc_.parameters(), opt_d_);
  const std::vector<double> history(monitor_.history().begin(), monitor_.history().end());
  ckpt.add("monitor/history", {std::uint32_t(history.size())}, history);
  ckpt.rng_state = rng_.serialize();
  return ckpt;
}

TrainResult train(const TrainConfig& config, const data::Dataset& dataset,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume_from) {
  std::filesystem::create_directories(out_dir);
  TrainResult result;
  result.metrics_log = out_dir / "metrics.jsonl";
  result.final_checkpoint = out_dir / "final.ckpt";

  std::optional<Trainer> trainer;
  if (resume_from) {
    const auto ckpt = read_checkpoint(*resume_from);
    trainer.emplace(config, dataset, ckpt);
    std::vector<std::string> kept;
    if (std::ifstream in(result.metrics_log); in) {
      for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        if (nlohmann::json::parse(line).at("step").get<std::int64_t>() <= static_cast<std::int64_t>(ckpt.step)) {
          kept.push_back(line);
        }
      }
    }
    std::ofstream out(result.metrics_log, std::ios::trunc);
    for (const auto& line : kept) out << line << '\n';
  } else {
    trainer.emplace(config, dataset);
    std::ofstream(result.metrics_log, std::ios::trunc);
  }

  std::ofstream log(result.metrics_log, std::ios::app);
  if (!log) throw Error("cannot open " + result.metrics_log.string());
  while (trainer->steps_done() < trainer->total_steps()) {
    StepMetrics m;
    try {
      m = trainer->step();
    } catch (const TrainingError&) {
      write_checkpoint(trainer->checkpoint(), out_dir / "abort.ckpt");
      throw;
    }
    if (m.collapse_warning) {
      ++result.collapse_warnings;
      std::cerr << "warning: possible mode collapse at step " << m.step << " (diversity " << m.diversity
                << ")\n";
    }
    if (m.step % config.metrics_every == 0) log << metrics_json(m) << '\n' << std::flush;
    if (config.checkpoint_every > 0 && m.step % config.checkpoint_every == 0) {
      const auto path = out_dir / ("ckpt_" + std::to_string(m.step) + ".ckpt");
      write_checkpoint(trainer->checkpoint(), path);
      result.checkpoints.push_back(path);
    }
  }
  write_checkpoint(trainer->checkpoint(), result.final_checkpoint);
  return result;
}

nets::Generator load_generator(const Checkpoint& ckpt) {
  nets::Generator g(decode_generator_spec(ckpt.at("meta/generator")), 0);
  load_values(ckpt, "G", g.parameters());
  return g;
}

std::vector<double> class_targets(const Checkpoint& ckpt) { return ckpt.at("meta/class_targets").data; }

std::vector<Image> sample(const Checkpoint& ckpt, const data::Condition& condition, int count,
                          std::uint64_t seed) {
  if (count < 0) throw ParameterError("sample count must be >= 0");
  const auto g = load_generator(ckpt);
  const bool unconditional = ckpt.at("meta/objective").data.at(0) == double(obj::Objective::kGan);
  const data::Condition c = unconditional ? data::Condition(data::ContinuousCondition{0}) : condition;
  if (data::kind_of(c) != g.spec().condition.kind) throw DomainError("condition kind does not match checkpoint");

  constexpr int kChunk = 100;
  Rng rng(seed);
  std::vector<Image> images;
  images.reserve(count);
  ad::NoGradGuard no_grad;
  for (int done = 0; done < count; done += kChunk) {
    const int n = std::min(kChunk, count - done);
    const std::vector<data::Condition> y(n, c);
    const auto out = g.forward(nets::sample_noise(n, g.spec().z_dim, rng), nets::encode_conditions(y, g.spec().condition));
    const std::size_t p = static_cast<std::size_t>(g.spec().width) * g.spec().height;
    for (int i = 0; i < n; ++i) {
      Image& img = images.emplace_back(g.spec().width, g.spec().height);
      std::copy_n(out.data().begin() + i * p, p, img.pixels.begin());
    }
  }
  return images;
}

}  // namespace topogan::train
