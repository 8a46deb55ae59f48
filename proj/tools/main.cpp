#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "topogan/dataset.hpp"
#include "topogan/error.hpp"
#include "topogan/eval.hpp"
#include "topogan/fem.hpp"
#include "topogan/gradcheck.hpp"
#include "topogan/nets.hpp"
#include "topogan/trainer.hpp"

using namespace topogan;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// key=value lines become --key=value arguments placed ahead of the command
// line, so explicit flags override the file.
std::vector<std::string> config_args(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::vector<std::string> args;
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty()) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    args.push_back("--" + trim(line.substr(0, eq)) + "=" + trim(line.substr(eq + 1)));
  }
  return args;
}

std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> in(argv + 1, argv + argc), out;
  if (in.empty()) return in;
  std::vector<std::string> file_args;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] == "--config" && i + 1 < in.size()) {
      file_args = config_args(in[i + 1]);
    } else if (in[i].rfind("--config=", 0) == 0) {
      file_args = config_args(in[i].substr(9));
    }
  }
  out.push_back(in[0]);
  out.insert(out.end(), file_args.begin(), file_args.end());
  out.insert(out.end(), in.begin() + 1, in.end());
  return out;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      v.push_back(std::stod(trim(item)));
    } catch (const std::exception&) {
      throw UsageError("not a number: '" + item + "'");
    }
  }
  return v;
}

data::Condition parse_condition(const Checkpoint& ckpt, const std::string& text) {
  const auto g = train::load_generator(ckpt);
  try {
    if (g.spec().condition.kind == data::ConditionKind::kClass) {
      std::size_t used = 0;
      const int k = std::stoi(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return data::ClassLabel{k, g.spec().condition.cardinality};
    }
    return data::ContinuousCondition{std::stof(text)};
  } catch (const std::logic_error&) {
    throw UsageError("cannot read condition '" + text + "'");
  }
}

void add_common(CLI::App* cmd, std::uint64_t& seed, std::string& config) {
  cmd->add_option("--seed", seed, "random seed");
  cmd->add_option("--config", config, "key=value file supplying any flag");
}

struct GenArgs {
  int nelx = 60, nely = 30;
  fem::SimpParams simp;
  std::string out;
};

int run_gen(const GenArgs& a) {
  const fem::MeshSpec mesh{a.nelx, a.nely};
  const auto r = fem::run_simp(mesh, a.simp, fem::BoundaryConditions::cantilever(mesh));
  Image im(a.nelx, a.nely);
  im.pixels = r.density.values;
  if (!a.out.empty()) write_pgm(a.out, im);
  std::cout << "compliance " << r.compliance_history.back() << "\niterations " << r.iterations
            << "\nconverged " << (r.converged ? "true" : "false") << "\n";
  return 0;
}

struct SweepArgs {
  int nelx = 120, nely = 120;
  std::string volfrac = "0.5", penal = "3", rmin = "1.5";
  fem::SimpParams controls;
  std::string out;
};

int run_sweep(const SweepArgs& a) {
  data::SweepGrid grid{parse_list(a.volfrac), parse_list(a.penal), parse_list(a.rmin), {a.nelx, a.nely}};
  const auto ds = data::sweep_generate(grid, fem::BoundaryConditions::cantilever(grid.mesh), a.controls);
  data::write_dataset(ds, a.out);
  std::cout << "samples " << ds.samples.size() << "\n";
  return 0;
}

struct TrainArgs {
  train::TrainConfig config;
  std::string objective = "crcgan-a";
  std::string data;
  std::string out;
  std::string resume;
  std::int64_t iterations = -1;
  int steps_per_iteration = 0;
  bool saturating = false;
};

int run_train(TrainArgs a) {
  a.config.objective = obj::parse_objective(a.objective);
  if (a.iterations >= 0) a.config.iterations = a.iterations;
  if (a.steps_per_iteration > 0) a.config.steps_per_iteration = a.steps_per_iteration;
  a.config.non_saturating = !a.saturating;
  const auto ds = data::read_dataset(a.data);
  const auto r = train::train(a.config, ds, a.out,
                              a.resume.empty() ? std::nullopt : std::optional<fs::path>(a.resume));
  std::cout << "checkpoint " << r.final_checkpoint.string() << "\nmetrics " << r.metrics_log.string()
            << "\ncollapse_warnings " << r.collapse_warnings << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"topology-optimization datasets and conditional GAN training"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::uint64_t seed = 0;
  std::string config;

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "run SIMP on a cantilever and write the density as PGM");
  gen_cmd->add_option("--nelx", gen.nelx);
  gen_cmd->add_option("--nely", gen.nely);
  gen_cmd->add_option("--volfrac", gen.simp.volfrac);
  gen_cmd->add_option("--penal", gen.simp.penal);
  gen_cmd->add_option("--rmin", gen.simp.rmin);
  gen_cmd->add_option("--max-iters", gen.simp.max_iters);
  gen_cmd->add_option("--x-min", gen.simp.x_min);
  gen_cmd->add_option("--move", gen.simp.move);
  gen_cmd->add_option("--tol", gen.simp.change_tol);
  gen_cmd->add_option("--out", gen.out, "PGM path");
  add_common(gen_cmd, seed, config);

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "SIMP parameter sweep into a TOPD dataset");
  sweep_cmd->add_option("--nelx", sweep.nelx);
  sweep_cmd->add_option("--nely", sweep.nely);
  sweep_cmd->add_option("--volfrac", sweep.volfrac, "comma-separated list");
  sweep_cmd->add_option("--penal", sweep.penal, "comma-separated list");
  sweep_cmd->add_option("--rmin", sweep.rmin, "comma-separated list");
  sweep_cmd->add_option("--max-iters", sweep.controls.max_iters);
  sweep_cmd->add_option("--out", sweep.out)->required();
  add_common(sweep_cmd, seed, config);

  std::string aug_in, aug_out;
  int aug_count = -1;
  double aug_amp = 0.5;
  auto* aug_cmd = app.add_subcommand("augment", "append one noisy copy of every sample");
  aug_cmd->add_option("--data", aug_in)->required();
  aug_cmd->add_option("--out", aug_out)->required();
  aug_cmd->add_option("--noise-count", aug_count, "pixels per image (default 1%)");
  aug_cmd->add_option("--amplitude", aug_amp);
  add_common(aug_cmd, seed, config);

  int synth_k = 2, synth_n = 500, synth_size = 16;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "synthetic band dataset with per-class volume targets");
  synth_cmd->add_option("--classes", synth_k);
  synth_cmd->add_option("--per-class", synth_n);
  synth_cmd->add_option("--size", synth_size);
  synth_cmd->add_option("--out", synth_out)->required();
  add_common(synth_cmd, seed, config);

  TrainArgs tr;
  auto& tc = tr.config;
  auto* train_cmd = app.add_subcommand("train", "adversarial training");
  train_cmd->add_option("--objective", tr.objective, "gan | cgan | crcgan-a | crcgan-b");
  train_cmd->add_option("--data", tr.data)->required();
  train_cmd->add_option("--out", tr.out)->required();
  train_cmd->add_option("--resume", tr.resume, "checkpoint to continue from");
  train_cmd->add_option("--steps", tc.steps);
  train_cmd->add_option("--iterations", tr.iterations);
  train_cmd->add_option("--steps-per-iteration", tr.steps_per_iteration);
  train_cmd->add_option("--batch", tc.batch_size);
  train_cmd->add_option("--lr", tc.adam.lr);
  train_cmd->add_option("--beta1", tc.adam.beta1);
  train_cmd->add_option("--beta2", tc.adam.beta2);
  train_cmd->add_flag("--minibatch", tc.minibatch, "minibatch discrimination");
  train_cmd->add_flag("--saturating", tr.saturating, "literal log(1 - D(G)) generator loss");
  train_cmd->add_option("--margin", tc.mismatch_margin);
  train_cmd->add_option("--checkpoint-every", tc.checkpoint_every);
  train_cmd->add_option("--metrics-every", tc.metrics_every);
  train_cmd->add_option("--z-dim", tc.generator.z_dim);
  train_cmd->add_option("--g-base", tc.generator.base_channels);
  train_cmd->add_option("--g-mid", tc.generator.mid_channels);
  train_cmd->add_option("--d-conv1", tc.discriminator.conv1_channels);
  train_cmd->add_option("--d-conv2", tc.discriminator.conv2_channels);
  train_cmd->add_option("--d-features", tc.discriminator.feature_dim);
  train_cmd->add_option("--mb-kernels", tc.discriminator.minibatch.kernels);
  train_cmd->add_option("--mb-dim", tc.discriminator.minibatch.kernel_dim);
  add_common(train_cmd, seed, config);

  std::string ckpt_path, condition, sample_out;
  int count = 64, grid = 0;
  bool raw = false;
  auto* sample_cmd = app.add_subcommand("sample", "generate images from a checkpoint");
  sample_cmd->add_option("--checkpoint", ckpt_path)->required();
  sample_cmd->add_option("--condition", condition)->required();
  sample_cmd->add_option("--count", count);
  sample_cmd->add_option("--grid", grid, "k for a k x k montage (default: smallest that fits)");
  sample_cmd->add_flag("--raw", raw, "skip threshold and blur");
  sample_cmd->add_option("--out", sample_out, "PGM montage path")->required();
  add_common(sample_cmd, seed, config);

  double tol = 0.05, reanalyze_penal = 0;
  std::string report_out;
  auto* eval_cmd = app.add_subcommand("eval", "conditional volume-fraction fidelity report");
  eval_cmd->add_option("--checkpoint", ckpt_path)->required();
  eval_cmd->add_option("--condition", condition)->required();
  eval_cmd->add_option("--count", count);
  eval_cmd->add_option("--tol", tol);
  eval_cmd->add_option("--reanalyze", reanalyze_penal, "also report cantilever compliance at this penalty");
  eval_cmd->add_option("--out", report_out, "also write the JSON report here");
  add_common(eval_cmd, seed, config);

  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of the networks");
  add_common(gc_cmd, seed, config);

  std::string idx_images, idx_labels, idx_out;
  bool downscale = false;
  auto* idx_cmd = app.add_subcommand("idx-import", "MNIST IDX files to TOPD");
  idx_cmd->add_option("--images", idx_images)->required();
  idx_cmd->add_option("--labels", idx_labels)->required();
  idx_cmd->add_option("--out", idx_out)->required();
  idx_cmd->add_flag("--downscale", downscale, "2x2 average pooling");
  add_common(idx_cmd, seed, config);

  try {
    auto args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*sweep_cmd) return run_sweep(sweep);
    if (*aug_cmd) {
      const auto ds = data::augment_dataset(data::read_dataset(aug_in), seed,
                                            aug_count >= 0 ? std::optional<int>(aug_count) : std::nullopt, aug_amp);
      data::write_dataset(ds, aug_out);
      std::cout << "samples " << ds.samples.size() << "\n";
      return 0;
    }
    if (*synth_cmd) {
      const auto ds = data::synth_classes(synth_k, synth_n, synth_size, seed);
      data::write_dataset(ds, synth_out);
      std::cout << "samples " << ds.samples.size() << "\n";
      return 0;
    }
    if (*train_cmd) {
      tr.config.seed = seed;
      return run_train(tr);
    }
    if (*sample_cmd) {
      const auto ckpt = read_checkpoint(ckpt_path);
      auto images = train::sample(ckpt, parse_condition(ckpt, condition), count, seed);
      if (!raw)
        for (auto& im : images) im = postprocess(im);
      int k = grid;
      while (k * k < count) ++k;
      write_pgm(sample_out, montage(images, std::max(k, 1)));
      std::cout << "images " << images.size() << "\n";
      return 0;
    }
    if (*eval_cmd) {
      const auto ckpt = read_checkpoint(ckpt_path);
      const auto report = eval::conditional_eval(
          ckpt, ckpt_path, parse_condition(ckpt, condition), count, tol, seed,
          reanalyze_penal > 0 ? std::optional<double>(reanalyze_penal) : std::nullopt);
      const auto text = eval::report_json(report);
      std::cout << text << "\n";
      if (!report_out.empty()) std::ofstream(report_out) << text << "\n";
      return 0;
    }
    if (*gc_cmd) {
      nlohmann::json out;
      double worst = 0;
      Rng rng(seed);
      nets::GeneratorSpec gs;
      gs.z_dim = 3;
      gs.width = gs.height = 8;
      gs.base_channels = gs.mid_channels = 2;
      nets::DiscriminatorSpec ds;
      ds.width = ds.height = 8;
      ds.conv1_channels = 2;
      ds.conv2_channels = 3;
      ds.feature_dim = 4;
      ds.minibatch = {true, 3, 2};
      nets::Generator g(gs, seed);
      nets::Discriminator d(ds, seed + 1);
      for (const auto& params : {g.parameters(), d.parameters()})
        for (auto [name, t] : params)
          for (double& v : t.mutable_data()) v = rng.uniform(-0.5, 0.5);
      std::vector<data::Condition> labels = {data::ClassLabel{0, 2}, data::ClassLabel{1, 2}, data::ClassLabel{1, 2}};
      const auto y = nets::encode_conditions(labels, gs.condition);
      const auto z = nets::sample_noise(3, gs.z_dim, rng);
      auto params = g.parameters();
      for (const auto& p : d.parameters()) params.emplace_back("D." + p.first, p.second);
      const auto r = ad::grad_check(
          [&] { return ad::mean(ad::log_clamped(d.forward(g.forward(z, y), y))); }, params);
      out["max_rel_error"] = r.max_rel_error;
      out["worst"] = r.worst_name + "[" + std::to_string(r.worst_index) + "]";
      out["checked"] = r.checked;
      worst = std::max(worst, r.max_rel_error);
      std::cout << out.dump(2) << "\n";
      return worst < 1e-6 ? 0 : 1;
    }
    if (*idx_cmd) {
      const auto ds = data::load_mnist_idx(idx_images, idx_labels, downscale);
      data::write_dataset(ds, idx_out);
      std::cout << "samples " << ds.samples.size() << "\n";
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
