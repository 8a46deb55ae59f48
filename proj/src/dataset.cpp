#include "topogan/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <string>

#include "byte_io.hpp"
#include "topogan/error.hpp"
#include "topogan/random.hpp"

namespace topogan::data {

namespace {

constexpr char kMagic[] = "TOPD";
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMnistImagesMagic = 0x00000803;
constexpr std::uint32_t kMnistLabelsMagic = 0x00000801;

void check_range(const std::vector<double>& values, double lo, double hi, const char* name) {
  if (values.empty()) throw ParameterError(std::string("sweep grid has no ") + name + " values");
  for (double v : values) {
    if (!(v >= lo && v <= hi)) {
      throw ParameterError(std::string(name) + " value " + std::to_string(v) + " outside [" +
                           std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
  }
}

std::uint32_t read_be32(io::ByteReader& in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | in.get<std::uint8_t>();
  return v;
}

}  // namespace

ConditionKind kind_of(const Condition& c) {
  return std::holds_alternative<ClassLabel>(c) ? ConditionKind::kClass : ConditionKind::kContinuous;
}

Image ConditionedSample::image() const {
  Image img(width, height);
  std::copy(pixels.begin(), pixels.end(), img.pixels.begin());
  return img;
}

void Dataset::validate() const {
  if (width < 1 || height < 1) throw ConsistencyError("dataset has empty image dimensions");
  if (kind == ConditionKind::kContinuous && cardinality != 0) {
    throw ConsistencyError("continuous dataset must have cardinality 0");
  }
  if (kind == ConditionKind::kClass && cardinality < 1) {
    throw ConsistencyError("class dataset needs cardinality >= 1");
  }
  const std::size_t npix = static_cast<std::size_t>(width) * height;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const std::string where = "sample " + std::to_string(i);
    if (s.width != width || s.height != height || s.pixels.size() != npix) {
      throw ConsistencyError(where + " has mismatched dimensions");
    }
    if (kind_of(s.condition) != kind) throw ConsistencyError(where + " has mismatched condition kind");
    if (const auto* label = std::get_if<ClassLabel>(&s.condition)) {
      if (label->cardinality != cardinality || label->index < 0 || label->index >= cardinality) {
        throw ConsistencyError(where + " has an invalid class label");
      }
    } else {
      const float v = std::get<ContinuousCondition>(s.condition).value;
      if (!(v >= 0.0f && v <= 1.0f)) throw ConsistencyError(where + " condition outside [0, 1]");
    }
    for (float p : s.pixels) {
      if (!(p >= 0.0f && p <= 1.0f)) throw ConsistencyError(where + " has pixels outside [0, 1]");
    }
  }
}

void SweepGrid::validate() const {
  check_range(volfrac, kVolfracMin, kVolfracMax, "volfrac");
  check_range(penal, kPenalMin, kPenalMax, "penal");
  check_range(rmin, kRminMin, kRminMax, "rmin");
  mesh.validate();
}

ConditionedSample from_image(const Image& image, Condition condition, SampleMeta meta) {
  ConditionedSample s;
  s.width = image.width;
  s.height = image.height;
  s.pixels.resize(image.pixels.size());
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    s.pixels[i] = static_cast<float>(std::clamp(image.pixels[i], 0.0, 1.0));
  }
  s.condition = condition;
  s.meta = meta;
  return s;
}

Dataset sweep_generate(const SweepGrid& grid, const fem::BoundaryConditions& bc,
                       const fem::SimpParams& controls) {
  grid.validate();
  Dataset ds;
  ds.width = grid.mesh.nelx;
  ds.height = grid.mesh.nely;
  ds.kind = ConditionKind::kContinuous;
  ds.samples.reserve(grid.size());
  for (double f : grid.volfrac) {
    for (double p : grid.penal) {
      for (double r : grid.rmin) {
        fem::SimpParams params = controls;
        params.volfrac = f;
        params.penal = p;
        params.rmin = r;
        const auto result = fem::run_simp(grid.mesh, params, bc);
        if (!result.converged) {
          std::cerr << "warning: SIMP run volfrac=" << f << " penal=" << p << " rmin=" << r
                    << " stopped at max_iters without converging\n";
        }
        Image img(grid.mesh.nelx, grid.mesh.nely);
        img.pixels = result.density.values;
        const SampleMeta meta{static_cast<float>(f), static_cast<float>(p), static_cast<float>(r),
                              static_cast<float>(result.compliance_history.back()),
                              result.converged};
        ds.samples.push_back(from_image(img, ContinuousCondition{static_cast<float>(f)}, meta));
      }
    }
  }
  return ds;
}

ConditionedSample augment(const ConditionedSample& sample, int noise_count,
                          double noise_amplitude, std::uint64_t seed) {
  if (noise_count < 0) throw ParameterError("noise_count must be >= 0");
  if (!(noise_amplitude >= 0.0 && noise_amplitude <= 1.0)) {
    throw ParameterError("noise_amplitude must lie in [0, 1]");
  }
  ConditionedSample out = sample;
  const std::size_t n = out.pixels.size();
  const std::size_t picks = std::min<std::size_t>(static_cast<std::size_t>(noise_count), n);
  if (picks == 0) return out;

  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < picks; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(order[i], order[j]);
    const double delta = rng.uniform(-noise_amplitude, noise_amplitude);
    float& p = out.pixels[order[i]];
    p = static_cast<float>(std::clamp(static_cast<double>(p) + delta, 0.0, 1.0));
  }
  return out;
}

Dataset augment_dataset(const Dataset& ds, std::uint64_t seed, std::optional<int> noise_count,
                        double noise_amplitude) {
  Dataset out = ds;
  const int count =
      noise_count.value_or(std::max(1, static_cast<int>(std::lround(0.01 * ds.width * ds.height))));
  out.samples.reserve(ds.samples.size() * 2);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    out.samples.push_back(augment(ds.samples[i], count, noise_amplitude, derive_seed(seed, i)));
  }
  return out;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  io::ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.height));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.samples.size()));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(ds.kind));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.cardinality));
  for (const auto& s : ds.samples) {
    float cond = 0.0f;
    if (const auto* label = std::get_if<ClassLabel>(&s.condition)) {
      cond = static_cast<float>(label->index);
    } else {
      cond = std::get<ContinuousCondition>(s.condition).value;
    }
    w.put<float>(cond);
    w.put<float>(s.meta.volfrac);
    w.put<float>(s.meta.penal);
    w.put<float>(s.meta.rmin);
    w.put<float>(s.meta.compliance);
    w.put<std::uint8_t>(s.meta.converged ? 1 : 0);
    for (float p : s.pixels) w.put<float>(p);
  }
  w.save(path);
}

Dataset read_dataset(const std::filesystem::path& path) {
  auto in = io::ByteReader::load(path);
  if (in.remaining() < 4 || in.get_bytes(4) != std::string_view(kMagic, 4)) {
    throw FormatError("bad magic", 0);
  }
  const auto version_offset = in.offset();
  if (in.get<std::uint32_t>() != kVersion) throw FormatError("unsupported version", version_offset);
  Dataset ds;
  ds.width = static_cast<int>(in.get<std::uint32_t>());
  ds.height = static_cast<int>(in.get<std::uint32_t>());
  const std::uint32_t count = in.get<std::uint32_t>();
  const auto kind_offset = in.offset();
  const auto kind = in.get<std::uint8_t>();
  if (kind > 1) throw FormatError("unknown condition kind", kind_offset);
  ds.kind = static_cast<ConditionKind>(kind);
  ds.cardinality = static_cast<int>(in.get<std::uint32_t>());
  if (ds.width < 1 || ds.height < 1) throw FormatError("empty image dimensions", 8);

  const std::size_t npix = static_cast<std::size_t>(ds.width) * ds.height;
  const std::size_t record = 21 + 4 * npix;
  if (in.remaining() / record < count) throw FormatError("truncated file", in.offset() + in.remaining());
  ds.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto record_offset = in.offset();
    ConditionedSample s;
    s.width = ds.width;
    s.height = ds.height;
    const float cond = in.get<float>();
    if (ds.kind == ConditionKind::kClass) {
      if (!(cond >= 0.0f && cond < static_cast<float>(ds.cardinality)) || cond != std::floor(cond)) {
        throw FormatError("invalid class index", record_offset);
      }
      s.condition = ClassLabel{static_cast<int>(cond), ds.cardinality};
    } else {
      s.condition = ContinuousCondition{cond};
    }
    s.meta.volfrac = in.get<float>();
    s.meta.penal = in.get<float>();
    s.meta.rmin = in.get<float>();
    s.meta.compliance = in.get<float>();
    s.meta.converged = in.get<std::uint8_t>() != 0;
    s.pixels.resize(npix);
    for (auto& p : s.pixels) p = in.get<float>();
    ds.samples.push_back(std::move(s));
  }
  if (!in.at_end()) throw FormatError("trailing bytes after last record", in.offset());
  try {
    ds.validate();
  } catch (const ConsistencyError& e) {
    throw FormatError(std::string("inconsistent contents: ") + e.what(), 0);
  }
  return ds;
}

Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path, bool downscale) {
  auto images = io::ByteReader::load(images_path);
  auto labels = io::ByteReader::load(labels_path);
  if (read_be32(images) != kMnistImagesMagic) throw FormatError("bad magic in IDX images", 0);
  if (read_be32(labels) != kMnistLabelsMagic) throw FormatError("bad magic in IDX labels", 0);
  const std::uint32_t count = read_be32(images);
  const std::uint32_t rows = read_be32(images);
  const std::uint32_t cols = read_be32(images);
  const std::uint32_t label_count = read_be32(labels);
  if (count != label_count) {
    throw ConsistencyError("IDX files disagree on sample count: " + std::to_string(count) +
                           " images vs " + std::to_string(label_count) + " labels");
  }
  if (rows == 0 || cols == 0) throw FormatError("empty IDX image dimensions", 8);
  if (downscale && (rows % 2 != 0 || cols % 2 != 0)) {
    throw DimensionError("downscale needs even image dimensions");
  }
  const std::size_t npix = static_cast<std::size_t>(rows) * cols;
  if (images.remaining() < npix * count) {
    throw FormatError("truncated IDX images", images.offset() + images.remaining());
  }
  if (labels.remaining() < count) throw FormatError("truncated IDX labels", labels.offset() + labels.remaining());

  Dataset ds;
  ds.kind = ConditionKind::kClass;
  ds.cardinality = 10;
  ds.width = static_cast<int>(downscale ? cols / 2 : cols);
  ds.height = static_cast<int>(downscale ? rows / 2 : rows);
  ds.samples.reserve(count);
  std::vector<double> raw(npix);
  for (std::uint32_t i = 0; i < count; ++i) {
    for (auto& p : raw) p = images.get<std::uint8_t>() / 255.0;
    const auto label_offset = labels.offset();
    const int label = labels.get<std::uint8_t>();
    if (label > 9) throw FormatError("label outside 0..9", label_offset);
    Image img(ds.width, ds.height);
    if (downscale) {
      for (int r = 0; r < ds.height; ++r) {
        for (int c = 0; c < ds.width; ++c) {
          const std::size_t base = static_cast<std::size_t>(2 * r) * cols + 2 * c;
          img.at(r, c) = 0.25 * (raw[base] + raw[base + 1] + raw[base + cols] + raw[base + cols + 1]);
        }
      }
    } else {
      img.pixels = raw;
    }
    ds.samples.push_back(from_image(img, ClassLabel{label, 10}));
  }
  return ds;
}

double synth_class_target(int k, int class_count) {
  return static_cast<double>(k + 1) / static_cast<double>(class_count + 1);
}

Dataset synth_classes(int class_count, int per_class, int size, std::uint64_t seed) {
  if (class_count < 2 || class_count > 10) throw ParameterError("class_count must lie in 2..10");
  if (per_class < 0) throw ParameterError("per_class must be >= 0");
  if (size < 1) throw ParameterError("image size must be >= 1");
  Rng rng(seed);
  Dataset ds;
  ds.width = size;
  ds.height = size;
  ds.kind = ConditionKind::kClass;
  ds.cardinality = class_count;
  ds.samples.reserve(static_cast<std::size_t>(class_count) * per_class);
  for (int k = 0; k < class_count; ++k) {
    const double thickness = synth_class_target(k, class_count) * size;
    for (int i = 0; i < per_class; ++i) {
      const bool vertical = rng.uniform() < 0.5;
      const double start = rng.uniform(0.0, size - thickness);
      Image img(size, size);
      for (int a = 0; a < size; ++a) {
        // coverage of cell [a, a+1) by the band [start, start+thickness)
        const double cover =
            std::clamp(std::min(a + 1.0, start + thickness) - std::max<double>(a, start), 0.0, 1.0);
        for (int b = 0; b < size; ++b) {
          if (vertical) {
            img.at(b, a) = cover;
          } else {
            img.at(a, b) = cover;
          }
        }
      }
      ds.samples.push_back(from_image(img, ClassLabel{k, class_count}));
    }
  }
  return ds;
}

void shuffle(Dataset& ds, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = ds.samples.size(); i > 1; --i) {
    std::swap(ds.samples[i - 1], ds.samples[rng.below(i)]);
  }
}

}  // namespace topogan::data
