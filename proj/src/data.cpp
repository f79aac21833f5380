#include "mlt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "mlt/errors.hpp"
#include "mlt/json_fields.hpp"
#include "mlt/tensor_io.hpp"

namespace mlt {

namespace {

constexpr int kManifestVersion = 1;
constexpr std::uint64_t kSampleStream = 0x9E3779B97F4A7C15ull;

std::string sequence_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "seq%04zu", index);
  return buf;
}

std::string label_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "AU%02zu", index);
  return buf;
}

std::size_t uniform_index(std::size_t n, Rng& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// Frame generator bound to one task; successive calls continue the stream.
class FrameSource {
 public:
  FrameSource(const SyntheticSpec& spec, SyntheticTask task)
      : spec_(spec), rates_(spec.resolved_rates()), task_(std::move(task)), rng_(spec.seed ^ kSampleStream) {}

  Dataset emit(std::size_t frames) {
    const std::size_t n_x = spec_.num_patches;
    const std::size_t pd = spec_.patch_dim;
    const std::size_t labels = spec_.num_labels;
    std::vector<double> x(frames * n_x * pd);
    std::vector<double> y(frames * labels, 0.0);
    Dataset ds;
    for (std::size_t t = 0; t < labels; ++t) ds.label_names.push_back(label_name(t));

    std::normal_distribution<double> noise(0.0, 1.0);
    std::bernoulli_distribution flip(spec_.flip_probability);
    std::size_t start = 0;
    while (start < frames) {
      const std::size_t length = std::min(spec_.sequence_length, frames - start);
      ds.sequences.push_back({sequence_id(next_sequence_++), start, length});
      for (std::size_t t = 0; t < labels; ++t) {
        auto active = segment_schedule(length, rates_[t], spec_.min_segment, spec_.max_segment, rng_);
        for (std::size_t f = 0; f < length; ++f) {
          bool on = active[f] != 0;
          if (spec_.flip_probability > 0.0 && flip(rng_)) on = !on;
          y[(start + f) * labels + t] = on ? 1.0 : 0.0;
        }
      }
      for (std::size_t f = start; f < start + length; ++f) {
        double* frame = x.data() + f * n_x * pd;
        for (std::size_t i = 0; i < n_x * pd; ++i) frame[i] = spec_.noise * noise(rng_);
        for (std::size_t t = 0; t < labels; ++t) {
          if (y[f * labels + t] == 0.0) continue;
          for (std::size_t patch : task_.triggers[t]) {
            for (std::size_t j = 0; j < pd; ++j) frame[patch * pd + j] += task_.patterns[t][j];
          }
        }
      }
      start += length;
    }
    ds.patches = Tensor({frames, n_x, pd}, std::move(x));
    ds.labels = Tensor({frames, labels}, std::move(y));
    ds.mask = Tensor::ones({frames, labels});
    return ds;
  }

 private:
  const SyntheticSpec& spec_;
  std::vector<double> rates_;
  SyntheticTask task_;
  Rng rng_;
  std::size_t next_sequence_ = 0;
};

Tensor gather_leading(const Tensor& t, std::span<const std::size_t> indices) {
  const std::size_t row = t.numel() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = indices.size();
  std::vector<double> out(indices.size() * row);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= t.dim(0)) throw ShapeError("sample index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(t.data().begin() + indices[i] * row, row, out.begin() + i * row);
  }
  return Tensor(std::move(shape), std::move(out));
}

Tensor blend(const Tensor& a, const Tensor& b, double lambda) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lambda * a.data()[i] + (1.0 - lambda) * b.data()[i];
  return Tensor(a.shape(), std::move(out));
}

nlohmann::json tensor_entry(const std::string& file, const Tensor& t) {
  return {{"path", file}, {"offset", 0}, {"shape", t.shape()}};
}

Tensor load_entry(const std::filesystem::path& dir, const nlohmann::json& entry) {
  std::ifstream in(dir / entry.at("path").get<std::string>(), std::ios::binary);
  if (!in) throw IoError("cannot open " + (dir / entry.at("path").get<std::string>()).string());
  in.seekg(static_cast<std::streamoff>(entry.value("offset", std::uint64_t{0})));
  Tensor t = read_tensor(in);
  if (t.shape() != entry.at("shape").get<Shape>()) {
    throw CorruptFileError("tensor " + entry.at("path").get<std::string>() + " has shape " + shape_str(t.shape()) +
                           " but the manifest declares " + entry.at("shape").dump());
  }
  return t;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (num_patches == 0 || patch_dim == 0 || num_labels == 0 || sequence_length == 0) {
    throw ConfigError("synthetic: extents must be positive");
  }
  if (grid_side * grid_side != num_patches) throw ConfigError("synthetic: n_x must equal grid_side^2");
  if (num_samples == 0) throw ConfigError("synthetic: num_samples must be positive");
  if (min_segment < 1 || max_segment < min_segment) {
    throw ConfigError("synthetic: need 1 <= min_segment <= max_segment");
  }
  if (!positive_rates.empty() && positive_rates.size() != num_labels) {
    throw ConfigError("synthetic: positive_rates needs one entry per label");
  }
  for (double r : positive_rates) {
    if (!(r > 0.0 && r <= 0.5)) throw ConfigError("synthetic: positive rates must lie in (0, 0.5]");
  }
  if (triggers.empty()) {
    if (patches_per_label == 0 || patches_per_label * num_labels > num_patches) {
      throw ConfigError("synthetic: cannot assign disjoint trigger sets of the requested size");
    }
  } else {
    if (triggers.size() != num_labels) throw ConfigError("synthetic: triggers needs one set per label");
    for (const auto& set : triggers) {
      if (set.empty()) throw ConfigError("synthetic: trigger sets must be nonempty");
      for (std::size_t p : set) {
        if (p >= num_patches) throw ConfigError("synthetic: trigger patch outside the grid");
      }
    }
  }
  if (!(pattern_norm > 0.0) || !(noise >= 0.0)) throw ConfigError("synthetic: pattern_norm > 0, noise >= 0");
  if (!(flip_probability >= 0.0 && flip_probability < 1.0)) {
    throw ConfigError("synthetic: flip_probability must lie in [0, 1)");
  }
}

std::vector<double> SyntheticSpec::resolved_rates() const {
  if (!positive_rates.empty()) return positive_rates;
  std::vector<double> rates(num_labels);
  for (std::size_t t = 0; t < num_labels; ++t) {
    rates[t] = num_labels == 1 ? 0.1 : 0.05 + 0.15 * static_cast<double>(t) / static_cast<double>(num_labels - 1);
  }
  return rates;
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"n_x", num_patches},
          {"grid_side", grid_side},
          {"patch_dim", patch_dim},
          {"L", num_labels},
          {"num_samples", num_samples},
          {"holdout_samples", holdout_samples},
          {"sequence_length", sequence_length},
          {"min_segment", min_segment},
          {"max_segment", max_segment},
          {"positive_rates", positive_rates},
          {"patches_per_label", patches_per_label},
          {"triggers", triggers},
          {"pattern_norm", pattern_norm},
          {"noise", noise},
          {"flip_probability", flip_probability},
          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  FieldReader r(j, "synthetic");
  r.read("n_x", s.num_patches);
  r.read("grid_side", s.grid_side);
  r.read("patch_dim", s.patch_dim);
  r.read("L", s.num_labels);
  r.read("num_samples", s.num_samples);
  r.read("holdout_samples", s.holdout_samples);
  r.read("sequence_length", s.sequence_length);
  r.read("min_segment", s.min_segment);
  r.read("max_segment", s.max_segment);
  r.read("positive_rates", s.positive_rates);
  r.read("patches_per_label", s.patches_per_label);
  r.read("triggers", s.triggers);
  r.read("pattern_norm", s.pattern_norm);
  r.read("noise", s.noise);
  r.read("flip_probability", s.flip_probability);
  r.read("seed", s.seed);
  r.finish();
  s.validate();
  return s;
}

SyntheticTask make_task(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SyntheticTask task;
  if (spec.triggers.empty()) {
    std::vector<std::size_t> order(spec.num_patches);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t t = 0; t < spec.num_labels; ++t) {
      std::vector<std::size_t> set(order.begin() + static_cast<std::ptrdiff_t>(t * spec.patches_per_label),
                                   order.begin() + static_cast<std::ptrdiff_t>((t + 1) * spec.patches_per_label));
      std::sort(set.begin(), set.end());
      task.triggers.push_back(std::move(set));
    }
  } else {
    task.triggers = spec.triggers;
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t t = 0; t < spec.num_labels; ++t) {
    std::vector<double> pattern(spec.patch_dim);
    double norm = 0.0;
    for (double& v : pattern) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : pattern) v *= spec.pattern_norm / norm;
    task.patterns.push_back(std::move(pattern));
  }
  return task;
}

std::vector<std::uint8_t> segment_schedule(std::size_t length, double rate, std::size_t min_segment,
                                           std::size_t max_segment, Rng& rng) {
  std::vector<std::uint8_t> active(length, 0);
  std::size_t target = static_cast<std::size_t>(std::llround(rate * static_cast<double>(length)));
  if (target < min_segment) return active;
  const double mean_segment = 0.5 * static_cast<double>(min_segment + max_segment);
  const std::size_t fewest = (target + max_segment - 1) / max_segment;
  const std::size_t most = target / min_segment;
  std::size_t count = static_cast<std::size_t>(std::llround(static_cast<double>(target) / mean_segment));
  count = std::clamp(count, fewest, std::max(fewest, most));
  target = std::clamp(target, count * min_segment, count * max_segment);
  // Separate segments by at least one inactive frame.
  while (count > 1 && target + count - 1 > length) {
    --count;
    target = std::min(target, count * max_segment);
  }
  if (count == 0 || target + count - 1 > length) return active;

  std::vector<std::size_t> runs(count, min_segment);
  for (std::size_t extra = target - count * min_segment; extra > 0; --extra) {
    std::size_t i = uniform_index(count, rng);
    while (runs[i] == max_segment) i = (i + 1) % count;
    ++runs[i];
  }
  std::vector<std::size_t> gaps(count + 1, 0);
  for (std::size_t i = 1; i < count; ++i) gaps[i] = 1;
  for (std::size_t spare = length - target - (count - 1); spare > 0; --spare) ++gaps[uniform_index(count + 1, rng)];

  std::size_t f = 0;
  for (std::size_t i = 0; i < count; ++i) {
    f += gaps[i];
    std::fill_n(active.begin() + static_cast<std::ptrdiff_t>(f), runs[i], 1);
    f += runs[i];
  }
  return active;
}

Dataset generate_dataset(const SyntheticSpec& spec) {
  FrameSource source(spec, make_task(spec));
  return source.emit(spec.num_samples);
}

DatasetSplits generate_splits(const SyntheticSpec& spec) {
  FrameSource source(spec, make_task(spec));
  DatasetSplits splits;
  splits.train = source.emit(spec.num_samples);
  if (spec.holdout_samples > 0) splits.heldout = source.emit(spec.holdout_samples);
  return splits;
}

std::vector<double> Dataset::positive_rates() const {
  const std::size_t n_labels = num_labels();
  std::vector<double> positives(n_labels, 0.0);
  std::vector<double> annotated(n_labels, 0.0);
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t t = 0; t < n_labels; ++t) {
      const double m = mask.data()[i * n_labels + t];
      annotated[t] += m;
      positives[t] += m * labels.data()[i * n_labels + t];
    }
  }
  std::vector<double> rates(n_labels);
  for (std::size_t t = 0; t < n_labels; ++t) rates[t] = (positives[t] + 1.0) / (annotated[t] + 2.0);
  return rates;
}

void Dataset::validate() const {
  if (!patches.defined() || !labels.defined() || !mask.defined()) throw ShapeError("dataset is missing tensors");
  if (patches.rank() != 3) throw ShapeError("dataset patches must be [N, n_x, patch_dim], got " + shape_str(patches.shape()));
  const Shape label_shape{patches.dim(0), label_names.size()};
  if (labels.shape() != label_shape || mask.shape() != label_shape) {
    throw ShapeError("dataset labels " + shape_str(labels.shape()) + " and mask " + shape_str(mask.shape()) +
                     " must be " + shape_str(label_shape));
  }
  std::size_t expected_start = 0;
  std::set<std::string> ids;
  for (const auto& s : sequences) {
    if (s.start != expected_start || s.length == 0) throw ShapeError("dataset sequences must tile the samples");
    if (!ids.insert(s.id).second) throw ShapeError("duplicate sequence id " + s.id);
    expected_start += s.length;
  }
  if (expected_start != size()) throw ShapeError("dataset sequences cover " + std::to_string(expected_start) +
                                                 " of " + std::to_string(size()) + " samples");
}

Dataset merge_label_universes(std::span<const Dataset> sources) {
  if (sources.empty()) throw std::invalid_argument("merge needs at least one dataset");
  std::vector<std::string> names;
  std::map<std::string, std::size_t> column;
  std::set<std::string> seen_ids;
  std::size_t total = 0;
  const Shape patch_shape(sources.front().patches.shape().begin() + 1, sources.front().patches.shape().end());
  for (const auto& src : sources) {
    src.validate();
    const Shape shape(src.patches.shape().begin() + 1, src.patches.shape().end());
    if (shape != patch_shape) {
      throw ShapeError("cannot merge patch shapes " + shape_str(patch_shape) + " and " + shape_str(shape));
    }
    for (const auto& s : src.sequences) {
      if (!seen_ids.insert(s.id).second) throw std::invalid_argument("duplicate sample ids: sequence " + s.id);
    }
    for (const auto& n : src.label_names) {
      if (column.emplace(n, names.size()).second) names.push_back(n);
    }
    total += src.size();
  }

  const std::size_t labels = names.size();
  const std::size_t row = shape_numel(patch_shape);
  std::vector<double> x;
  x.reserve(total * row);
  std::vector<double> y(total * labels, 0.0);
  std::vector<double> m(total * labels, 0.0);
  Dataset out;
  std::size_t offset = 0;
  for (const auto& src : sources) {
    x.insert(x.end(), src.patches.data().begin(), src.patches.data().end());
    const std::size_t src_labels = src.num_labels();
    for (std::size_t i = 0; i < src.size(); ++i) {
      for (std::size_t t = 0; t < src_labels; ++t) {
        const std::size_t c = column.at(src.label_names[t]);
        const double annotated = src.mask.data()[i * src_labels + t];
        m[(offset + i) * labels + c] = annotated;
        y[(offset + i) * labels + c] = annotated != 0.0 ? src.labels.data()[i * src_labels + t] : 0.0;
      }
    }
    for (const auto& s : src.sequences) out.sequences.push_back({s.id, s.start + offset, s.length});
    offset += src.size();
  }
  Shape shape{total};
  shape.insert(shape.end(), patch_shape.begin(), patch_shape.end());
  out.patches = Tensor(std::move(shape), std::move(x));
  out.labels = Tensor({total, labels}, std::move(y));
  out.mask = Tensor({total, labels}, std::move(m));
  out.label_names = std::move(names);
  return out;
}

Dataset select_labels(const Dataset& ds, std::span<const std::string> names) {
  std::vector<std::size_t> cols;
  for (const auto& n : names) {
    auto it = std::find(ds.label_names.begin(), ds.label_names.end(), n);
    if (it == ds.label_names.end()) throw std::invalid_argument("unknown label " + n);
    cols.push_back(static_cast<std::size_t>(it - ds.label_names.begin()));
  }
  const std::size_t labels = ds.num_labels();
  std::vector<double> y(ds.size() * cols.size());
  std::vector<double> m(ds.size() * cols.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      y[i * cols.size() + c] = ds.labels.data()[i * labels + cols[c]];
      m[i * cols.size() + c] = ds.mask.data()[i * labels + cols[c]];
    }
  }
  Dataset out;
  out.patches = ds.patches.clone();
  out.labels = Tensor({ds.size(), cols.size()}, std::move(y));
  out.mask = Tensor({ds.size(), cols.size()}, std::move(m));
  out.label_names.assign(names.begin(), names.end());
  out.sequences = ds.sequences;
  return out;
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  return {gather_leading(ds.patches, indices), gather_leading(ds.labels, indices), gather_leading(ds.mask, indices)};
}

Batch mixup(const Batch& a, const Batch& b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("mixup lambda must lie in [0, 1]");
  if (a.patches.shape() != b.patches.shape() || a.labels.shape() != b.labels.shape() ||
      a.mask.shape() != b.mask.shape()) {
    throw ShapeError("mixup of batches with shapes " + shape_str(a.patches.shape()) + " and " +
                     shape_str(b.patches.shape()));
  }
  std::vector<double> mask(a.mask.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = (a.mask.data()[i] != 0.0 && b.mask.data()[i] != 0.0) ? 1.0 : 0.0;
  }
  return {blend(a.patches, b.patches, lambda), blend(a.labels, b.labels, lambda),
          Tensor(a.mask.shape(), std::move(mask))};
}

double sample_mixup_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw std::invalid_argument("mixup alpha must be positive");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng);
  const double y = gamma(rng);
  return x + y > 0.0 ? x / (x + y) : 0.5;
}

nlohmann::json dataset_manifest(const Dataset& ds) {
  nlohmann::json sequences = nlohmann::json::array();
  for (const auto& s : ds.sequences) sequences.push_back({{"id", s.id}, {"start", s.start}, {"length", s.length}});
  return {{"version", kManifestVersion},
          {"num_samples", ds.size()},
          {"sequences", sequences},
          {"labels", ds.label_names},
          {"positive_rates", ds.positive_rates()},
          {"tensors",
           {{"patches", tensor_entry("patches.mlt", ds.patches)},
            {"labels", tensor_entry("labels.mlt", ds.labels)},
            {"mask", tensor_entry("mask.mlt", ds.mask)}}}};
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir);
  save_tensor(dir / "patches.mlt", ds.patches);
  save_tensor(dir / "labels.mlt", ds.labels);
  save_tensor(dir / "mask.mlt", ds.mask);
  const std::string text = dataset_manifest(ds).dump(2) + "\n";
  atomic_write(dir / "manifest.json", [&](std::ostream& out) { out << text; });
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
  Dataset ds;
  try {
    const nlohmann::json manifest = nlohmann::json::parse(in);
    if (manifest.at("version") != kManifestVersion) throw CorruptFileError("unsupported dataset manifest version");
    const auto& tensors = manifest.at("tensors");
    ds.patches = load_entry(dir, tensors.at("patches"));
    ds.labels = load_entry(dir, tensors.at("labels"));
    ds.mask = load_entry(dir, tensors.at("mask"));
    ds.label_names = manifest.at("labels").get<std::vector<std::string>>();
    for (const auto& s : manifest.at("sequences")) {
      ds.sequences.push_back({s.at("id").get<std::string>(), s.at("start").get<std::size_t>(),
                              s.at("length").get<std::size_t>()});
    }
    if (manifest.at("num_samples").get<std::size_t>() != ds.size()) {
      throw CorruptFileError("manifest num_samples disagrees with the patch tensor");
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError((dir / "manifest.json").string() + ": " + e.what());
  }
  try {
    ds.validate();
  } catch (const ShapeError& e) {
    throw CorruptFileError(dir.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace mlt
