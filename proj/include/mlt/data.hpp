#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlt/tensor.hpp"

namespace mlt {

/// Synthetic stand-in for annotated face video. Each label owns a set of
/// trigger patches and a pattern vector; on frames where the label is active
/// the pattern is added to its trigger patches on top of Gaussian noise.
/// Activations come in contiguous segments within each sequence.
struct SyntheticSpec {
  std::size_t num_patches = 64;
  std::size_t grid_side = 8;
  std::size_t patch_dim = 16;
  std::size_t num_labels = 12;
  std::size_t num_samples = 8000;
  std::size_t holdout_samples = 2000;
  std::size_t sequence_length = 400;
  std::size_t min_segment = 20;
  std::size_t max_segment = 80;
  /// Per-label positive rate; empty spreads rates over [0.05, 0.2].
  std::vector<double> positive_rates;
  std::size_t patches_per_label = 4;
  /// Explicit trigger sets; empty assigns disjoint random sets.
  std::vector<std::vector<std::size_t>> triggers;
  double pattern_norm = 4.0;
  double noise = 1.0;
  /// Per-frame probability of flipping a label away from its segment value.
  double flip_probability = 0.0;
  std::uint64_t seed = 7;

  void validate() const;
  std::vector<double> resolved_rates() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

struct SequenceSpan {
  std::string id;
  std::size_t start = 0;
  std::size_t length = 0;
};

struct Dataset {
  Tensor patches;  // [N x n_x x patch_dim]
  Tensor labels;   // [N x L], zero where unannotated
  Tensor mask;     // [N x L], 1 = annotated
  std::vector<std::string> label_names;
  std::vector<SequenceSpan> sequences;

  std::size_t size() const { return patches.dim(0); }
  std::size_t num_labels() const { return label_names.size(); }
  /// (positives + 1) / (annotated + 2) per label: always inside (0, 1).
  std::vector<double> positive_rates() const;
  /// Throws on inconsistent extents or sequence tables.
  void validate() const;
};

/// Trigger sets and patterns shared by every split of one synthetic task.
struct SyntheticTask {
  std::vector<std::vector<std::size_t>> triggers;
  std::vector<std::vector<double>> patterns;
};

SyntheticTask make_task(const SyntheticSpec& spec);

/// `spec.num_samples` frames.
Dataset generate_dataset(const SyntheticSpec& spec);

struct DatasetSplits {
  Dataset train;
  Dataset heldout;
};

/// Train split of `num_samples` frames and a held-out split of
/// `holdout_samples` frames from the same task, disjoint sequences.
DatasetSplits generate_splits(const SyntheticSpec& spec);

/// Run lengths of a label within [min, max], `round(rate * length)` active
/// frames in total. Exposed for tests.
std::vector<std::uint8_t> segment_schedule(std::size_t length, double rate, std::size_t min_segment,
                                           std::size_t max_segment, Rng& rng);

/// Union of label universes. Label order is first appearance; mask is 1
/// exactly where the source annotates the label. Throws on duplicate
/// sequence ids (sample ids are sequence id + frame) or patch-shape mismatch.
Dataset merge_label_universes(std::span<const Dataset> sources);

/// Keeps only `names`, in that order.
Dataset select_labels(const Dataset& ds, std::span<const std::string> names);

struct Batch {
  Tensor patches;
  Tensor labels;
  Tensor mask;
};

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices);

/// X' = lambda X_a + (1 - lambda) X_b, same for labels; mask' = mask_a AND mask_b.
Batch mixup(const Batch& a, const Batch& b, double lambda);

/// Beta(alpha, alpha) draw.
double sample_mixup_lambda(double alpha, Rng& rng);

/// Manifest JSON with fields version, num_samples, sequences, labels,
/// positive_rates, tensors.
nlohmann::json dataset_manifest(const Dataset& ds);
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace mlt
