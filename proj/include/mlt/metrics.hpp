#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlt/data.hpp"
#include "mlt/tensor.hpp"

namespace mlt {

/// Per-frame probabilities [frames x L] of one video.
struct PredictionSequence {
  std::string id;
  Tensor probabilities;

  std::size_t frames() const { return probabilities.dim(0); }
  std::size_t labels() const { return probabilities.dim(1); }
};

/// Per-label centered moving mean. The window covers frames
/// f - floor((w-1)/2) .. f + ceil((w-1)/2), truncated at the sequence edges.
PredictionSequence moving_mean(const PredictionSequence& seq, std::size_t window);

/// Smooths each sequence of a stacked [N x L] prediction matrix separately.
Tensor moving_mean(const Tensor& probabilities, std::span<const SequenceSpan> sequences, std::size_t window);

/// 1 where p >= tau, else 0. tau must lie in (0, 1).
Tensor threshold(const Tensor& probabilities, double tau);

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
};

struct F1Report {
  std::vector<double> per_label;
  double macro = 0.0;
  std::vector<ConfusionCounts> counts;

  nlohmann::json to_json(std::span<const std::string> label_names) const;
};

/// F1 = 2TP / (2TP + FP + FN) over annotated entries, 0 when the denominator
/// is 0; macro F1 is the unweighted label mean. An empty mask means all
/// entries are annotated.
F1Report f1_scores(const Tensor& predicted, const Tensor& truth, const Tensor& mask = Tensor());

}  // namespace mlt
