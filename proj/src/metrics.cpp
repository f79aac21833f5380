#include "mlt/metrics.hpp"

#include <algorithm>
#include <stdexcept>

#include "mlt/errors.hpp"

namespace mlt {

namespace {

void smooth_block(std::span<const double> in, std::span<double> out, std::size_t frames, std::size_t labels,
                  std::size_t window) {
  const std::size_t before = (window - 1) / 2;
  const std::size_t after = window - 1 - before;
  for (std::size_t t = 0; t < labels; ++t) {
    // Summed directly rather than from prefix sums so a width-1 window is exact.
    for (std::size_t f = 0; f < frames; ++f) {
      const std::size_t lo = f >= before ? f - before : 0;
      const std::size_t hi = std::min(frames - 1, f + after);
      double sum = 0.0;
      for (std::size_t i = lo; i <= hi; ++i) sum += in[i * labels + t];
      out[f * labels + t] = sum / static_cast<double>(hi - lo + 1);
    }
  }
}

}  // namespace

PredictionSequence moving_mean(const PredictionSequence& seq, std::size_t window) {
  if (window < 1) throw std::invalid_argument("moving mean window must be >= 1");
  if (!seq.probabilities.defined() || seq.probabilities.rank() != 2) {
    throw std::invalid_argument("moving mean needs a nonempty [frames x L] sequence");
  }
  std::vector<double> out(seq.probabilities.numel());
  smooth_block(seq.probabilities.data(), out, seq.frames(), seq.labels(), window);
  return {seq.id, Tensor(seq.probabilities.shape(), std::move(out))};
}

Tensor moving_mean(const Tensor& probabilities, std::span<const SequenceSpan> sequences, std::size_t window) {
  if (window < 1) throw std::invalid_argument("moving mean window must be >= 1");
  if (probabilities.rank() != 2) throw ShapeError("moving mean needs [N x L], got " + shape_str(probabilities.shape()));
  const std::size_t labels = probabilities.dim(1);
  std::vector<double> out(probabilities.numel());
  std::size_t covered = 0;
  for (const auto& s : sequences) {
    if (s.length == 0) throw std::invalid_argument("empty sequence " + s.id);
    if (s.start + s.length > probabilities.dim(0)) throw ShapeError("sequence " + s.id + " runs past the predictions");
    smooth_block(probabilities.data().subspan(s.start * labels, s.length * labels),
                 std::span<double>(out).subspan(s.start * labels, s.length * labels), s.length, labels, window);
    covered += s.length;
  }
  if (covered != probabilities.dim(0)) throw ShapeError("sequences do not cover every prediction row");
  return Tensor(probabilities.shape(), std::move(out));
}

Tensor threshold(const Tensor& probabilities, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("threshold must lie in (0, 1)");
  std::vector<double> out(probabilities.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = probabilities.data()[i] >= tau ? 1.0 : 0.0;
  return Tensor(probabilities.shape(), std::move(out));
}

F1Report f1_scores(const Tensor& predicted, const Tensor& truth, const Tensor& mask) {
  if (predicted.rank() != 2 || predicted.shape() != truth.shape() ||
      (mask.defined() && mask.shape() != truth.shape())) {
    throw ShapeError("f1 needs matching [N x L] predictions, truth and mask");
  }
  const std::size_t n = predicted.dim(0);
  const std::size_t labels = predicted.dim(1);
  F1Report report;
  report.counts.resize(labels);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < labels; ++t) {
      const std::size_t k = i * labels + t;
      if (mask.defined() && mask.data()[k] == 0.0) continue;
      const bool p = predicted.data()[k] != 0.0;
      const bool y = truth.data()[k] != 0.0;
      auto& c = report.counts[t];
      if (p && y) ++c.tp;
      else if (p) ++c.fp;
      else if (y) ++c.fn;
      else ++c.tn;
    }
  }
  double total = 0.0;
  for (const auto& c : report.counts) {
    const double denom = static_cast<double>(2 * c.tp + c.fp + c.fn);
    const double f1 = denom > 0.0 ? 2.0 * static_cast<double>(c.tp) / denom : 0.0;
    report.per_label.push_back(f1);
    total += f1;
  }
  report.macro = total / static_cast<double>(labels);
  return report;
}

nlohmann::json F1Report::to_json(std::span<const std::string> label_names) const {
  nlohmann::json confusion = nlohmann::json::array();
  for (const auto& c : counts) confusion.push_back({{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}});
  return {{"labels", std::vector<std::string>(label_names.begin(), label_names.end())},
          {"per_label_f1", per_label},
          {"macro_f1", macro},
          {"confusion", confusion}};
}

}  // namespace mlt
