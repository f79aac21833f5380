#pragma once

#include <cstdint>
#include <vector>

#include "mlt/tensor.hpp"

namespace mlt {

/// Per-head projections W_Q^(h), W_K^(h) [d x d_k], W_V^(h) [d x d_v] and the
/// output projection W_O [heads * d_v x d], with d_k = d_v = d / heads.
/// Projections carry no bias.
struct MhaWeights {
  std::vector<Tensor> query;
  std::vector<Tensor> key;
  std::vector<Tensor> value;
  Tensor output;

  std::size_t heads() const { return query.size(); }
  std::size_t model_dim() const;
  std::size_t head_dim() const;

  /// Throws ShapeError if the tensors do not form a consistent set.
  void validate() const;

  /// Zero-initialised weights; throws ShapeError unless `heads` divides `dim`.
  static MhaWeights zeros(std::size_t dim, std::size_t heads);
};

/// Marks disallowed key positions, row-major [queries x keys]. Every query
/// row must keep at least one allowed key.
struct AttentionMask {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::uint8_t> disallowed;

  bool blocked(std::size_t q, std::size_t k) const { return disallowed[q * keys + k] != 0; }
};

struct AttentionOptions {
  const AttentionMask* mask = nullptr;
  /// Dropout on attention probabilities; off unless set explicitly.
  double dropout_rate = 0.0;
  bool training = false;
  Rng* rng = nullptr;
};

/// Softmax(Q W_Q^(h) (K W_K^(h))^T / sqrt(d_k)) for each head, each of shape
/// [.., n_q, n].
std::vector<Tensor> attention_probabilities(const Tensor& q, const Tensor& k, const MhaWeights& w,
                                            const AttentionMask* mask = nullptr);

/// Concat_h(softmax(..) V W_V^(h)) W_O. Inputs are [.., n_q, d] and
/// [.., n, d]; leading axes broadcast.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const MhaWeights& w,
                            const AttentionOptions& options = {});

/// MHA(x, x, x).
Tensor self_attention(const Tensor& x, const MhaWeights& w, const AttentionOptions& options = {});

/// MHA(q, kv, kv).
Tensor cross_attention(const Tensor& q, const Tensor& kv, const MhaWeights& w,
                       const AttentionOptions& options = {});

}  // namespace mlt
