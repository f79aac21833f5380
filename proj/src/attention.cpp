#include "mlt/attention.hpp"

#include <cmath>

#include "mlt/errors.hpp"
#include "mlt/ops.hpp"

namespace mlt {

namespace {

constexpr double kMaskedLogit = -1e30;

// x [.., n, d] times each per-head matrix, computed as one product against the
// column-concatenated weights and split back into heads.
std::vector<Tensor> project_heads(const Tensor& x, const std::vector<Tensor>& per_head) {
  if (per_head.size() == 1) return {matmul(x, per_head.front())};
  const std::size_t width = per_head.front().dim(1);
  const Tensor projected = matmul(x, concat(per_head, 1));
  std::vector<Tensor> heads;
  heads.reserve(per_head.size());
  for (std::size_t h = 0; h < per_head.size(); ++h) {
    heads.push_back(slice(projected, -1, h * width, width));
  }
  return heads;
}

void check_inputs(const Tensor& q, const Tensor& k, const MhaWeights& w) {
  w.validate();
  const std::size_t d = w.model_dim();
  if (q.rank() < 2 || k.rank() < 2 || q.dim(-1) != d || k.dim(-1) != d) {
    throw ShapeError("attention inputs " + shape_str(q.shape()) + " and " + shape_str(k.shape()) +
                     " must be [.., n, " + std::to_string(d) + "]");
  }
}

Tensor mask_bias(const AttentionMask& mask, std::size_t n_q, std::size_t n) {
  if (mask.queries != n_q || mask.keys != n || mask.disallowed.size() != n_q * n) {
    throw ShapeError("attention mask [" + std::to_string(mask.queries) + ", " +
                     std::to_string(mask.keys) + "] does not match scores [" + std::to_string(n_q) +
                     ", " + std::to_string(n) + "]");
  }
  std::vector<double> bias(n_q * n, 0.0);
  for (std::size_t i = 0; i < n_q; ++i) {
    bool any_allowed = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask.blocked(i, j)) {
        bias[i * n + j] = kMaskedLogit;
      } else {
        any_allowed = true;
      }
    }
    if (!any_allowed) {
      throw std::invalid_argument("attention mask blocks every key for query row " + std::to_string(i));
    }
  }
  return Tensor({n_q, n}, std::move(bias));
}

std::vector<Tensor> head_probabilities(const std::vector<Tensor>& q_heads,
                                       const std::vector<Tensor>& k_heads, std::size_t head_dim,
                                       const AttentionMask* mask) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Tensor bias;
  if (mask != nullptr) bias = mask_bias(*mask, q_heads.front().dim(-2), k_heads.front().dim(-2));
  std::vector<Tensor> probs;
  probs.reserve(q_heads.size());
  for (std::size_t h = 0; h < q_heads.size(); ++h) {
    Tensor logits = scale(matmul(q_heads[h], transpose(k_heads[h])), inv_sqrt);
    if (bias.defined()) logits = add(logits, bias);
    probs.push_back(softmax_lastdim(logits));
  }
  return probs;
}

}  // namespace

std::size_t MhaWeights::model_dim() const { return output.dim(1); }
std::size_t MhaWeights::head_dim() const { return query.front().dim(1); }

void MhaWeights::validate() const {
  if (query.empty() || key.size() != query.size() || value.size() != query.size() || !output.defined()) {
    throw ShapeError("multi-head attention needs the same nonzero number of Q/K/V head matrices");
  }
  if (output.rank() != 2) throw ShapeError("W_O must be rank 2, got " + shape_str(output.shape()));
  const std::size_t d = output.dim(1);
  const std::size_t h = query.size();
  if (d % h != 0) {
    throw ShapeError("model dim " + std::to_string(d) + " is not divisible by " + std::to_string(h) + " heads");
  }
  const Shape head_shape{d, d / h};
  for (std::size_t i = 0; i < h; ++i) {
    for (const Tensor* t : {&query[i], &key[i], &value[i]}) {
      if (t->shape() != head_shape) {
        throw ShapeError("head projection " + shape_str(t->shape()) + " should be " + shape_str(head_shape));
      }
    }
  }
  if (output.shape() != Shape{h * (d / h), d}) {
    throw ShapeError("W_O " + shape_str(output.shape()) + " should be " + shape_str({h * (d / h), d}));
  }
}

MhaWeights MhaWeights::zeros(std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("model dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  MhaWeights w;
  const std::size_t dk = dim / heads;
  for (std::size_t h = 0; h < heads; ++h) {
    w.query.push_back(Tensor::zeros({dim, dk}));
    w.key.push_back(Tensor::zeros({dim, dk}));
    w.value.push_back(Tensor::zeros({dim, dk}));
  }
  w.output = Tensor::zeros({dim, dim});
  return w;
}

std::vector<Tensor> attention_probabilities(const Tensor& q, const Tensor& k, const MhaWeights& w,
                                            const AttentionMask* mask) {
  check_inputs(q, k, w);
  return head_probabilities(project_heads(q, w.query), project_heads(k, w.key), w.head_dim(), mask);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const MhaWeights& w,
                            const AttentionOptions& options) {
  check_inputs(q, k, w);
  if (v.rank() < 2 || v.dim(-1) != w.model_dim() || v.dim(-2) != k.dim(-2)) {
    throw ShapeError("values " + shape_str(v.shape()) + " do not match keys " + shape_str(k.shape()));
  }
  const auto q_heads = project_heads(q, w.query);
  const auto k_heads = project_heads(k, w.key);
  const auto v_heads = project_heads(v, w.value);
  auto probs = head_probabilities(q_heads, k_heads, w.head_dim(), options.mask);

  std::vector<Tensor> mixed;
  mixed.reserve(probs.size());
  for (std::size_t h = 0; h < probs.size(); ++h) {
    Tensor p = probs[h];
    if (options.training && options.dropout_rate > 0.0) {
      if (options.rng == nullptr) throw std::invalid_argument("attention dropout needs an rng");
      p = dropout(p, options.dropout_rate, true, *options.rng);
    }
    mixed.push_back(matmul(p, v_heads[h]));
  }
  const Tensor merged = mixed.size() == 1 ? mixed.front() : concat(mixed, -1);
  return matmul(merged, w.output);
}

Tensor self_attention(const Tensor& x, const MhaWeights& w, const AttentionOptions& options) {
  return multi_head_attention(x, x, x, w, options);
}

Tensor cross_attention(const Tensor& q, const Tensor& kv, const MhaWeights& w,
                       const AttentionOptions& options) {
  return multi_head_attention(q, kv, kv, w, options);
}

}  // namespace mlt
