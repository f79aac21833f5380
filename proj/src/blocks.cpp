#include "mlt/blocks.hpp"

#include "mlt/errors.hpp"
#include "mlt/ops.hpp"

namespace mlt {

namespace {

Tensor drop(const Tensor& x, const DropoutContext& ctx) {
  if (!(ctx.rate >= 0.0 && ctx.rate < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0, 1), got " + std::to_string(ctx.rate));
  }
  if (!ctx.training || ctx.rate == 0.0) return x;
  if (ctx.rng == nullptr) throw std::invalid_argument("training-mode dropout needs an rng");
  return dropout(x, ctx.rate, true, *ctx.rng);
}

Tensor add_norm(const Tensor& residual, const Tensor& sublayer, const LayerNormParams& norm,
                const DropoutContext& ctx) {
  return layer_norm(add(residual, drop(sublayer, ctx)), norm.gamma, norm.beta, kLayerNormEps);
}

void check_last_dim(const Tensor& x, std::size_t d, const char* what) {
  if (x.rank() < 2 || x.dim(-1) != d) {
    throw ShapeError(std::string(what) + " input " + shape_str(x.shape()) + " must be [.., n, " +
                     std::to_string(d) + "]");
  }
}

}  // namespace

LayerNormParams LayerNormParams::identity(std::size_t dim) {
  return {Tensor::ones({dim}), Tensor::zeros({dim})};
}

MlpWeights MlpWeights::zeros(std::size_t dim, std::size_t hidden) {
  return {Tensor::zeros({dim, hidden}), Tensor::zeros({hidden}), Tensor::zeros({hidden, dim}),
          Tensor::zeros({dim})};
}

Tensor mlp_block(const Tensor& x, const MlpWeights& w, const DropoutContext& ctx) {
  if (x.rank() == 0 || w.w_gelu.rank() != 2 || x.dim(-1) != w.w_gelu.dim(0)) {
    throw ShapeError("mlp input " + shape_str(x.shape()) + " does not match W_g " + shape_str(w.w_gelu.shape()));
  }
  const Tensor hidden = drop(gelu(add(matmul(x, w.w_gelu), w.b_gelu)), ctx);
  return drop(add(matmul(hidden, w.w_linear), w.b_linear), ctx);
}

Tensor encoder_layer(const Tensor& x, const EncoderLayerWeights& w, const DropoutContext& ctx) {
  check_last_dim(x, w.self_attn.model_dim(), "encoder layer");
  const Tensor attended = add_norm(x, self_attention(x, w.self_attn), w.norm_attn, ctx);
  return add_norm(attended, mlp_block(attended, w.mlp, ctx), w.norm_mlp, ctx);
}

Tensor decoder_layer(const Tensor& tokens, const Tensor& encoded, const DecoderLayerWeights& w,
                     const DropoutContext& ctx) {
  check_last_dim(tokens, w.self_attn.model_dim(), "decoder layer");
  check_last_dim(encoded, w.cross_attn.model_dim(), "decoder layer");
  const Tensor mixed = add_norm(tokens, self_attention(tokens, w.self_attn), w.norm_self, ctx);
  const Tensor looked = add_norm(mixed, cross_attention(mixed, encoded, w.cross_attn), w.norm_cross, ctx);
  return add_norm(looked, mlp_block(looked, w.mlp, ctx), w.norm_mlp, ctx);
}

}  // namespace mlt
