#pragma once

#include "mlt/attention.hpp"
#include "mlt/tensor.hpp"

namespace mlt {

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;

  static LayerNormParams identity(std::size_t dim);
};

/// Two dense layers: GELU(x W_g + b_g) then a linear W_l + b_l, dropout after
/// each.
struct MlpWeights {
  Tensor w_gelu;    // [d x d_mlp]
  Tensor b_gelu;    // [d_mlp]
  Tensor w_linear;  // [d_mlp x d]
  Tensor b_linear;  // [d]

  static MlpWeights zeros(std::size_t dim, std::size_t hidden);
};

struct EncoderLayerWeights {
  MhaWeights self_attn;
  MlpWeights mlp;
  LayerNormParams norm_attn;
  LayerNormParams norm_mlp;
};

struct DecoderLayerWeights {
  MhaWeights self_attn;
  MhaWeights cross_attn;
  MlpWeights mlp;
  LayerNormParams norm_self;
  LayerNormParams norm_cross;
  LayerNormParams norm_mlp;
};

/// Dropout applied to sublayer outputs.
struct DropoutContext {
  double rate = 0.0;
  bool training = false;
  Rng* rng = nullptr;
};

inline constexpr double kLayerNormEps = 1e-5;

Tensor mlp_block(const Tensor& x, const MlpWeights& w, const DropoutContext& ctx);

/// Post-norm encoder layer:
///   h = LN(x + D(SA(x)));  out = LN(h + D(MLP(h))).
Tensor encoder_layer(const Tensor& x, const EncoderLayerWeights& w, const DropoutContext& ctx);

/// Post-norm decoder layer over label tokens `t` and encoded patches:
///   a = LN(t + D(SA(t)));  b = LN(a + D(CA(a, x)));  out = LN(b + D(MLP(b))).
Tensor decoder_layer(const Tensor& tokens, const Tensor& encoded, const DecoderLayerWeights& w,
                     const DropoutContext& ctx);

}  // namespace mlt
