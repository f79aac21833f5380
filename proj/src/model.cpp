#include "mlt/model.hpp"

#include <cmath>

#include "mlt/errors.hpp"
#include "mlt/json_fields.hpp"
#include "mlt/ops.hpp"

namespace mlt {

namespace {

constexpr double kEmbeddingStd = 0.02;

void append_mha(std::vector<NamedParameter>& out, const std::string& prefix, const MhaWeights& w,
                ParamGroup group) {
  for (std::size_t h = 0; h < w.heads(); ++h) {
    out.push_back({prefix + ".query." + std::to_string(h), w.query[h], group});
    out.push_back({prefix + ".key." + std::to_string(h), w.key[h], group});
    out.push_back({prefix + ".value." + std::to_string(h), w.value[h], group});
  }
  out.push_back({prefix + ".output", w.output, group});
}

void append_mlp(std::vector<NamedParameter>& out, const std::string& prefix, const MlpWeights& w,
                ParamGroup group) {
  out.push_back({prefix + ".w_gelu", w.w_gelu, group});
  out.push_back({prefix + ".b_gelu", w.b_gelu, group});
  out.push_back({prefix + ".w_linear", w.w_linear, group});
  out.push_back({prefix + ".b_linear", w.b_linear, group});
}

void append_norm(std::vector<NamedParameter>& out, const std::string& prefix, const LayerNormParams& n,
                 ParamGroup group) {
  out.push_back({prefix + ".gamma", n.gamma, group});
  out.push_back({prefix + ".beta", n.beta, group});
}

MhaWeights clone_mha(const MhaWeights& w) {
  MhaWeights c;
  for (const auto& t : w.query) c.query.push_back(t.clone());
  for (const auto& t : w.key) c.key.push_back(t.clone());
  for (const auto& t : w.value) c.value.push_back(t.clone());
  c.output = w.output.clone();
  return c;
}

MlpWeights clone_mlp(const MlpWeights& w) {
  return {w.w_gelu.clone(), w.b_gelu.clone(), w.w_linear.clone(), w.b_linear.clone()};
}

LayerNormParams clone_norm(const LayerNormParams& n) { return {n.gamma.clone(), n.beta.clone()}; }

void fill_glorot(Tensor& t, Rng& rng) {
  const double fan_in = static_cast<double>(t.dim(0));
  const double fan_out = static_cast<double>(t.dim(1));
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : t.mutable_data()) v = dist(rng);
}

void fill_normal(Tensor& t, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.mutable_data()) v = dist(rng);
}

void fill_glorot(MhaWeights& w, Rng& rng) {
  for (std::size_t h = 0; h < w.heads(); ++h) {
    fill_glorot(w.query[h], rng);
    fill_glorot(w.key[h], rng);
    fill_glorot(w.value[h], rng);
  }
  fill_glorot(w.output, rng);
}

}  // namespace

void ModelConfig::validate() const {
  if (embed_dim == 0 || num_heads == 0 || encoder_layers == 0 || decoder_layers == 0 ||
      num_patches == 0 || patch_dim == 0 || num_labels == 0 || mlp_dim == 0) {
    throw ConfigError("model: all extents must be positive");
  }
  if (embed_dim % num_heads != 0) {
    throw ConfigError("model: d=" + std::to_string(embed_dim) + " is not divisible by N_h=" +
                      std::to_string(num_heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d", embed_dim},         {"N_h", num_heads}, {"N_x", encoder_layers},
          {"N_l", decoder_layers},  {"n_x", num_patches}, {"patch_dim", patch_dim},
          {"L", num_labels},        {"d_mlp", mlp_dim}, {"dropout", dropout},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  FieldReader r(j, "model");
  r.read("d", cfg.embed_dim);
  r.read("N_h", cfg.num_heads);
  r.read("N_x", cfg.encoder_layers);
  r.read("N_l", cfg.decoder_layers);
  r.read("n_x", cfg.num_patches);
  r.read("patch_dim", cfg.patch_dim);
  r.read("L", cfg.num_labels);
  r.read("d_mlp", cfg.mlp_dim);
  r.read("dropout", cfg.dropout);
  r.read("seed", cfg.seed);
  r.finish();
  cfg.validate();
  return cfg;
}

const char* to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::backbone:
      return "backbone";
    case ParamGroup::encoder:
      return "encoder";
    case ParamGroup::decoder:
      return "decoder";
  }
  return "unknown";
}

std::vector<NamedParameter> ModelParams::named() const {
  std::vector<NamedParameter> out;
  out.push_back({"patch.weight", patch_weight, ParamGroup::backbone});
  out.push_back({"patch.bias", patch_bias, ParamGroup::backbone});
  out.push_back({"positions", positions, ParamGroup::encoder});
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i);
    append_mha(out, p + ".self_attn", encoder[i].self_attn, ParamGroup::encoder);
    append_mlp(out, p + ".mlp", encoder[i].mlp, ParamGroup::encoder);
    append_norm(out, p + ".norm_attn", encoder[i].norm_attn, ParamGroup::encoder);
    append_norm(out, p + ".norm_mlp", encoder[i].norm_mlp, ParamGroup::encoder);
  }
  out.push_back({"label_tokens", label_tokens, ParamGroup::decoder});
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const std::string p = "decoder." + std::to_string(i);
    append_mha(out, p + ".self_attn", decoder[i].self_attn, ParamGroup::decoder);
    append_mha(out, p + ".cross_attn", decoder[i].cross_attn, ParamGroup::decoder);
    append_mlp(out, p + ".mlp", decoder[i].mlp, ParamGroup::decoder);
    append_norm(out, p + ".norm_self", decoder[i].norm_self, ParamGroup::decoder);
    append_norm(out, p + ".norm_cross", decoder[i].norm_cross, ParamGroup::decoder);
    append_norm(out, p + ".norm_mlp", decoder[i].norm_mlp, ParamGroup::decoder);
  }
  out.push_back({"head.weight", head_weight, ParamGroup::decoder});
  out.push_back({"head.bias", head_bias, ParamGroup::decoder});
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& p : named()) out.push_back(p.tensor);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (auto& p : named()) n += p.tensor.numel();
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams c;
  c.patch_weight = patch_weight.clone();
  c.patch_bias = patch_bias.clone();
  c.positions = positions.clone();
  for (const auto& layer : encoder) {
    c.encoder.push_back({clone_mha(layer.self_attn), clone_mlp(layer.mlp), clone_norm(layer.norm_attn),
                         clone_norm(layer.norm_mlp)});
  }
  c.label_tokens = label_tokens.clone();
  for (const auto& layer : decoder) {
    c.decoder.push_back({clone_mha(layer.self_attn), clone_mha(layer.cross_attn), clone_mlp(layer.mlp),
                         clone_norm(layer.norm_self), clone_norm(layer.norm_cross),
                         clone_norm(layer.norm_mlp)});
  }
  c.head_weight = head_weight.clone();
  c.head_bias = head_bias.clone();
  for (auto& p : c.named()) p.tensor.set_requires_grad(true);
  return c;
}

ModelParams zero_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim;
  ModelParams p;
  p.patch_weight = Tensor::zeros({cfg.patch_dim, d});
  p.patch_bias = Tensor::zeros({d});
  p.positions = Tensor::zeros({cfg.num_patches, d});
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
    p.encoder.push_back({MhaWeights::zeros(d, cfg.num_heads), MlpWeights::zeros(d, cfg.mlp_dim),
                         LayerNormParams::identity(d), LayerNormParams::identity(d)});
  }
  p.label_tokens = Tensor::zeros({cfg.num_labels, d});
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    p.decoder.push_back({MhaWeights::zeros(d, cfg.num_heads), MhaWeights::zeros(d, cfg.num_heads),
                         MlpWeights::zeros(d, cfg.mlp_dim), LayerNormParams::identity(d),
                         LayerNormParams::identity(d), LayerNormParams::identity(d)});
  }
  p.head_weight = Tensor::zeros({d, 1});
  p.head_bias = Tensor::zeros({1});
  for (auto& np : p.named()) np.tensor.set_requires_grad(true);
  return p;
}

ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  ModelParams p = zero_params(cfg);
  fill_glorot(p.patch_weight, rng);
  fill_normal(p.positions, kEmbeddingStd, rng);
  for (auto& layer : p.encoder) {
    fill_glorot(layer.self_attn, rng);
    fill_glorot(layer.mlp.w_gelu, rng);
    fill_glorot(layer.mlp.w_linear, rng);
  }
  fill_normal(p.label_tokens, kEmbeddingStd, rng);
  for (auto& layer : p.decoder) {
    fill_glorot(layer.self_attn, rng);
    fill_glorot(layer.cross_attn, rng);
    fill_glorot(layer.mlp.w_gelu, rng);
    fill_glorot(layer.mlp.w_linear, rng);
  }
  fill_glorot(p.head_weight, rng);
  return p;
}

ModelParams init_params(const ModelConfig& cfg) {
  Rng rng(cfg.seed);
  return init_params(cfg, rng);
}

Tensor forward(const ModelParams& params, const ModelConfig& cfg, const Tensor& patches, bool training,
               Rng& rng) {
  if (patches.rank() != 3 || patches.dim(1) != cfg.num_patches || patches.dim(2) != cfg.patch_dim) {
    throw ShapeError("model input " + shape_str(patches.shape()) + " must be [B, " +
                     std::to_string(cfg.num_patches) + ", " + std::to_string(cfg.patch_dim) + "]");
  }
  const std::size_t batch = patches.dim(0);
  const DropoutContext ctx{cfg.dropout, training, &rng};

  Tensor x = add(add(matmul(patches, params.patch_weight), params.patch_bias), params.positions);
  for (const auto& layer : params.encoder) x = encoder_layer(x, layer, ctx);

  Tensor tokens = broadcast_to(params.label_tokens, {batch, cfg.num_labels, cfg.embed_dim});
  for (const auto& layer : params.decoder) tokens = decoder_layer(tokens, x, layer, ctx);

  const Tensor logits = add(matmul(tokens, params.head_weight), params.head_bias);
  return sigmoid(reshape(logits, {batch, cfg.num_labels}));
}

Tensor predict(const ModelParams& params, const ModelConfig& cfg, const Tensor& patches) {
  Rng unused(0);
  return forward(params, cfg, patches, false, unused);
}

}  // namespace mlt
