#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlt/blocks.hpp"
#include "mlt/tensor.hpp"

namespace mlt {

/// Architecture hyperparameters. JSON keys: d, N_h, N_x, N_l, n_x,
/// patch_dim, L, d_mlp, dropout, seed.
struct ModelConfig {
  std::size_t embed_dim = 128;
  std::size_t num_heads = 8;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 2;
  std::size_t num_patches = 64;
  std::size_t patch_dim = 16;
  std::size_t num_labels = 12;
  std::size_t mlp_dim = 512;
  double dropout = 0.1;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys take the defaults above; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

/// Optimizer routing of each parameter.
enum class ParamGroup { backbone, encoder, decoder };

const char* to_string(ParamGroup group);

struct NamedParameter {
  std::string name;
  Tensor tensor;
  ParamGroup group;
};

struct ModelParams {
  Tensor patch_weight;  // [patch_dim x d], stand-in patch encoder
  Tensor patch_bias;    // [d]
  Tensor positions;     // [n_x x d]
  std::vector<EncoderLayerWeights> encoder;
  Tensor label_tokens;  // [L x d]
  std::vector<DecoderLayerWeights> decoder;
  Tensor head_weight;   // [d x 1], shared by every label token
  Tensor head_bias;     // [1]

  /// Every tensor in a fixed order with a stable dotted name.
  std::vector<NamedParameter> named() const;
  std::vector<Tensor> tensors() const;
  std::size_t parameter_count() const;
  /// Deep copy.
  ModelParams clone() const;
};

/// Zero-filled parameters with the shapes `cfg` dictates.
ModelParams zero_params(const ModelConfig& cfg);

/// Glorot-uniform projection and embedding matrices, N(0, 0.02^2) positional
/// and label tables, zero biases, identity layer norms.
ModelParams init_params(const ModelConfig& cfg, Rng& rng);
/// Seeds the generator from cfg.seed.
ModelParams init_params(const ModelConfig& cfg);

/// Label probabilities [B x L] for patches [B x n_x x patch_dim].
Tensor forward(const ModelParams& params, const ModelConfig& cfg, const Tensor& patches, bool training,
               Rng& rng);

/// Eval-mode forward without an rng.
Tensor predict(const ModelParams& params, const ModelConfig& cfg, const Tensor& patches);

}  // namespace mlt
