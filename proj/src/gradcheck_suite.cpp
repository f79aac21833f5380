#include "mlt/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "mlt/attention.hpp"
#include "mlt/blocks.hpp"
#include "mlt/gradcheck.hpp"
#include "mlt/loss.hpp"
#include "mlt/ops.hpp"

namespace mlt {

namespace {

struct Case {
  ClosedScalarFn f;
  std::vector<Tensor> inputs;
};

using CaseBuilder = std::function<Case(Rng&)>;

Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(shape, std::move(v));
}

Tensor uniform(const Shape& shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(shape, std::move(v));
}

// Random linear functional so every output coordinate reaches the loss with
// a distinct weight.
Tensor probe(const Tensor& y, const Tensor& weights) { return sum(mul(y, weights)); }

Case unary_case(Tensor x, std::function<Tensor(const Tensor&)> op, Rng& rng) {
  Tensor w = randn(op(x).shape(), rng);
  return {[x, w, op] { return probe(op(x), w); }, {x}};
}

Case binary_case(Tensor a, Tensor b, std::function<Tensor(const Tensor&, const Tensor&)> op, Rng& rng) {
  Tensor w = randn(op(a, b).shape(), rng);
  return {[a, b, w, op] { return probe(op(a, b), w); }, {a, b}};
}

std::vector<std::pair<std::string, CaseBuilder>> primitive_cases() {
  std::vector<std::pair<std::string, CaseBuilder>> c;
  c.emplace_back("add", [](Rng& r) { return binary_case(randn({3, 4}, r), randn({4}, r), add, r); });
  c.emplace_back("sub", [](Rng& r) { return binary_case(randn({2, 3, 4}, r), randn({3, 1}, r), sub, r); });
  c.emplace_back("mul", [](Rng& r) { return binary_case(randn({3, 4}, r), randn({1, 4}, r), mul, r); });
  c.emplace_back("div", [](Rng& r) { return binary_case(randn({3, 4}, r), uniform({4}, r, 0.5, 2.0), div, r); });
  c.emplace_back("scale", [](Rng& r) {
    return unary_case(randn({3, 4}, r), [](const Tensor& x) { return scale(x, -1.7); }, r);
  });
  c.emplace_back("add_scalar", [](Rng& r) {
    return unary_case(randn({3, 4}, r), [](const Tensor& x) { return add_scalar(x, 0.3); }, r);
  });
  c.emplace_back("broadcast_to", [](Rng& r) {
    return unary_case(randn({1, 4}, r), [](const Tensor& x) { return broadcast_to(x, {2, 3, 4}); }, r);
  });
  c.emplace_back("matmul", [](Rng& r) {
    Tensor a = randn({2, 3, 4}, r), b = randn({2, 4, 5}, r), m = randn({4, 2}, r);
    Tensor w1 = randn({2, 3, 5}, r), w2 = randn({2, 3, 2}, r);
    return Case{[=] { return add(probe(matmul(a, b), w1), probe(matmul(a, m), w2)); }, {a, b, m}};
  });
  c.emplace_back("transpose", [](Rng& r) { return unary_case(randn({2, 3, 4}, r), transpose, r); });
  c.emplace_back("reshape", [](Rng& r) {
    return unary_case(randn({2, 6}, r), [](const Tensor& x) { return reshape(x, {3, 4}); }, r);
  });
  c.emplace_back("concat", [](Rng& r) {
    Tensor a = randn({2, 3}, r), b = randn({2, 2}, r), d = randn({1, 3}, r);
    Tensor w1 = randn({2, 5}, r), w2 = randn({3, 3}, r);
    return Case{[=] {
                  const Tensor cols[] = {a, b};
                  const Tensor rows[] = {a, d};
                  return add(probe(concat(cols, 1), w1), probe(concat(rows, 0), w2));
                },
                {a, b, d}};
  });
  c.emplace_back("slice", [](Rng& r) {
    return unary_case(randn({3, 5}, r), [](const Tensor& x) { return slice(x, 1, 1, 3); }, r);
  });
  c.emplace_back("sum", [](Rng& r) {
    Tensor x = randn({3, 4}, r);
    return Case{[x] { return scale(sum(mul(x, x)), 0.5); }, {x}};
  });
  c.emplace_back("mean", [](Rng& r) {
    Tensor x = randn({3, 4}, r);
    return Case{[x] { return mean(mul(x, x)); }, {x}};
  });
  c.emplace_back("sum_axis", [](Rng& r) {
    return unary_case(randn({2, 3, 4}, r), [](const Tensor& x) { return sum_axis(x, 1); }, r);
  });
  c.emplace_back("gather_rows", [](Rng& r) {
    return unary_case(randn({5, 3}, r), [](const Tensor& t) {
      const std::size_t idx[] = {0, 2, 2, 4};
      return gather_rows(t, idx);
    }, r);
  });
  c.emplace_back("softmax", [](Rng& r) { return unary_case(randn({3, 5}, r), softmax_lastdim, r); });
  c.emplace_back("layer_norm", [](Rng& r) {
    Tensor x = randn({3, 6}, r), g = uniform({6}, r, 0.5, 1.5), b = randn({6}, r);
    Tensor w = randn({3, 6}, r);
    return Case{[=] { return probe(layer_norm(x, g, b), w); }, {x, g, b}};
  });
  c.emplace_back("gelu", [](Rng& r) { return unary_case(randn({3, 4}, r, 2.0), gelu, r); });
  c.emplace_back("sigmoid", [](Rng& r) { return unary_case(randn({3, 4}, r, 2.0), sigmoid, r); });
  c.emplace_back("log", [](Rng& r) {
    return unary_case(uniform({3, 4}, r, 0.3, 3.0), [](const Tensor& x) { return log(x); }, r);
  });
  c.emplace_back("clamp", [](Rng& r) {
    // Keep every coordinate at least 0.05 away from the kinks.
    Tensor x = uniform({3, 4}, r, -2.0, 2.0);
    for (double& v : x.mutable_data()) {
      if (std::abs(std::abs(v) - 1.0) < 0.05) v = v < 0 ? -0.5 : 0.5;
    }
    return unary_case(x, [](const Tensor& t) { return clamp(t, -1.0, 1.0); }, r);
  });
  c.emplace_back("dropout", [](Rng& r) {
    const std::uint64_t mask_seed = r();
    return unary_case(randn({4, 5}, r), [mask_seed](const Tensor& x) {
      Rng local(mask_seed);
      return dropout(x, 0.3, true, local);
    }, r);
  });
  return c;
}

std::vector<std::pair<std::string, CaseBuilder>> module_cases(const ModelConfig& cfg) {
  const std::size_t d = cfg.embed_dim;
  const std::size_t heads = cfg.num_heads;
  const std::size_t dk = d / heads;
  auto mha = [=](Rng& r) {
    MhaWeights w;
    for (std::size_t h = 0; h < heads; ++h) {
      w.query.push_back(randn({d, dk}, r, 0.5));
      w.key.push_back(randn({d, dk}, r, 0.5));
      w.value.push_back(randn({d, dk}, r, 0.5));
    }
    w.output = randn({d, d}, r, 0.5);
    return w;
  };
  auto mha_tensors = [](const MhaWeights& w) {
    std::vector<Tensor> t;
    for (std::size_t h = 0; h < w.heads(); ++h) t.insert(t.end(), {w.query[h], w.key[h], w.value[h]});
    t.push_back(w.output);
    return t;
  };
  auto mlp = [=](Rng& r) {
    return MlpWeights{randn({d, cfg.mlp_dim}, r, 0.3), randn({cfg.mlp_dim}, r, 0.1),
                      randn({cfg.mlp_dim, d}, r, 0.3), randn({d}, r, 0.1)};
  };
  auto norm = [=](Rng& r) { return LayerNormParams{uniform({d}, r, 0.5, 1.5), randn({d}, r, 0.1)}; };
  auto append = [](std::vector<Tensor>& out, std::initializer_list<Tensor> more) {
    out.insert(out.end(), more.begin(), more.end());
  };

  std::vector<std::pair<std::string, CaseBuilder>> c;
  c.emplace_back("multi_head_attention", [=](Rng& r) {
    Tensor q = randn({2, 3, d}, r), k = randn({2, 4, d}, r), v = randn({2, 4, d}, r);
    MhaWeights w = mha(r);
    Tensor probe_w = randn({2, 3, d}, r);
    auto mask = std::make_shared<AttentionMask>();
    mask->queries = 3;
    mask->keys = 4;
    mask->disallowed = {0, 1, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0};
    std::vector<Tensor> inputs{q, k, v};
    for (auto& t : mha_tensors(w)) inputs.push_back(t);
    return Case{[=] {
                  AttentionOptions opt;
                  opt.mask = mask.get();
                  return probe(multi_head_attention(q, k, v, w, opt), probe_w);
                },
                inputs};
  });
  c.emplace_back("self_attention", [=](Rng& r) {
    Tensor x = randn({2, 4, d}, r);
    MhaWeights w = mha(r);
    Tensor probe_w = randn({2, 4, d}, r);
    std::vector<Tensor> inputs{x};
    for (auto& t : mha_tensors(w)) inputs.push_back(t);
    return Case{[=] { return probe(self_attention(x, w), probe_w); }, inputs};
  });
  c.emplace_back("cross_attention", [=](Rng& r) {
    Tensor t = randn({2, 3, d}, r), x = randn({2, 4, d}, r);
    MhaWeights w = mha(r);
    Tensor probe_w = randn({2, 3, d}, r);
    std::vector<Tensor> inputs{t, x};
    for (auto& p : mha_tensors(w)) inputs.push_back(p);
    return Case{[=] { return probe(cross_attention(t, x, w), probe_w); }, inputs};
  });
  c.emplace_back("mlp_block", [=](Rng& r) {
    Tensor x = randn({2, 3, d}, r);
    MlpWeights w = mlp(r);
    Tensor probe_w = randn({2, 3, d}, r);
    const std::uint64_t seed = r();
    return Case{[=] {
                  Rng local(seed);
                  return probe(mlp_block(x, w, DropoutContext{0.1, true, &local}), probe_w);
                },
                {x, w.w_gelu, w.b_gelu, w.w_linear, w.b_linear}};
  });
  c.emplace_back("encoder_layer", [=](Rng& r) {
    Tensor x = randn({2, 4, d}, r);
    EncoderLayerWeights w{mha(r), mlp(r), norm(r), norm(r)};
    Tensor probe_w = randn({2, 4, d}, r);
    const std::uint64_t seed = r();
    std::vector<Tensor> inputs{x};
    for (auto& t : mha_tensors(w.self_attn)) inputs.push_back(t);
    append(inputs, {w.mlp.w_gelu, w.mlp.b_gelu, w.mlp.w_linear, w.mlp.b_linear, w.norm_attn.gamma,
                    w.norm_attn.beta, w.norm_mlp.gamma, w.norm_mlp.beta});
    return Case{[=] {
                  Rng local(seed);
                  return probe(encoder_layer(x, w, DropoutContext{0.1, true, &local}), probe_w);
                },
                inputs};
  });
  c.emplace_back("decoder_layer", [=](Rng& r) {
    Tensor t = randn({2, 3, d}, r), x = randn({2, 4, d}, r);
    DecoderLayerWeights w{mha(r), mha(r), mlp(r), norm(r), norm(r), norm(r)};
    Tensor probe_w = randn({2, 3, d}, r);
    const std::uint64_t seed = r();
    std::vector<Tensor> inputs{t, x};
    for (auto& p : mha_tensors(w.self_attn)) inputs.push_back(p);
    for (auto& p : mha_tensors(w.cross_attn)) inputs.push_back(p);
    append(inputs, {w.mlp.w_gelu, w.mlp.b_gelu, w.mlp.w_linear, w.mlp.b_linear, w.norm_self.gamma,
                    w.norm_self.beta, w.norm_cross.gamma, w.norm_cross.beta, w.norm_mlp.gamma, w.norm_mlp.beta});
    return Case{[=] {
                  Rng local(seed);
                  return probe(decoder_layer(t, x, w, DropoutContext{0.1, true, &local}), probe_w);
                },
                inputs};
  });
  c.emplace_back("weighted_masked_bce", [](Rng& r) {
    Tensor y = uniform({4, 3}, r, 0.0, 1.0);
    Tensor p = uniform({4, 3}, r, 0.05, 0.95);
    Tensor mask({4, 3}, {1, 1, 0, 1, 0, 1, 1, 1, 1, 0, 1, 1});
    std::vector<double> w{1.6, 0.4, 1.0};
    return Case{[=] { return weighted_masked_bce(y, mask, p, w); }, {p}};
  });
  c.emplace_back("dice_loss", [](Rng& r) {
    Tensor y({4, 3}, {1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1});
    Tensor p = uniform({4, 3}, r, 0.05, 0.95);
    Tensor mask({4, 3}, {1, 1, 0, 1, 0, 1, 1, 1, 1, 0, 1, 1});
    return Case{[=] { return dice_loss(y, mask, p); }, {p}};
  });
  return c;
}

double worst_over(const Case& c, double h) {
  const auto errs = gradcheck(c.f, c.inputs, h);
  return errs.empty() ? 0.0 : *std::max_element(errs.begin(), errs.end());
}

}  // namespace

ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.num_heads = 2;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 2;
  cfg.num_patches = 4;
  cfg.patch_dim = 6;
  cfg.num_labels = 3;
  cfg.mlp_dim = 16;
  cfg.dropout = 0.1;
  cfg.seed = 3;
  return cfg;
}

std::vector<GradcheckEntry> run_gradcheck_suite(const ModelConfig& cfg, const GradcheckOptions& options) {
  cfg.validate();
  std::vector<GradcheckEntry> out;
  for (const auto& [name, build] : primitive_cases()) {
    double worst = 0.0;
    for (std::size_t s = 0; s < std::max<std::size_t>(options.seeds, 1); ++s) {
      Rng rng(options.base_seed + s);
      worst = std::max(worst, worst_over(build(rng), options.h));
    }
    out.push_back({name, "primitive", worst, options.primitive_tolerance});
  }
  for (const auto& [name, build] : module_cases(cfg)) {
    Rng rng(options.base_seed);
    out.push_back({name, "module", worst_over(build(rng), options.h), options.primitive_tolerance});
  }

  // Full model through total_loss, training mode with dropout reseeded per
  // evaluation, frequency weights, label smoothing and a partial mask.
  Rng rng(options.base_seed);
  ModelParams params = init_params(cfg, rng);
  for (auto& p : params.named()) {
    // Nonzero biases and tables so every path carries gradient.
    if (p.name.find("bias") != std::string::npos || p.name.find("b_") != std::string::npos ||
        p.name.find("beta") != std::string::npos) {
      for (double& v : p.tensor.mutable_data()) v = std::normal_distribution<double>(0.0, 0.1)(rng);
    }
  }
  const std::size_t batch = 3;
  const Tensor x = randn({batch, cfg.num_patches, cfg.patch_dim}, rng);
  std::vector<double> y(batch * cfg.num_labels), mask(batch * cfg.num_labels, 1.0);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<double>((i * 7 + 3) % 5 < 2);
  mask[1] = 0.0;
  const Tensor labels({batch, cfg.num_labels}, y);
  const Tensor mask_t({batch, cfg.num_labels}, mask);
  LossConfig loss_cfg;
  loss_cfg.label_smoothing = 0.1;
  std::vector<double> rates(cfg.num_labels);
  for (std::size_t t = 0; t < rates.size(); ++t) rates[t] = 0.1 + 0.6 * static_cast<double>(t) / rates.size();
  const std::vector<double> weights = resolve_label_weights(loss_cfg, cfg.num_labels, rates);
  const std::uint64_t dropout_seed = rng();

  const auto named = params.named();
  std::vector<Tensor> tensors;
  for (const auto& p : named) tensors.push_back(p.tensor);
  const auto errs = gradcheck(
      [&] {
        Rng local(dropout_seed);
        const Tensor p = forward(params, cfg, x, true, local);
        return total_loss(labels, mask_t, p, loss_cfg, weights).total;
      },
      tensors, options.h);
  for (ParamGroup g : {ParamGroup::backbone, ParamGroup::encoder, ParamGroup::decoder}) {
    double worst = 0.0;
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (named[i].group == g) worst = std::max(worst, errs[i]);
    }
    out.push_back({std::string("model.") + to_string(g), "model", worst, options.model_tolerance});
  }
  return out;
}

nlohmann::json gradcheck_report(const std::vector<GradcheckEntry>& entries) {
  nlohmann::json components = nlohmann::json::array();
  bool all = true;
  for (const auto& e : entries) {
    components.push_back({{"component", e.component},
                          {"kind", e.kind},
                          {"max_rel_error", e.max_rel_error},
                          {"tolerance", e.tolerance},
                          {"passed", e.passed()}});
    all = all && e.passed();
  }
  return {{"passed", all}, {"components", components}};
}

}  // namespace mlt
