#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlt/model.hpp"

namespace mlt {

struct GradcheckEntry {
  std::string component;
  std::string kind;  // "primitive", "module" or "model"
  double max_rel_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_rel_error < tolerance; }
};

struct GradcheckOptions {
  /// Seeds per primitive; modules and the model use the first.
  std::size_t seeds = 20;
  std::uint64_t base_seed = 1;
  double h = 1e-5;
  double primitive_tolerance = 1e-6;
  double model_tolerance = 1e-5;
};

/// d=8, N_h=2, N_x=1, N_l=2, n_x=4, L=3.
ModelConfig tiny_model_config();

/// Checks every differentiable primitive, each attention/block module, the
/// loss, and the full model's total_loss. Model entries appear once per
/// parameter group ("model.backbone", "model.encoder", "model.decoder").
std::vector<GradcheckEntry> run_gradcheck_suite(const ModelConfig& cfg, const GradcheckOptions& options = {});

nlohmann::json gradcheck_report(const std::vector<GradcheckEntry>& entries);

}  // namespace mlt
