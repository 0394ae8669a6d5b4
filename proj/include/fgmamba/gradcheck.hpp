#pragma once

#include "fgmamba/model.hpp"

namespace fgmamba {

// Double-precision central-difference verification of the full backward pass
// over a small model instance. Per element, the reported figure is
//   |analytic - numeric| / (1e-3 + max(|analytic|, |numeric|))
// and a parameter group passes when its maximum stays below the threshold.
struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  int64_t elements = 0;
  std::string worst_param;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double threshold = 1e-3;

  bool ok() const {
    for (const auto& g : groups)
      if (!(g.max_rel_err < threshold)) return false;
    return true;
  }
};

struct GradCheckOptions {
  ModelConfig config = ModelConfig::preset("tiny");
  uint64_t seed = 11;     // chosen so no frequency-mask bin sits near its threshold
  int64_t input_hw = 8;
  double fd_step = 1e-5;
  double threshold = 1e-3;
};

GradCheckReport run_model_gradcheck(const GradCheckOptions& opts = {});

// Group label for a parameter name: conv, layer_norm, s6, gau, or scalars.
std::string gradcheck_group_of(const std::string& param_name);

// The check matrix printed by the CLI --list flag.
std::vector<std::string> gradcheck_matrix();

}  // namespace fgmamba
