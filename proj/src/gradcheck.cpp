#include "fgmamba/gradcheck.hpp"

#include <cmath>

namespace fgmamba {

std::string gradcheck_group_of(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    std::string s(suffix);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  if (ends_with(".gamma1") || ends_with(".gamma2") || ends_with(".gamma") ||
      ends_with(".alpha1") || ends_with(".alpha2") || ends_with(".alpha4"))
    return "scalars";
  if (name.find(".gau.") != std::string::npos) return "gau";
  if (name.find(".vssm.dir") != std::string::npos) return "s6";
  if (name.find(".norm") != std::string::npos) return "layer_norm";
  return "conv";  // conv kernels plus the channel-attention FC weights
}

std::vector<std::string> gradcheck_matrix() {
  return {
      "conv        head/tail 3x3, gasm 3x3, vssm 1x1/depthwise, pffm fuse, attention FCs",
      "layer_norm  per-gasm norm gains and biases",
      "s6          per-direction delta/b/c projections, a_log, d_skip, delta_bias",
      "gau         channel+spatial attention and the three sigmoid gates",
      "scalars     gamma1/gamma2 residual scales, pffm alpha_s and gamma",
  };
}

GradCheckReport run_model_gradcheck(const GradCheckOptions& opts) {
  ModelConfig cfg = opts.config;
  cfg.validate();
  FgMamba<double> model(cfg, opts.seed);
  Rng rng(opts.seed + 1);
  Tensor<double> input =
      Tensor<double>::uniform({1, cfg.in_channels, opts.input_hw, opts.input_hw}, rng, 0.0, 1.0);
  int64_t out_hw = opts.input_hw * cfg.scale;
  Tensor<double> probe = Tensor<double>::uniform(
      {1, cfg.in_channels, out_hw, out_hw}, rng, -1.0, 1.0);

  auto loss_value = [&]() {
    Tensor<double> out = model.forward(input);
    return sum_all(mul(out, probe)).item();
  };

  // Analytic gradients for every parameter in one backward pass.
  std::vector<std::pair<std::string, Tensor<double>*>> params;
  model.for_each_param(
      [&](const std::string& name, Tensor<double>& t) { params.emplace_back(name, &t); });
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> out = model.forward(input);
    Tensor<double> loss = sum_all(mul(out, probe));
    tape.backward(loss);
  }

  GradCheckReport report;
  report.threshold = opts.threshold;
  auto group_index = [&](const std::string& group) -> GradCheckGroup& {
    for (auto& g : report.groups)
      if (g.name == group) return g;
    report.groups.push_back({group, 0.0, 0, ""});
    return report.groups.back();
  };
  // stable group order
  for (const char* g : {"conv", "layer_norm", "s6", "gau", "scalars"}) group_index(g);

  for (auto& [name, param] : params) {
    FGM_CHECK(param->has_grad(), "gradcheck: parameter missed by backward: " + name);
    std::vector<double> analytic(param->grad().begin(), param->grad().end());
    GradCheckGroup& group = group_index(gradcheck_group_of(name));
    auto theta = param->data();
    for (size_t i = 0; i < theta.size(); ++i) {
      double original = theta[i];
      double h = opts.fd_step * std::max(1.0, std::abs(original));
      theta[i] = original + h;
      double up = loss_value();
      theta[i] = original - h;
      double down = loss_value();
      theta[i] = original;
      double numeric = (up - down) / (2.0 * h);
      double err = std::abs(analytic[i] - numeric) /
                   (1e-3 + std::max(std::abs(analytic[i]), std::abs(numeric)));
      if (err > group.max_rel_err) {
        group.max_rel_err = err;
        group.worst_param = name;
      }
      ++group.elements;
    }
    param->drop_grad();
  }
  return report;
}

}  // namespace fgmamba
