#include "fgmamba/model.hpp"

#include <cassert>

namespace fgmamba {

void ModelConfig::validate() const {
  FGM_CHECK(channels >= kCaReduction, "config: channels below channel-attention reduction");
  FGM_CHECK(n_fgblocks >= 0, "config: negative block count");
  FGM_CHECK(n_fgblocks == 0 || n_gasm_per_block >= 1, "config: blocks need at least one GASM");
  FGM_CHECK(scale == 2 || scale == 3 || scale == 4, "config: scale must be one of {2, 3, 4}");
  FGM_CHECK(state_dim >= 1, "config: state_dim must be >= 1");
  FGM_CHECK(expansion >= 1, "config: expansion must be >= 1");
  FGM_CHECK(in_channels == 1 || in_channels == 3, "config: in_channels must be 1 or 3");
}

ModelConfig ModelConfig::preset(const std::string& name) {
  ModelConfig cfg;
  if (name == "paper") {
    // Tuned so the total parameter count lands in [700000, 750000]; the sweep
    // is documented in the README.
    cfg.channels = 36;
    cfg.n_fgblocks = 2;
    cfg.n_gasm_per_block = 5;
    cfg.scale = 2;
    cfg.state_dim = 8;
    cfg.expansion = 2;
  } else if (name == "desk") {
    cfg.channels = 16;
    cfg.n_fgblocks = 2;
    cfg.n_gasm_per_block = 2;
    cfg.scale = 2;
    cfg.state_dim = 8;
    cfg.expansion = 2;
  } else if (name == "tiny") {
    cfg.channels = 8;
    cfg.n_fgblocks = 1;
    cfg.n_gasm_per_block = 1;
    cfg.scale = 2;
    cfg.state_dim = 4;
    cfg.expansion = 2;
  } else {
    fail("unknown preset '" + name + "' (expected paper, desk, or tiny)");
  }
  return cfg;
}

template <typename T>
GasmParams<T> GasmParams<T>::create(const ModelConfig& cfg, Rng& rng) {
  GasmParams p;
  int64_t c = cfg.channels;
  p.norm1 = LayerNormParams<T>::create(c);
  p.vssm = Vssm2d<T>::create(c, cfg.state_dim, cfg.expansion, rng);
  if (cfg.use_gau)
    p.gau = GauParams<T>::create(c, ModelConfig::kCaReduction, ModelConfig::kSpatialKernel, rng);
  p.norm2 = LayerNormParams<T>::create(c);
  p.conv_a = ConvParams<T>::create(c, c, 3, rng, 1, 1);
  p.ca_tail = ChannelAttentionParams<T>::create(c, ModelConfig::kCaReduction, rng);
  p.conv_b = ConvParams<T>::create(c, c, 3, rng, 1, 1);
  p.gamma1 = Tensor<T>::scalar(T(1)).set_requires_grad(true);
  p.gamma2 = Tensor<T>::scalar(T(1)).set_requires_grad(true);
  return p;
}

template <typename T>
PffmParams<T> PffmParams<T>::create(const ModelConfig& cfg, Rng& rng) {
  PffmParams p;
  p.alpha1 = Tensor<T>::scalar(T(1)).set_requires_grad(true);
  p.alpha2 = Tensor<T>::scalar(T(1)).set_requires_grad(true);
  p.alpha4 = Tensor<T>::scalar(T(1)).set_requires_grad(true);
  // PFFM starts as a gentle residual
  p.gamma = Tensor<T>::scalar(T(0.1)).set_requires_grad(true);
  p.fuse = ConvParams<T>::create(cfg.channels, 3 * cfg.channels, 1, rng, 1, 0,
                                 cfg.fusion_groups());
  return p;
}

template <typename T>
FgBlockParams<T> FgBlockParams<T>::create(const ModelConfig& cfg, Rng& rng) {
  FgBlockParams p;
  p.gasms.reserve(static_cast<size_t>(cfg.n_gasm_per_block));
  for (int64_t i = 0; i < cfg.n_gasm_per_block; ++i) p.gasms.push_back(GasmParams<T>::create(cfg, rng));
  if (cfg.use_pffm) p.pffm = PffmParams<T>::create(cfg, rng);
  return p;
}

template <typename T>
Tensor<T> gasm_forward(const Tensor<T>& x, const GasmParams<T>& p) {
  Tensor<T> normed = layer_norm(x, p.norm1, ModelConfig::kNormEps);
  Tensor<T> branches = p.vssm.forward(normed);
  if (p.gau) branches = add(branches, gau_forward(normed, *p.gau));
  Tensor<T> f_add = add(branches, mul(x, p.gamma1));
  Tensor<T> f_conv = conv2d(layer_norm(f_add, p.norm2, ModelConfig::kNormEps), p.conv_a);
  Tensor<T> attended = channel_attention_block(f_conv, p.ca_tail);
  return conv2d(add(attended, mul(x, p.gamma2)), p.conv_b);
}

template <typename T>
Tensor<T> pffm_forward(const Tensor<T>& x, const PffmParams<T>& p) {
  FGM_CHECK(x.rank() == 4, "pffm_forward expects BCHW");
  int64_t h = x.size(2), w = x.size(3);
  std::vector<Tensor<T>> pyramid;
  pyramid.reserve(3);
  const std::pair<int64_t, const Tensor<T>*> scales[] = {
      {1, &p.alpha1}, {2, &p.alpha2}, {4, &p.alpha4}};
  for (auto [s, alpha] : scales) {
    Tensor<T> level = (s == 1) ? x : avg_pool2d(x, s);
    Tensor<T> high = highfreq_extract(level);
    if (s != 1) high = crop2d(upsample_nearest(high, s), h, w);
    pyramid.push_back(mul(high, *alpha));
  }
  Tensor<T> fused = conv2d(concat_channels(pyramid), p.fuse);
  return mul(fused, p.gamma);
}

template <typename T>
Tensor<T> fgblock_forward(const Tensor<T>& x, const FgBlockParams<T>& p) {
  Tensor<T> cur = x;
  for (const auto& g : p.gasms) cur = gasm_forward(cur, g);
  if (p.pffm) cur = add(cur, pffm_forward(cur, *p.pffm));
  return add(cur, x);
}

template <typename T>
FgMamba<T>::FgMamba(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  head_ = ConvParams<T>::create(cfg_.channels, cfg_.in_channels, 3, rng, 1, 1);
  blocks_.reserve(static_cast<size_t>(cfg_.n_fgblocks));
  for (int64_t i = 0; i < cfg_.n_fgblocks; ++i)
    blocks_.push_back(FgBlockParams<T>::create(cfg_, rng));
  tail_up_ = ConvParams<T>::create(cfg_.channels * cfg_.scale * cfg_.scale, cfg_.channels, 3,
                                   rng, 1, 1);
  tail_out_ = ConvParams<T>::create(cfg_.in_channels, cfg_.channels, 3, rng, 1, 1);
}

template <typename T>
Tensor<T> FgMamba<T>::forward(const Tensor<T>& x) const {
  FGM_CHECK(x.rank() == 4, "model forward expects BCHW input");
  FGM_CHECK(x.size(1) == cfg_.in_channels, "model forward: input channel mismatch");
  FGM_CHECK(x.size(2) >= 8 && x.size(3) >= 8, "model forward: spatial extents must be >= 8");
  Tensor<T> shallow = conv2d(x, head_);
  Tensor<T> cur = shallow;
  for (const auto& block : blocks_) {
    cur = fgblock_forward(cur, block);
#ifndef NDEBUG
    FGM_CHECK(cur.all_finite(), "non-finite values in FGBlock output");
#endif
  }
  Tensor<T> f_final = add(cur, shallow);
  Tensor<T> expanded = conv2d(f_final, tail_up_);
  return conv2d(pixel_shuffle(expanded, cfg_.scale), tail_out_);
}

namespace {

template <typename T>
void visit_conv(ConvParams<T>& p, const std::string& prefix,
                const typename FgMamba<T>::ParamFn& fn) {
  fn(prefix + ".weight", p.weight);
  fn(prefix + ".bias", p.bias);
}

template <typename T>
void visit_linear(LinearParams<T>& p, const std::string& prefix,
                  const typename FgMamba<T>::ParamFn& fn) {
  fn(prefix + ".weight", p.weight);
  if (p.bias.defined()) fn(prefix + ".bias", p.bias);
}

template <typename T>
void visit_norm(LayerNormParams<T>& p, const std::string& prefix,
                const typename FgMamba<T>::ParamFn& fn) {
  fn(prefix + ".gain", p.gain);
  fn(prefix + ".bias", p.bias);
}

template <typename T>
void visit_ca(ChannelAttentionParams<T>& p, const std::string& prefix,
              const typename FgMamba<T>::ParamFn& fn) {
  visit_linear<T>(p.fc1, prefix + ".fc1", fn);
  visit_linear<T>(p.fc2, prefix + ".fc2", fn);
}

template <typename T>
void visit_s6(S6Params<T>& p, const std::string& prefix,
              const typename FgMamba<T>::ParamFn& fn) {
  fn(prefix + ".delta_w", p.delta_w);
  fn(prefix + ".delta_bias", p.delta_bias);
  fn(prefix + ".b_w", p.b_w);
  fn(prefix + ".c_w", p.c_w);
  fn(prefix + ".a_log", p.a_log);
  fn(prefix + ".d_skip", p.d_skip);
}

template <typename T>
void visit_gasm(GasmParams<T>& p, const std::string& prefix,
                const typename FgMamba<T>::ParamFn& fn) {
  visit_norm<T>(p.norm1, prefix + ".norm1", fn);
  visit_conv<T>(p.vssm.in_proj, prefix + ".vssm.in_proj", fn);
  visit_conv<T>(p.vssm.dw_conv, prefix + ".vssm.dw_conv", fn);
  for (int i = 0; i < 4; ++i)
    visit_s6<T>(p.vssm.dirs[i], prefix + ".vssm.dir" + std::to_string(i), fn);
  visit_conv<T>(p.vssm.out_proj, prefix + ".vssm.out_proj", fn);
  if (p.gau) {
    visit_ca<T>(p.gau->ca, prefix + ".gau.ca", fn);
    visit_conv<T>(p.gau->sa.conv, prefix + ".gau.sa.conv", fn);
    visit_conv<T>(p.gau->gate1, prefix + ".gau.gate1", fn);
    visit_conv<T>(p.gau->gate2, prefix + ".gau.gate2", fn);
    visit_conv<T>(p.gau->gate3, prefix + ".gau.gate3", fn);
  }
  visit_norm<T>(p.norm2, prefix + ".norm2", fn);
  visit_conv<T>(p.conv_a, prefix + ".conv_a", fn);
  visit_ca<T>(p.ca_tail, prefix + ".ca_tail", fn);
  visit_conv<T>(p.conv_b, prefix + ".conv_b", fn);
  fn(prefix + ".gamma1", p.gamma1);
  fn(prefix + ".gamma2", p.gamma2);
}

}  // namespace

template <typename T>
void FgMamba<T>::for_each_param(const ParamFn& fn) {
  visit_conv<T>(head_, "head", fn);
  for (size_t b = 0; b < blocks_.size(); ++b) {
    std::string bp = "block" + std::to_string(b);
    for (size_t g = 0; g < blocks_[b].gasms.size(); ++g)
      visit_gasm<T>(blocks_[b].gasms[g], bp + ".gasm" + std::to_string(g), fn);
    if (blocks_[b].pffm) {
      auto& pf = *blocks_[b].pffm;
      fn(bp + ".pffm.alpha1", pf.alpha1);
      fn(bp + ".pffm.alpha2", pf.alpha2);
      fn(bp + ".pffm.alpha4", pf.alpha4);
      fn(bp + ".pffm.gamma", pf.gamma);
      visit_conv<T>(pf.fuse, bp + ".pffm.fuse", fn);
    }
  }
  visit_conv<T>(tail_up_, "tail_up", fn);
  visit_conv<T>(tail_out_, "tail_out", fn);
}

template <typename T>
std::vector<std::string> FgMamba<T>::param_names() {
  std::vector<std::string> names;
  for_each_param([&](const std::string& name, Tensor<T>&) { names.push_back(name); });
  return names;
}

template <typename T>
int64_t FgMamba<T>::param_count() {
  int64_t total = 0;
  for_each_param([&](const std::string&, Tensor<T>& t) { total += t.numel(); });
  return total;
}

template <typename T>
void FgMamba<T>::drop_grads() {
  for_each_param([](const std::string&, Tensor<T>& t) { t.drop_grad(); });
}

int64_t param_count(const ModelConfig& cfg) {
  FgMamba<float> model(cfg, 0);
  return model.param_count();
}

std::vector<std::pair<std::string, int64_t>> param_count_by_module(const ModelConfig& cfg) {
  FgMamba<float> model(cfg, 0);
  std::vector<std::pair<std::string, int64_t>> groups{
      {"head", 0}, {"vssm", 0}, {"gau", 0}, {"gasm_other", 0}, {"pffm", 0}, {"tail", 0}};
  model.for_each_param([&](const std::string& name, Tensor<float>& t) {
    auto bump = [&](const std::string& key) {
      for (auto& [k, v] : groups)
        if (k == key) v += t.numel();
    };
    if (name.rfind("head", 0) == 0)
      bump("head");
    else if (name.rfind("tail", 0) == 0)
      bump("tail");
    else if (name.find(".vssm.") != std::string::npos)
      bump("vssm");
    else if (name.find(".gau.") != std::string::npos)
      bump("gau");
    else if (name.find(".pffm.") != std::string::npos)
      bump("pffm");
    else
      bump("gasm_other");
  });
  return groups;
}

#define FGM_INSTANTIATE_MODEL(T)                                                 \
  template struct GasmParams<T>;                                                 \
  template struct PffmParams<T>;                                                 \
  template struct FgBlockParams<T>;                                              \
  template class FgMamba<T>;                                                     \
  template Tensor<T> gasm_forward<T>(const Tensor<T>&, const GasmParams<T>&);    \
  template Tensor<T> pffm_forward<T>(const Tensor<T>&, const PffmParams<T>&);    \
  template Tensor<T> fgblock_forward<T>(const Tensor<T>&, const FgBlockParams<T>&);

FGM_INSTANTIATE_MODEL(float)
FGM_INSTANTIATE_MODEL(double)
#undef FGM_INSTANTIATE_MODEL

}  // namespace fgmamba
