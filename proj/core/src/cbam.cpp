#include "oseg/cbam.hpp"

#include <cmath>
#include <string>

namespace oseg {

namespace {

Tensor kaiming_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

CbamParams CbamParams::create(int channels, int reduction, int kernel, Rng& rng) {
  require(channels >= 1, "cbam: channels must be positive");
  require(reduction >= 1, "cbam: reduction must be positive");
  require(kernel >= 1 && kernel % 2 == 1, "cbam: spatial kernel must be odd, got " + std::to_string(kernel));
  CbamParams p;
  p.channels = channels;
  p.reduction = std::min(reduction, channels);  // hidden width >= 1
  require(channels % p.reduction == 0, "cbam: reduction " + std::to_string(p.reduction) +
                                           " does not divide channels " + std::to_string(channels));
  p.kernel = kernel;
  const int hidden = channels / p.reduction;
  p.mlp_w1 = Parameter(kaiming_uniform({hidden, channels}, channels, rng));
  p.mlp_w2 = Parameter(kaiming_uniform({channels, hidden}, hidden, rng));
  p.sam_w = Parameter(kaiming_uniform({1, 2, kernel, kernel}, 2 * kernel * kernel, rng));
  p.sam_b = Parameter(Tensor({1}));
  return p;
}

int64_t CbamParams::parameter_count() const {
  return cbam_parameter_count(channels, reduction, kernel);
}

std::vector<Parameter*> CbamParams::parameters() {
  return {&mlp_w1, &mlp_w2, &sam_w, &sam_b};
}

int64_t cbam_parameter_count(int channels, int reduction, int kernel) {
  return 2 * (static_cast<int64_t>(channels) * channels / reduction) +
         2 * static_cast<int64_t>(kernel) * kernel + 1;
}

Var channel_attention(const Var& f, const CbamParams& p) {
  require(f->value.ndim() == 3, "channel_attention: expected [C,H,W]");
  require(f->value.shape[0] == p.channels,
          "channel_attention: channel count " + std::to_string(f->value.shape[0]) +
              " does not match params (" + std::to_string(p.channels) + ")");
  Var avg = mlp_forward(global_pool(f, PoolMode::avg), p.mlp_w1, p.mlp_w2);
  Var mx = mlp_forward(global_pool(f, PoolMode::max), p.mlp_w1, p.mlp_w2);
  return sigmoid(add(avg, mx));
}

Var spatial_attention(const Var& f, const CbamParams& p) {
  require(f->value.ndim() == 3, "spatial_attention: expected [C,H,W]");
  Var cat = concat_channels(channel_pool(f, PoolMode::avg), channel_pool(f, PoolMode::max));
  return sigmoid(conv2d(cat, p.sam_w.var(), p.sam_b.var(), 1, (p.kernel - 1) / 2));
}

CbamOut cbam_forward(const Var& f, const CbamParams& p) {
  Var mc = channel_attention(f, p);
  Var refined_c = mul_channel(f, mc);
  Var ms = spatial_attention(refined_c, p);
  return {mul_spatial(refined_c, ms), mc, ms};
}

std::pair<Tensor, AttentionPair> cbam_forward_values(const Tensor& f, const CbamParams& p) {
  CbamOut out = cbam_forward(constant(f), p);
  return {out.refined->value, AttentionPair{out.channel->value, out.spatial->value}};
}

}  // namespace oseg
