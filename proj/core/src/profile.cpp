#include "oseg/profile.hpp"

#include "json.hpp"

namespace oseg {

namespace {

struct Shape {
  int64_t c, h, w;
  int64_t elems() const { return c * h * w; }
};

struct Accounting {
  int64_t params = 0;
  int64_t flops = 0;
};

[[noreturn]] void reject(size_t layer, const std::string& why) {
  fail("profile: layer " + std::to_string(layer) + ": " + why);
}

void apply_conv(const ConvSpec& l, Shape& s, Accounting& acc, size_t idx) {
  if (l.out_channels < 1 || l.kernel < 1 || l.stride < 1 || l.pad < 0)
    reject(idx, "bad conv geometry");
  if (l.kernel > s.h + 2 * l.pad || l.kernel > s.w + 2 * l.pad)
    reject(idx, "kernel larger than padded input");
  const int64_t oh = (s.h + 2 * l.pad - l.kernel) / l.stride + 1;
  const int64_t ow = (s.w + 2 * l.pad - l.kernel) / l.stride + 1;
  const int64_t k2 = static_cast<int64_t>(l.kernel) * l.kernel;
  acc.params += l.out_channels * s.c * k2 + (l.bias ? l.out_channels : 0);
  acc.flops += 2 * k2 * s.c * l.out_channels * oh * ow + (l.bias ? l.out_channels * oh * ow : 0);
  s = {l.out_channels, oh, ow};
}

void apply_dense(const DenseSpec& l, Shape& s, Accounting& acc, size_t idx) {
  if (l.in < 1 || l.out < 1) reject(idx, "bad dense extents");
  if (s.elems() != l.in) reject(idx, "dense input does not match chained shape");
  acc.params += static_cast<int64_t>(l.in) * l.out + (l.bias ? l.out : 0);
  acc.flops += 2ll * l.in * l.out + (l.bias ? l.out : 0);
  s = {l.out, 1, 1};
}

void apply_pool(const PoolSpec& l, Shape& s, Accounting& acc) {
  acc.flops += s.elems();  // one op per input element
  if (l.op == PoolOp::global_avg || l.op == PoolOp::global_max)
    s = {s.c, 1, 1};
  else
    s = {1, s.h, s.w};
}

void apply_cbam(const CbamSpec& l, const Shape& s, Accounting& acc, size_t idx, bool acts) {
  if (l.kernel < 1 || l.kernel % 2 == 0) reject(idx, "cbam kernel must be odd");
  const int64_t c = s.c;
  const int64_t r = std::min<int64_t>(l.reduction, c);
  if (r < 1 || c % r != 0) reject(idx, "cbam reduction does not divide channels");
  const int64_t hidden = c / r;
  const int64_t hw = s.h * s.w;
  const int64_t k2 = static_cast<int64_t>(l.kernel) * l.kernel;

  acc.params += 2 * c * hidden + 2 * k2 + 1;

  // CAM: both global pools, the shared MLP twice, add, gate multiply
  acc.flops += 2 * c * hw;                 // avg + max pool
  acc.flops += 2 * (2 * c * hidden * 2);   // two dense layers, applied twice
  if (acts) acc.flops += 2 * hidden;       // relu in each MLP pass
  acc.flops += c;                          // summing the two paths
  if (acts) acc.flops += c;                // sigmoid
  acc.flops += c * hw;                     // channel gate

  // SAM: channel pools, kxk conv over the 2-channel stack, gate multiply
  acc.flops += 2 * c * hw;                 // channel avg + max
  acc.flops += 2 * k2 * 2 * hw + hw;       // conv + bias
  if (acts) acc.flops += hw;               // sigmoid
  acc.flops += c * hw;                     // spatial gate
}

void apply_head(const HeadSpec& l, const Shape& s, Accounting& acc, size_t idx, bool acts) {
  if (l.num_classes < 1 || l.prototypes < 1 || l.proto_hidden < 1 || l.proto_in_channels < 1 ||
      l.proto_res < 1)
    reject(idx, "bad head extents");
  const int64_t cells_out = 5 + l.num_classes + l.prototypes;
  acc.params += cells_out * s.c + cells_out;
  acc.flops += 2 * s.c * cells_out * s.h * s.w + cells_out * s.h * s.w;

  const int64_t pr2 = static_cast<int64_t>(l.proto_res) * l.proto_res;
  acc.params += static_cast<int64_t>(l.proto_hidden) * l.proto_in_channels * 9 + l.proto_hidden;
  acc.flops += 2 * 9ll * l.proto_in_channels * l.proto_hidden * pr2 + l.proto_hidden * pr2;
  if (acts) acc.flops += l.proto_hidden * pr2;  // relu
  acc.params += static_cast<int64_t>(l.prototypes) * l.proto_hidden + l.prototypes;
  acc.flops += 2ll * l.proto_hidden * l.prototypes * pr2 + l.prototypes * pr2;
}

}  // namespace

ProfileResult profile(std::span<const LayerSpec> graph, std::array<int, 3> input_shape,
                      const ProfileOptions& opts) {
  require(input_shape[0] >= 1 && input_shape[1] >= 1 && input_shape[2] >= 1,
          "profile: input shape extents must be positive");
  Shape s{input_shape[0], input_shape[1], input_shape[2]};
  Accounting acc;
  for (size_t i = 0; i < graph.size(); ++i) {
    const LayerSpec& layer = graph[i];
    if (const auto* conv = std::get_if<ConvSpec>(&layer)) {
      apply_conv(*conv, s, acc, i);
    } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      apply_dense(*d, s, acc, i);
    } else if (const auto* p = std::get_if<PoolSpec>(&layer)) {
      apply_pool(*p, s, acc);
    } else if (std::get_if<ActivationSpec>(&layer)) {
      if (opts.count_activations) acc.flops += s.elems();
    } else if (const auto* cb = std::get_if<CbamSpec>(&layer)) {
      apply_cbam(*cb, s, acc, i, opts.count_activations);  // shape preserved
    } else if (const auto* hd = std::get_if<HeadSpec>(&layer)) {
      apply_head(*hd, s, acc, i, opts.count_activations);  // terminal, shape kept
    }
  }
  ProfileResult result;
  result.layers = static_cast<int>(graph.size());
  result.params = acc.params;
  result.flops = acc.flops;
  result.gflops = static_cast<double>(acc.flops) / 1e9;
  result.convention = std::string("mac=2flops,activations=") +
                      (opts.count_activations ? "counted" : "excluded");
  return result;
}

std::vector<LayerSpec> layers_from_config(const NetConfig& cfg) {
  cfg.validate();
  std::vector<LayerSpec> layers;
  for (int b = 0; b < cfg.blocks(); ++b) {
    layers.push_back(ConvSpec{cfg.channels[static_cast<size_t>(b)], 3, 2, 1, true});
    layers.push_back(ActivationSpec{});
    if (cfg.cbam) layers.push_back(CbamSpec{cfg.cbam_reduction_at(b), cfg.cbam_kernel_at(b)});
  }
  HeadSpec head;
  head.num_classes = cfg.num_classes;
  head.prototypes = cfg.prototypes;
  head.proto_hidden = cfg.proto_hidden;
  head.proto_in_channels = cfg.channels[static_cast<size_t>(cfg.proto_block())];
  head.proto_res = cfg.proto_res;
  layers.push_back(head);
  return layers;
}

std::string profile_to_json(const ProfileResult& result) {
  nlohmann::json j;
  j["layers"] = result.layers;
  j["params"] = result.params;
  j["flops"] = result.flops;
  j["gflops"] = result.gflops;
  j["convention"] = result.convention;
  return j.dump(2);
}

}  // namespace oseg
