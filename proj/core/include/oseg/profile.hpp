#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "oseg/net.hpp"

namespace oseg {

// Static layer graph for parameter/FLOP accounting. Convention: one
// multiply-accumulate counts as 2 FLOPs; pooling and activations cost one op
// per element (toggleable).

struct ConvSpec {
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  bool bias = true;
};

struct DenseSpec {
  int in = 0, out = 0;
  bool bias = false;
};

enum class PoolOp { global_avg, global_max, channel_avg, channel_max };
struct PoolSpec {
  PoolOp op = PoolOp::global_avg;
};

struct ActivationSpec {};

struct CbamSpec {
  int reduction = 16;  // clamped to channels like the live block
  int kernel = 7;
};

/// Composite detection/mask head: a 1x1 cell conv over the final feature map
/// plus the two-conv prototype branch reading `proto_in_channels` at
/// `proto_res`. Terminal layer; it does not change the chained shape.
struct HeadSpec {
  int num_classes = 2;
  int prototypes = 8;
  int proto_hidden = 16;
  int proto_in_channels = 0;
  int proto_res = 0;
};

using LayerSpec = std::variant<ConvSpec, DenseSpec, PoolSpec, ActivationSpec, CbamSpec, HeadSpec>;

struct ProfileResult {
  int layers = 0;
  int64_t params = 0;
  int64_t flops = 0;
  double gflops = 0.0;  // flops / 1e9 exactly
  std::string convention;
};

struct ProfileOptions {
  bool count_activations = true;
};

/// Walks the graph, checking shape consistency layer by layer. Input shape is
/// [C,H,W]; dense layers consume the flattened count.
ProfileResult profile(std::span<const LayerSpec> graph, std::array<int, 3> input_shape,
                      const ProfileOptions& opts = {});

/// The mini segmenter expressed as a layer graph; profile() of this matches
/// the live parameter census exactly.
std::vector<LayerSpec> layers_from_config(const NetConfig& cfg);

std::string profile_to_json(const ProfileResult& result);

}  // namespace oseg
