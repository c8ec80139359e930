#pragma once

#include "oseg/autodiff.hpp"
#include "oseg/rng.hpp"

namespace oseg {

/// Channel-then-spatial attention block. The channel MLP is shared between
/// the avg- and max-pooled paths and carries no biases; the spatial conv has
/// one. Reduction is clamped so the hidden width never drops below 1.
struct CbamParams {
  int channels = 0;
  int reduction = 16;  // effective value after clamping to channels
  int kernel = 7;      // odd; padding (kernel-1)/2 keeps spatial extents
  Parameter mlp_w1;    // [channels/reduction, channels]
  Parameter mlp_w2;    // [channels, channels/reduction]
  Parameter sam_w;     // [1, 2, kernel, kernel]
  Parameter sam_b;     // [1]

  static CbamParams create(int channels, int reduction, int kernel, Rng& rng);
  int hidden() const { return channels / reduction; }
  int64_t parameter_count() const;
  std::vector<Parameter*> parameters();
};

/// Per-block CBAM parameter count: 2*C^2/r + 2*k^2 + 1.
int64_t cbam_parameter_count(int channels, int reduction, int kernel);

struct AttentionPair {
  Tensor channel;  // [C], values in (0,1)
  Tensor spatial;  // [1,H,W], values in (0,1)
};

Var channel_attention(const Var& f, const CbamParams& p);  // -> [C]
Var spatial_attention(const Var& f, const CbamParams& p);  // -> [1,H,W]

struct CbamOut {
  Var refined;  // F'' = (F (.) Mc) (.) Ms
  Var channel;
  Var spatial;
};
CbamOut cbam_forward(const Var& f, const CbamParams& p);

/// Tensor-level convenience for inspection and tests.
std::pair<Tensor, AttentionPair> cbam_forward_values(const Tensor& f, const CbamParams& p);

}  // namespace oseg
