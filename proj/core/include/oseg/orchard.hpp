#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "oseg/dataio.hpp"
#include "oseg/tensor.hpp"

namespace oseg {

struct IntRange {
  int lo = 0, hi = 0;
};
struct RealRange {
  double lo = 0.0, hi = 0.0;
};

/// Procedural two-season scene recipe. Trunks are near-vertical quads,
/// branches thin quads attached to a trunk; canopy scenes overlay blob
/// occluders that paint over pixels without touching the labels.
struct SceneSpec {
  Season season = Season::dormant;
  IntRange trunks{1, 3};
  IntRange branches{2, 5};
  RealRange trunk_width{0.11, 0.16};
  RealRange branch_thickness{0.065, 0.095};
  RealRange branch_angle_deg{20.0, 45.0};  // from horizontal, both sides
  RealRange branch_length{0.28, 0.42};
  IntRange occluders{3, 7};
  RealRange occluder_radius{0.05, 0.10};
  std::array<double, 3> dormant_bg{0.63, 0.65, 0.69};
  std::array<double, 3> canopy_bg{0.33, 0.50, 0.27};
  double noise = 0.012;
  int image_size = 96;

  void validate() const;
};

struct Scene {
  Tensor image;  // [3,S,S]
  std::vector<InstanceRecord> instances;
  int occluders = 0;  // foliage blobs painted (canopy only)
};

/// Deterministic per (spec, seed). Every instance polygon is simple, lives in
/// [0,1]^2 and covers >= 1% of the image before occlusion.
Scene generate_scene(const SceneSpec& spec, uint64_t seed);

/// Writes n scenes (floor(n*canopy_fraction) canopy, remainder dormant) plus
/// labels under out_dir and returns the manifest with 8:1:1 splits assigned.
Manifest generate_dataset(int n, double canopy_fraction, uint64_t seed, const std::string& out_dir,
                          const SceneSpec& base = SceneSpec{});

/// Season plan used by generate_dataset: canopy first, then dormant.
int canopy_count(int n, double canopy_fraction);

}  // namespace oseg
