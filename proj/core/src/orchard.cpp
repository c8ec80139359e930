#include "oseg/orchard.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oseg/image.hpp"
#include "oseg/rng.hpp"

namespace fs = std::filesystem;

namespace oseg {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMinInstanceArea = 0.01;  // of the image, before occlusion

void check_range(const IntRange& r, const char* name) {
  require(r.lo >= 0 && r.hi >= r.lo, std::string("scene spec: bad range for ") + name);
}

void check_range01(const RealRange& r, const char* name) {
  require(r.lo >= 0.0 && r.hi >= r.lo && r.hi <= 1.0, std::string("scene spec: range for ") + name +
                                                          " must stay within [0,1]");
}

struct Rgb {
  double r, g, b;
};

void paint_polygon(Tensor& img, const Polygon& poly, const Rgb& color) {
  const int s = img.shape[1];
  const int64_t plane = static_cast<int64_t>(s) * s;
  Bitmask m = rasterize(poly, s, s);
  for (int64_t i = 0; i < plane; ++i) {
    if (!m.v[static_cast<size_t>(i)]) continue;
    img[i] = color.r;
    img[plane + i] = color.g;
    img[2 * plane + i] = color.b;
  }
}

void paint_ellipse(Tensor& img, double cx, double cy, double rx, double ry, const Rgb& color) {
  const int s = img.shape[1];
  const int64_t plane = static_cast<int64_t>(s) * s;
  for (int r = 0; r < s; ++r) {
    const double y = (r + 0.5) / s;
    for (int c = 0; c < s; ++c) {
      const double x = (c + 0.5) / s;
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      if (dx * dx + dy * dy > 1.0) continue;
      const int64_t i = static_cast<int64_t>(r) * s + c;
      img[i] = color.r;
      img[plane + i] = color.g;
      img[2 * plane + i] = color.b;
    }
  }
}

// Rectangle around the segment (x0,y0)-(x1,y1) with the given half width.
Polygon oriented_quad(double x0, double y0, double x1, double y1, double half_w) {
  const double dx = x1 - x0, dy = y1 - y0;
  const double len = std::sqrt(dx * dx + dy * dy);
  const double nx = -dy / len * half_w, ny = dx / len * half_w;
  return {{x0 + nx, y0 + ny}, {x1 + nx, y1 + ny}, {x1 - nx, y1 - ny}, {x0 - nx, y0 - ny}};
}

struct TrunkGeom {
  Polygon poly;
  double base_x, top_x, base_y, top_y;  // centerline, for branch attachment
};

}  // namespace

void SceneSpec::validate() const {
  check_range(trunks, "trunks");
  check_range(branches, "branches");
  check_range(occluders, "occluders");
  check_range01(trunk_width, "trunk_width");
  check_range01(branch_thickness, "branch_thickness");
  check_range01(branch_length, "branch_length");
  check_range01(occluder_radius, "occluder_radius");
  require(branch_angle_deg.lo >= 0.0 && branch_angle_deg.hi <= 85.0 &&
              branch_angle_deg.hi >= branch_angle_deg.lo,
          "scene spec: branch angle range must lie in [0,85] degrees");
  require(noise >= 0.0 && noise <= 0.5, "scene spec: noise out of range");
  require(image_size >= 16, "scene spec: image too small");
  require(trunk_width.hi > 0.0 && trunk_width.lo * 0.8 * image_size >= 1.0,
          "scene spec: trunks thinner than one pixel cannot fit the image");
  require(trunks.hi >= 1, "scene spec: need room for at least one trunk");
}

Scene generate_scene(const SceneSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(mix_seed(seed, 0x0c4a2d));
  const int s = spec.image_size;

  Scene scene;
  scene.image = Tensor({3, s, s});
  const int64_t plane = static_cast<int64_t>(s) * s;

  // Background with a mild vertical gradient.
  const auto& bg = spec.season == Season::dormant ? spec.dormant_bg : spec.canopy_bg;
  const double bg_jig = rng.uniform(-0.03, 0.03);
  for (int r = 0; r < s; ++r) {
    const double shade = 1.0 + bg_jig + 0.08 * (static_cast<double>(r) / s - 0.5);
    for (int c = 0; c < s; ++c) {
      const int64_t i = static_cast<int64_t>(r) * s + c;
      scene.image[i] = std::clamp(bg[0] * shade, 0.0, 1.0);
      scene.image[plane + i] = std::clamp(bg[1] * shade, 0.0, 1.0);
      scene.image[2 * plane + i] = std::clamp(bg[2] * shade, 0.0, 1.0);
    }
  }

  // Trunks: near-vertical trapezoids spread across the frame.
  const int n_trunks = rng.uniform_int(spec.trunks.lo, spec.trunks.hi);
  const int n_branches = rng.uniform_int(spec.branches.lo, spec.branches.hi);
  std::vector<TrunkGeom> trunks;
  for (int t = 0; t < n_trunks; ++t) {
    const double slot = n_trunks > 0 ? (t + 0.5) / n_trunks : 0.5;
    TrunkGeom g;
    g.base_x = std::clamp(slot + rng.uniform(-0.10, 0.10), 0.12, 0.88);
    g.base_y = rng.uniform(0.92, 1.0);
    g.top_y = rng.uniform(0.02, 0.10);
    const double lean = std::tan(rng.uniform(-4.0, 4.0) * kPi / 180.0);
    g.top_x = std::clamp(g.base_x + lean * (g.base_y - g.top_y), 0.08, 0.92);
    const double w = rng.uniform(spec.trunk_width.lo, spec.trunk_width.hi);
    const double wt = w * rng.uniform(0.75, 0.95);  // slight taper to the top
    Polygon poly{{g.base_x - w / 2, g.base_y},
                 {g.base_x + w / 2, g.base_y},
                 {g.top_x + wt / 2, g.top_y},
                 {g.top_x - wt / 2, g.top_y}};
    poly = clip_polygon_unit(poly);
    require(poly.size() >= 3 && polygon_area(poly) >= kMinInstanceArea,
            "scene spec: trunk ranges cannot fit the image");
    trunks.push_back(g);
    trunks.back().poly = std::move(poly);
  }

  // Branches: thin quads leaving a trunk upward to a side.
  std::vector<InstanceRecord> branches;
  for (int b = 0; b < n_branches; ++b) {
    const TrunkGeom& host = trunks[static_cast<size_t>(rng.uniform_int(0, n_trunks - 1))];
    Polygon poly;
    for (int attempt = 0; attempt < 24; ++attempt) {
      const double along = rng.uniform(0.18, 0.8);
      const double ax = host.base_x + (host.top_x - host.base_x) * along;
      const double ay = host.base_y + (host.top_y - host.base_y) * along;
      const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
      const double ang = rng.uniform(spec.branch_angle_deg.lo, spec.branch_angle_deg.hi) * kPi / 180.0;
      const double len = rng.uniform(spec.branch_length.lo, spec.branch_length.hi) *
                         (1.0 - 0.12 * attempt / 24.0);
      const double th = rng.uniform(spec.branch_thickness.lo, spec.branch_thickness.hi);
      const double ex = ax + side * std::cos(ang) * len;
      const double ey = ay - std::sin(ang) * len;  // branches grow upward
      Polygon cand = oriented_quad(ax, ay, ex, ey, th / 2.0);
      cand = clip_polygon_unit(cand);
      if (cand.size() >= 3 && polygon_area(cand) >= kMinInstanceArea && polygon_is_simple(cand)) {
        poly = std::move(cand);
        break;
      }
    }
    require(!poly.empty(), "scene spec: branch ranges cannot fit the image");
    branches.push_back({kClassBranch, std::move(poly)});
  }

  // Paint trunks below branches; labels keep trunks first.
  for (const TrunkGeom& g : trunks) {
    const double tone = rng.uniform(-0.035, 0.035);
    paint_polygon(scene.image, g.poly, {0.34 + tone, 0.25 + tone, 0.17 + tone * 0.5});
    scene.instances.push_back({kClassTrunk, g.poly});
  }
  for (const InstanceRecord& br : branches) {
    const double tone = rng.uniform(-0.035, 0.035);
    paint_polygon(scene.image, br.polygon, {0.43 + tone, 0.33 + tone, 0.22 + tone * 0.5});
    scene.instances.push_back(br);
  }

  // Canopy foliage paints over everything; dormant scenes get none.
  if (spec.season == Season::canopy) {
    const int n_occ = std::max(1, rng.uniform_int(spec.occluders.lo, spec.occluders.hi));
    scene.occluders = n_occ;
    for (int o = 0; o < n_occ; ++o) {
      const double cx = rng.uniform(0.0, 1.0);
      const double cy = rng.uniform(0.0, 0.85);
      const double rx = rng.uniform(spec.occluder_radius.lo, spec.occluder_radius.hi);
      const double ry = rx * rng.uniform(0.7, 1.3);
      Rgb leaf{rng.uniform(0.18, 0.38), rng.uniform(0.45, 0.68), rng.uniform(0.16, 0.34)};
      paint_ellipse(scene.image, cx, cy, rx, ry, leaf);
    }
  }

  // Additive pixel noise, clipped.
  if (spec.noise > 0.0) {
    for (double& v : scene.image.data) v = std::clamp(v + rng.uniform(-spec.noise, spec.noise), 0.0, 1.0);
  }
  return scene;
}

int canopy_count(int n, double canopy_fraction) {
  require(n > 0, "generate_dataset: n must be positive");
  require(canopy_fraction >= 0.0 && canopy_fraction <= 1.0,
          "generate_dataset: canopy fraction must be in [0,1]");
  return static_cast<int>(std::floor(static_cast<double>(n) * canopy_fraction + 1e-9));
}

Manifest generate_dataset(int n, double canopy_fraction, uint64_t seed, const std::string& out_dir,
                          const SceneSpec& base) {
  const int n_canopy = canopy_count(n, canopy_fraction);
  const fs::path root(out_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");

  Manifest manifest;
  manifest.image_size = base.image_size;
  manifest.seed = seed;

  // Splits are stratified per season so each season keeps its own 8:1:1
  // partition and per-season validation stays populated.
  std::vector<Split> splits(static_cast<size_t>(n));
  if (n_canopy > 0 && n - n_canopy > 0 && n_canopy >= 10 && n - n_canopy >= 10) {
    std::vector<Split> canopy_splits = split_dataset(n_canopy, mix_seed(seed, 0xca0));
    std::vector<Split> dormant_splits = split_dataset(n - n_canopy, mix_seed(seed, 0xd00));
    for (int i = 0; i < n_canopy; ++i) splits[static_cast<size_t>(i)] = canopy_splits[static_cast<size_t>(i)];
    for (int i = n_canopy; i < n; ++i)
      splits[static_cast<size_t>(i)] = dormant_splits[static_cast<size_t>(i - n_canopy)];
  } else {
    splits = split_dataset(n, seed);
  }
  for (int i = 0; i < n; ++i) {
    SceneSpec spec = base;
    spec.season = i < n_canopy ? Season::canopy : Season::dormant;
    Scene scene = generate_scene(spec, mix_seed(seed, static_cast<uint64_t>(i)));

    char name[64];
    std::snprintf(name, sizeof(name), "scene_%05d_%s", i, to_string(spec.season).c_str());
    ManifestItem item;
    item.path = std::string("images/") + name + ".png";
    item.label_path = std::string("labels/") + name + ".txt";
    item.season = spec.season;
    item.split = splits[static_cast<size_t>(i)];

    write_png((root / item.path).string(), scene.image);
    std::ofstream os(root / item.label_path, std::ios::binary);
    os << serialize_labels(scene.instances);
    manifest.items.push_back(std::move(item));
  }
  save_manifest((root / "manifest.json").string(), manifest);
  return manifest;
}

}  // namespace oseg
