#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oseg/geometry.hpp"
#include "oseg/tensor.hpp"

namespace oseg {

enum class Season { dormant, canopy };
enum class Split { train, val, test };

std::string to_string(Season s);
std::string to_string(Split s);
Season season_from_string(const std::string& s);
Split split_from_string(const std::string& s);

/// One ground-truth object. class 0 = branch, 1 = trunk.
struct InstanceRecord {
  int class_id = 0;
  Polygon polygon;

  Box bbox() const { return polygon_bbox(polygon); }
  Bitmask mask(int h, int w) const { return rasterize(polygon, h, w); }
};

inline constexpr int kClassBranch = 0;
inline constexpr int kClassTrunk = 1;
inline constexpr const char* kClassNames[2] = {"Branch", "Trunk"};

// --- YOLO segmentation label format -------------------------------------
// One line per instance: class id followed by >=3 normalized vertex pairs.
// Canonical serialization uses 6 decimals and single spaces.

struct ParseResult {
  std::vector<InstanceRecord> records;
  int skipped = 0;                   // invalid lines in lenient mode
  std::vector<std::string> errors;   // one message per invalid line
};

ParseResult parse_labels(const std::string& text, bool strict = true);
std::string serialize_labels(const std::vector<InstanceRecord>& records);

/// Prediction file line: label line plus a trailing confidence token.
struct FilePrediction {
  InstanceRecord instance;
  double confidence = 0.0;
};
std::vector<FilePrediction> parse_predictions(const std::string& text, bool strict = true);
std::string serialize_predictions(const std::vector<FilePrediction>& preds);

// --- dataset manifest ----------------------------------------------------

struct ManifestItem {
  std::string path;        // image, relative to the manifest location
  std::string label_path;  // labels, relative to the manifest location
  Season season = Season::dormant;
  Split split = Split::train;
};

struct Manifest {
  int image_size = 96;
  uint64_t seed = 0;
  std::vector<ManifestItem> items;

  std::vector<int> indices(std::optional<Split> split, std::optional<Season> season) const;
};

void save_manifest(const std::string& path, const Manifest& m);
Manifest load_manifest(const std::string& path);

/// Deterministic shuffled 8:1:1 partition; train absorbs the odd remainder.
/// Returns per-item splits aligned with indices 0..n-1. Requires n >= 10.
std::vector<Split> split_dataset(int n, uint64_t seed);
std::array<int, 3> split_sizes(int n);

// --- augmentation ---------------------------------------------------------

/// The augmentation menu; each training example yields three outputs.
struct AugmentSpec {
  bool rotation90 = true;             // applied with probability 1/2, (x,y) -> (1-y,x)
  double vertical_shear_deg = 15.0;   // uniform in +-range
  double horizontal_shear_deg = 0.0;
  double hue_deg = 15.0;              // uniform in +-range
  double saturation_pct = 25.0;
  double brightness_pct = 20.0;       // additive on HSV value
  double exposure_pct = 20.0;         // multiplicative gain
  int outputs_per_image = 3;
};

struct AugmentOutput {
  Tensor image;
  std::vector<InstanceRecord> records;
  int dropped = 0;  // instances collapsed to <3 distinct vertices
};

std::vector<AugmentOutput> augment(const Tensor& image, const std::vector<InstanceRecord>& records,
                                   const AugmentSpec& spec, uint64_t seed);

/// Triples the train split of a dataset on disk; val/test files are copied
/// verbatim. Returns the manifest written to out_dir/manifest.json.
Manifest augment_dataset(const std::string& manifest_path, const AugmentSpec& spec, uint64_t seed,
                         const std::string& out_dir);

}  // namespace oseg
