#include "oseg/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "oseg/image.hpp"
#include "oseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace oseg {

std::string to_string(Season s) { return s == Season::dormant ? "dormant" : "canopy"; }
std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

Season season_from_string(const std::string& s) {
  if (s == "dormant") return Season::dormant;
  if (s == "canopy") return Season::canopy;
  fail("unknown season: " + s);
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  fail("unknown split: " + s);
}

// --- label parsing ---------------------------------------------------------

namespace {

constexpr double kCoordSlack = 1e-9;

bool parse_double(const std::string& tok, double& out) {
  try {
    size_t pos = 0;
    out = std::stod(tok, &pos);
    return pos == tok.size() && std::isfinite(out);
  } catch (const std::exception&) {
    return false;
  }
}

bool parse_class_id(const std::string& tok, int& out) {
  if (tok.empty()) return false;
  for (char ch : tok)
    if (!std::isdigit(static_cast<unsigned char>(ch))) return false;
  try {
    out = std::stoi(tok);
  } catch (const std::exception&) {
    return false;
  }
  return out >= 0;
}

// Parses one label line; the trailing confidence token is consumed when
// `confidence` is non-null. Returns an error message or empty on success.
std::string parse_line(const std::string& line, InstanceRecord& rec, double* confidence) {
  std::istringstream is(line);
  std::vector<std::string> tokens;
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  size_t n = tokens.size();
  if (confidence) {
    if (n < 2) return "missing confidence token";
    double conf = 0.0;
    if (!parse_double(tokens[n - 1], conf)) return "non-numeric confidence '" + tokens[n - 1] + "'";
    if (conf < -kCoordSlack || conf > 1.0 + kCoordSlack) return "confidence outside [0,1]";
    *confidence = std::clamp(conf, 0.0, 1.0);
    --n;
  }
  if (n < 1) return "empty line";
  if (!parse_class_id(tokens[0], rec.class_id)) return "bad class id '" + tokens[0] + "'";
  const size_t coords = n - 1;
  if (coords % 2 != 0) return "odd coordinate count (" + std::to_string(coords) + ")";
  if (coords < 6) return "fewer than 3 vertices";
  rec.polygon.clear();
  for (size_t i = 1; i + 1 < n; i += 2) {
    double x = 0.0, y = 0.0;
    if (!parse_double(tokens[i], x)) return "non-numeric token '" + tokens[i] + "'";
    if (!parse_double(tokens[i + 1], y)) return "non-numeric token '" + tokens[i + 1] + "'";
    if (x < -kCoordSlack || x > 1.0 + kCoordSlack || y < -kCoordSlack || y > 1.0 + kCoordSlack)
      return "coordinate outside [0,1]";
    rec.polygon.push_back({std::clamp(x, 0.0, 1.0), std::clamp(y, 0.0, 1.0)});
  }
  return {};
}

std::string format_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

ParseResult parse_labels(const std::string& text, bool strict) {
  ParseResult result;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    InstanceRecord rec;
    std::string err = parse_line(line, rec, nullptr);
    if (!err.empty()) {
      std::string msg = "line " + std::to_string(line_no) + ": " + err;
      if (strict) fail("label parse error: " + msg);
      result.errors.push_back(msg);
      ++result.skipped;
      continue;
    }
    result.records.push_back(std::move(rec));
  }
  return result;
}

std::string serialize_labels(const std::vector<InstanceRecord>& records) {
  std::string out;
  for (const InstanceRecord& r : records) {
    out += std::to_string(r.class_id);
    for (const Vec2& v : r.polygon) {
      out += ' ';
      out += format_coord(v.x);
      out += ' ';
      out += format_coord(v.y);
    }
    out += '\n';
  }
  return out;
}

std::vector<FilePrediction> parse_predictions(const std::string& text, bool strict) {
  std::vector<FilePrediction> preds;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    FilePrediction p;
    std::string err = parse_line(line, p.instance, &p.confidence);
    if (!err.empty()) {
      if (strict) fail("prediction parse error: line " + std::to_string(line_no) + ": " + err);
      continue;
    }
    preds.push_back(std::move(p));
  }
  return preds;
}

std::string serialize_predictions(const std::vector<FilePrediction>& preds) {
  std::string out;
  for (const FilePrediction& p : preds) {
    out += std::to_string(p.instance.class_id);
    for (const Vec2& v : p.instance.polygon) {
      out += ' ';
      out += format_coord(v.x);
      out += ' ';
      out += format_coord(v.y);
    }
    out += ' ';
    out += format_coord(p.confidence);
    out += '\n';
  }
  return out;
}

// --- manifest ----------------------------------------------------------------

std::vector<int> Manifest::indices(std::optional<Split> split, std::optional<Season> season) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(items.size()); ++i) {
    if (split && items[i].split != *split) continue;
    if (season && items[i].season != *season) continue;
    out.push_back(i);
  }
  return out;
}

void save_manifest(const std::string& path, const Manifest& m) {
  json j;
  j["image_size"] = m.image_size;
  j["seed"] = m.seed;
  j["items"] = json::array();
  for (const ManifestItem& it : m.items) {
    j["items"].push_back({{"path", it.path},
                          {"label_path", it.label_path},
                          {"season", to_string(it.season)},
                          {"split", to_string(it.split)}});
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_manifest: cannot open " + path);
  os << j.dump(2) << '\n';
}

Manifest load_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_manifest: cannot open " + path);
  json j = json::parse(is);
  Manifest m;
  m.image_size = j.at("image_size").get<int>();
  m.seed = j.at("seed").get<uint64_t>();
  for (const json& it : j.at("items")) {
    ManifestItem item;
    item.path = it.at("path").get<std::string>();
    item.label_path = it.at("label_path").get<std::string>();
    item.season = season_from_string(it.at("season").get<std::string>());
    item.split = split_from_string(it.at("split").get<std::string>());
    m.items.push_back(std::move(item));
  }
  return m;
}

// --- split ---------------------------------------------------------------------

std::array<int, 3> split_sizes(int n) {
  require(n >= 10, "split_dataset: need at least 10 items, got " + std::to_string(n));
  const int train_floor = 8 * n / 10;
  const int rest = n - train_floor;
  const int val = rest / 2;
  const int test = rest / 2;
  return {n - val - test, val, test};
}

std::vector<Split> split_dataset(int n, uint64_t seed) {
  const auto sizes = split_sizes(n);
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(mix_seed(seed, 0x5f117));
  rng.shuffle(order);
  std::vector<Split> out(static_cast<size_t>(n), Split::train);
  for (int i = 0; i < sizes[1]; ++i) out[static_cast<size_t>(order[static_cast<size_t>(sizes[0] + i)])] = Split::val;
  for (int i = 0; i < sizes[2]; ++i)
    out[static_cast<size_t>(order[static_cast<size_t>(sizes[0] + sizes[1] + i)])] = Split::test;
  return out;
}

// --- augmentation ------------------------------------------------------------

namespace {

struct GeomTransform {
  bool rotate = false;
  double tan_v = 0.0;  // vertical shear: y += tan_v * (x - 0.5)
  double tan_h = 0.0;  // horizontal shear: x += tan_h * (y - 0.5)

  bool identity() const { return !rotate && tan_v == 0.0 && tan_h == 0.0; }

  Vec2 apply(Vec2 p) const {
    if (rotate) p = {1.0 - p.y, p.x};
    return {p.x + tan_h * (p.y - 0.5), p.y + tan_v * (p.x - 0.5)};
  }

  // Inverse of the shear (2x2 solve), then inverse of the rotation.
  Vec2 invert(Vec2 p) const {
    const double det = 1.0 - tan_h * tan_v;
    const double dx = p.x - 0.5, dy = p.y - 0.5;
    Vec2 q{0.5 + (dx - tan_h * dy) / det, 0.5 + (dy - tan_v * dx) / det};
    if (rotate) q = {q.y, 1.0 - q.x};
    return q;
  }
};

Tensor warp_image(const Tensor& img, const GeomTransform& t) {
  const int h = img.shape[1], w = img.shape[2];
  const int64_t plane = static_cast<int64_t>(h) * w;
  Tensor out({3, h, w});
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Vec2 src = t.invert({(c + 0.5) / w, (r + 0.5) / h});
      // nearest pixel center, border replicated
      int sc = static_cast<int>(std::lround(src.x * w - 0.5));
      int sr = static_cast<int>(std::lround(src.y * h - 0.5));
      sc = std::clamp(sc, 0, w - 1);
      sr = std::clamp(sr, 0, h - 1);
      const int64_t di = static_cast<int64_t>(r) * w + c;
      const int64_t si = static_cast<int64_t>(sr) * w + sc;
      out[di] = img[si];
      out[plane + di] = img[plane + si];
      out[2 * plane + di] = img[2 * plane + si];
    }
  }
  return out;
}

int distinct_vertices(const Polygon& p) {
  int n = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    const Vec2& a = p[i];
    const Vec2& b = p[(i + 1) % p.size()];
    if (a.x != b.x || a.y != b.y) ++n;
  }
  return n;
}

}  // namespace

std::vector<AugmentOutput> augment(const Tensor& image, const std::vector<InstanceRecord>& records,
                                   const AugmentSpec& spec, uint64_t seed) {
  require(image.ndim() == 3 && image.shape[0] == 3, "augment: image must be [3,H,W]");
  require(spec.outputs_per_image >= 1, "augment: outputs_per_image must be positive");
  std::vector<AugmentOutput> outputs;
  outputs.reserve(static_cast<size_t>(spec.outputs_per_image));

  for (int k = 0; k < spec.outputs_per_image; ++k) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(k) + 0xa06));
    GeomTransform t;
    t.rotate = spec.rotation90 && rng.bernoulli(0.5);
    constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
    const double deg_v = rng.uniform(-spec.vertical_shear_deg, spec.vertical_shear_deg);
    const double deg_h = rng.uniform(-spec.horizontal_shear_deg, spec.horizontal_shear_deg);
    t.tan_v = spec.vertical_shear_deg == 0.0 ? 0.0 : std::tan(deg_v * kDegToRad);
    t.tan_h = spec.horizontal_shear_deg == 0.0 ? 0.0 : std::tan(deg_h * kDegToRad);
    const double d_hue = rng.uniform(-spec.hue_deg, spec.hue_deg);
    const double d_sat = rng.uniform(-spec.saturation_pct, spec.saturation_pct) / 100.0;
    const double d_bright = rng.uniform(-spec.brightness_pct, spec.brightness_pct) / 100.0;
    const double d_expos = rng.uniform(-spec.exposure_pct, spec.exposure_pct) / 100.0;

    AugmentOutput out;
    out.image = t.identity() ? image : warp_image(image, t);

    if (d_hue != 0.0 || d_sat != 0.0 || d_bright != 0.0 || d_expos != 0.0) {
      const int64_t plane = static_cast<int64_t>(out.image.shape[1]) * out.image.shape[2];
      for (int64_t i = 0; i < plane; ++i) {
        auto hsv = rgb_to_hsv(out.image[i], out.image[plane + i], out.image[2 * plane + i]);
        hsv[0] += d_hue;
        hsv[1] = std::clamp(hsv[1] * (1.0 + d_sat), 0.0, 1.0);
        hsv[2] = std::clamp((hsv[2] + d_bright) * (1.0 + d_expos), 0.0, 1.0);
        auto rgb = hsv_to_rgb(hsv[0], hsv[1], hsv[2]);
        out.image[i] = rgb[0];
        out.image[plane + i] = rgb[1];
        out.image[2 * plane + i] = rgb[2];
      }
    }

    for (const InstanceRecord& rec : records) {
      InstanceRecord moved;
      moved.class_id = rec.class_id;
      for (const Vec2& v : rec.polygon) {
        Vec2 p = t.apply(v);
        moved.polygon.push_back({std::clamp(p.x, 0.0, 1.0), std::clamp(p.y, 0.0, 1.0)});
      }
      if (distinct_vertices(moved.polygon) < 3) {
        ++out.dropped;
        continue;
      }
      out.records.push_back(std::move(moved));
    }
    outputs.push_back(std::move(out));
  }
  return outputs;
}

Manifest augment_dataset(const std::string& manifest_path, const AugmentSpec& spec, uint64_t seed,
                         const std::string& out_dir) {
  Manifest in = load_manifest(manifest_path);
  const fs::path in_root = fs::path(manifest_path).parent_path();
  const fs::path out_root(out_dir);
  fs::create_directories(out_root / "images");
  fs::create_directories(out_root / "labels");

  bool has_train = false;
  for (const ManifestItem& it : in.items) has_train |= it.split == Split::train;
  require(has_train, "augment_dataset: manifest has no train split");

  Manifest out;
  out.image_size = in.image_size;
  out.seed = seed;

  for (size_t i = 0; i < in.items.size(); ++i) {
    const ManifestItem& item = in.items[i];
    const fs::path img_src = in_root / item.path;
    const fs::path lbl_src = in_root / item.label_path;
    if (!fs::exists(lbl_src)) throw std::runtime_error("augment_dataset: missing labels " + lbl_src.string());

    if (item.split != Split::train) {
      const fs::path img_dst = out_root / item.path;
      const fs::path lbl_dst = out_root / item.label_path;
      fs::create_directories(img_dst.parent_path());
      fs::create_directories(lbl_dst.parent_path());
      fs::copy_file(img_src, img_dst, fs::copy_options::overwrite_existing);
      fs::copy_file(lbl_src, lbl_dst, fs::copy_options::overwrite_existing);
      out.items.push_back(item);
      continue;
    }

    Tensor image = read_png(img_src.string());
    std::ifstream lf(lbl_src, std::ios::binary);
    std::stringstream lbuf;
    lbuf << lf.rdbuf();
    ParseResult parsed = parse_labels(lbuf.str(), true);

    auto variants = augment(image, parsed.records, spec, mix_seed(seed, i));
    const std::string stem = fs::path(item.path).stem().string();
    for (size_t k = 0; k < variants.size(); ++k) {
      ManifestItem ai;
      ai.path = "images/" + stem + "_aug" + std::to_string(k) + ".png";
      ai.label_path = "labels/" + stem + "_aug" + std::to_string(k) + ".txt";
      ai.season = item.season;
      ai.split = Split::train;
      write_png((out_root / ai.path).string(), variants[k].image);
      std::ofstream os(out_root / ai.label_path, std::ios::binary);
      os << serialize_labels(variants[k].records);
      out.items.push_back(std::move(ai));
    }
  }

  save_manifest((out_root / "manifest.json").string(), out);
  return out;
}

}  // namespace oseg
