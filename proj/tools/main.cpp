// Command-line surface for the two-season orchard segmentation lab:
// dataset generation, augmentation, splitting, training with or without
// CBAM, per-season evaluation, and complexity profiling.
#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "oseg/dataio.hpp"
#include "oseg/image.hpp"
#include "oseg/metrics.hpp"
#include "oseg/net.hpp"
#include "oseg/orchard.hpp"
#include "oseg/profile.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace oseg;

namespace {

constexpr int kExitError = 2;
constexpr int kExitDiverged = 3;

void write_sidecar(const fs::path& out_dir, const std::string& name, const json& resolved) {
  fs::create_directories(out_dir);
  std::ofstream os(out_dir / (name + "_config.json"), std::ios::binary);
  os << resolved.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << text;
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::optional<Season> season_filter(const std::string& s) {
  if (s == "mixed") return std::nullopt;
  return season_from_string(s);
}

std::optional<Split> split_filter(const std::string& s) {
  if (s == "all") return std::nullopt;
  return split_from_string(s);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// --- generate ---------------------------------------------------------------

struct GenerateArgs {
  int n = 200;
  double canopy_fraction = 0.5;
  uint64_t seed = 42;
  std::string out;
  int image_size = 96;
};

int cmd_generate(const GenerateArgs& a) {
  SceneSpec spec;
  spec.image_size = a.image_size;
  Manifest m = generate_dataset(a.n, a.canopy_fraction, a.seed, a.out, spec);
  int canopy = 0;
  for (const auto& item : m.items) canopy += item.season == Season::canopy ? 1 : 0;
  write_sidecar(a.out, "generate",
                json{{"subcommand", "generate"},
                     {"n", a.n},
                     {"canopy_fraction", a.canopy_fraction},
                     {"seed", a.seed},
                     {"image_size", a.image_size},
                     {"out", a.out}});
  std::cout << "generated " << m.items.size() << " scenes (" << canopy << " canopy, "
            << m.items.size() - canopy << " dormant) under " << a.out << "\n";
  return 0;
}

// --- augment ----------------------------------------------------------------

struct AugmentArgs {
  std::string manifest;
  uint64_t seed = 42;
  std::string out;
};

int cmd_augment(const AugmentArgs& a) {
  AugmentSpec spec;  // the fixed three-output menu
  Manifest out = augment_dataset(a.manifest, spec, a.seed, a.out);
  int train_n = 0;
  for (const auto& item : out.items) train_n += item.split == Split::train ? 1 : 0;
  write_sidecar(a.out, "augment",
                json{{"subcommand", "augment"},
                     {"manifest", a.manifest},
                     {"seed", a.seed},
                     {"out", a.out},
                     {"outputs_per_image", spec.outputs_per_image},
                     {"rotation90", spec.rotation90},
                     {"vertical_shear_deg", spec.vertical_shear_deg},
                     {"horizontal_shear_deg", spec.horizontal_shear_deg},
                     {"hue_deg", spec.hue_deg},
                     {"saturation_pct", spec.saturation_pct},
                     {"brightness_pct", spec.brightness_pct},
                     {"exposure_pct", spec.exposure_pct}});
  std::cout << "augmented dataset written to " << a.out << " (" << train_n << " train images)\n";
  return 0;
}

// --- split ------------------------------------------------------------------

struct SplitArgs {
  std::string manifest;
  uint64_t seed = 42;
  std::string out;  // defaults to the input manifest
};

int cmd_split(const SplitArgs& a) {
  Manifest m = load_manifest(a.manifest);
  auto splits = split_dataset(static_cast<int>(m.items.size()), a.seed);
  for (size_t i = 0; i < m.items.size(); ++i) m.items[i].split = splits[i];
  m.seed = a.seed;
  const std::string out = a.out.empty() ? a.manifest : a.out;
  save_manifest(out, m);
  write_sidecar(fs::path(out).parent_path(), "split",
                json{{"subcommand", "split"}, {"manifest", a.manifest}, {"seed", a.seed}, {"out", out}});
  std::cout << "split reassigned for " << m.items.size() << " items -> " << out << "\n";
  return 0;
}

// --- train --------------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string cbam = "off";
  int epochs = 300;
  int patience = 30;
  uint64_t seed = 42;
  std::string out;
  double lr = 0.15;
  int batch = 8;
};

int cmd_train(const TrainArgs& a) {
  Manifest m = load_manifest(a.manifest);
  const std::string root = fs::path(a.manifest).parent_path().string();
  auto train_items = load_examples(m, root, m.indices(Split::train, std::nullopt));
  auto val_items = load_examples(m, root, m.indices(Split::val, std::nullopt));

  NetConfig cfg;
  cfg.image_size = m.image_size;
  cfg.cbam = a.cbam == "on";
  Network net(cfg, a.seed);

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.patience = a.patience;
  tc.seed = a.seed;
  tc.lr = a.lr;
  tc.batch_size = a.batch;

  TrainResult result = train(net, train_items, val_items, tc);

  fs::create_directories(a.out);
  save_checkpoint((fs::path(a.out) / "checkpoint.bin").string(), net);
  write_history_csv((fs::path(a.out) / "history.csv").string(), result.history);
  write_sidecar(a.out, "train",
                json{{"subcommand", "train"},
                     {"manifest", a.manifest},
                     {"cbam", a.cbam},
                     {"epochs", a.epochs},
                     {"patience", a.patience},
                     {"seed", a.seed},
                     {"lr", a.lr},
                     {"batch", a.batch},
                     {"momentum", tc.momentum},
                     {"out", a.out},
                     {"net", json::parse(config_to_json(cfg))}});

  if (result.diverged) {
    std::cerr << "training diverged (non-finite loss); last good checkpoint saved\n";
    return kExitDiverged;
  }
  std::cout << "trained " << result.history.size() << " epochs (best epoch " << result.best_epoch
            << ", val loss " << result.best_val_loss << ") -> " << a.out << "\n";
  return 0;
}

// --- eval / curves ----------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string season = "mixed";
  std::string split = "val";
  double conf = 0.05;
  double iou = 0.5;
  int samples = 200;
  std::string out;
  bool replay_gt = false;
  std::string pred_dir;
};

int cmd_eval(const EvalArgs& a, const std::string& name) {
  Manifest m = load_manifest(a.manifest);
  const std::string root = fs::path(a.manifest).parent_path().string();
  auto indices = m.indices(split_filter(a.split), season_filter(a.season));
  if (indices.empty())
    throw std::runtime_error("eval: no images match split=" + a.split + " season=" + a.season);

  EvalOptions opts;
  opts.iou_threshold = a.iou;
  opts.mask_resolution = m.image_size;
  opts.curve_samples = a.samples;

  EvalReport report;
  if (a.replay_gt || !a.pred_dir.empty()) {
    std::vector<std::string> gt_files, pred_files;
    for (int idx : indices) {
      const auto& item = m.items[static_cast<size_t>(idx)];
      gt_files.push_back((fs::path(root) / item.label_path).string());
      if (a.replay_gt) continue;
      pred_files.push_back(
          (fs::path(a.pred_dir) / fs::path(item.label_path).filename()).string());
    }
    if (a.replay_gt) {
      // ground truth echoed back as predictions with confidence 1.0
      std::vector<std::vector<PredictionRecord>> preds;
      std::vector<std::vector<InstanceRecord>> gts;
      for (const std::string& f : gt_files) {
        auto records = parse_labels(slurp(f), true).records;
        std::vector<PredictionRecord> image_preds;
        for (const auto& g : records) {
          PredictionRecord r;
          r.class_id = g.class_id;
          r.confidence = 1.0;
          const Box b = g.bbox();
          r.cx = (b.x1 + b.x2) / 2;
          r.cy = (b.y1 + b.y2) / 2;
          r.w = b.width();
          r.h = b.height();
          r.mask = g.mask(opts.mask_resolution, opts.mask_resolution);
          image_preds.push_back(std::move(r));
        }
        preds.push_back(std::move(image_preds));
        gts.push_back(std::move(records));
      }
      report = evaluate(preds, gts, opts);
    } else {
      report = evaluate_files(pred_files, gt_files, opts);
    }
  } else {
    if (a.checkpoint.empty())
      throw std::runtime_error("eval: --checkpoint required unless --replay-gt or --pred-dir");
    Network net = load_checkpoint(a.checkpoint);
    require(net.config().image_size == m.image_size,
            "eval: checkpoint image size does not match the manifest");

    using clock = std::chrono::steady_clock;
    std::vector<double> ms_pre, ms_inf, ms_post;
    std::vector<std::vector<PredictionRecord>> preds;
    std::vector<std::vector<InstanceRecord>> gts;
    for (int idx : indices) {
      const auto& item = m.items[static_cast<size_t>(idx)];
      auto t0 = clock::now();
      Tensor image = read_png((fs::path(root) / item.path).string());
      auto gt = parse_labels(slurp(fs::path(root) / item.label_path), true).records;
      auto t1 = clock::now();
      RawOutput raw = net.forward(image);
      auto t2 = clock::now();
      auto decoded = decode(raw, m.image_size, a.conf);
      auto kept = nms(decoded, a.iou);
      auto t3 = clock::now();

      ms_pre.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      ms_inf.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
      ms_post.push_back(std::chrono::duration<double, std::milli>(t3 - t2).count());
      preds.push_back(std::move(kept));
      gts.push_back(std::move(gt));
    }
    report = evaluate(preds, gts, opts);
    report.timing.ms_preprocess = median(ms_pre);
    report.timing.ms_inference = median(ms_inf);
    report.timing.ms_postprocess = median(ms_post);
  }

  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "report.csv", report_to_csv(report));
  write_text(fs::path(a.out) / "report.json", report_to_json(report) + "\n");
  for (const ClassReport& row : report.rows) {
    std::string stem = row.name;
    std::transform(stem.begin(), stem.end(), stem.begin(), ::tolower);
    write_text(fs::path(a.out) / ("curves_box_" + stem + ".csv"), curve_to_csv(row.box_curve));
    write_text(fs::path(a.out) / ("curves_mask_" + stem + ".csv"), curve_to_csv(row.mask_curve));
  }
  write_sidecar(a.out, name,
                json{{"subcommand", name},
                     {"checkpoint", a.checkpoint},
                     {"manifest", a.manifest},
                     {"season", a.season},
                     {"split", a.split},
                     {"conf", a.conf},
                     {"iou", a.iou},
                     {"samples", a.samples},
                     {"replay_gt", a.replay_gt},
                     {"pred_dir", a.pred_dir},
                     {"out", a.out}});

  std::cout << report_to_csv(report);
  return 0;
}

// --- profile ------------------------------------------------------------------

struct ProfileArgs {
  std::string checkpoint;
  std::string config;
  std::string cbam;  // "", "on", "off": optional override for --config
  bool no_activations = false;
  std::string out;
};

int cmd_profile(const ProfileArgs& a) {
  NetConfig cfg;
  if (!a.checkpoint.empty()) {
    cfg = load_checkpoint(a.checkpoint).config();
  } else if (!a.config.empty()) {
    cfg = config_from_json(slurp(a.config));
  }  // else: library defaults
  if (a.cbam == "on") cfg.cbam = true;
  if (a.cbam == "off") cfg.cbam = false;

  ProfileOptions opts;
  opts.count_activations = !a.no_activations;
  ProfileResult result = profile(layers_from_config(cfg), {3, cfg.image_size, cfg.image_size}, opts);

  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "profile.json", profile_to_json(result) + "\n");
  write_sidecar(a.out, "profile",
                json{{"subcommand", "profile"},
                     {"checkpoint", a.checkpoint},
                     {"config", a.config},
                     {"cbam", a.cbam},
                     {"count_activations", opts.count_activations},
                     {"out", a.out}});
  std::cout << profile_to_json(result) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-season orchard trunk/branch segmentation lab"};
  app.require_subcommand(1);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "generate a synthetic two-season dataset");
  gen->add_option("--n", ga.n, "number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--canopy-fraction", ga.canopy_fraction, "fraction of canopy-season scenes")
      ->check(CLI::Range(0.0, 1.0));
  gen->add_option("--seed", ga.seed, "master seed");
  gen->add_option("--img-size", ga.image_size, "square image size");
  gen->add_option("--out", ga.out, "output dataset directory")->required();

  AugmentArgs aa;
  auto* aug = app.add_subcommand("augment", "triple the training split with the augmentation menu");
  aug->add_option("--manifest", aa.manifest, "input manifest.json")->required();
  aug->add_option("--seed", aa.seed, "augmentation seed");
  aug->add_option("--out", aa.out, "output dataset directory")->required();

  SplitArgs sa;
  auto* spl = app.add_subcommand("split", "reassign 8:1:1 splits in a manifest");
  spl->add_option("--manifest", sa.manifest, "input manifest.json")->required();
  spl->add_option("--seed", sa.seed, "shuffle seed");
  spl->add_option("--out", sa.out, "output manifest path (default: rewrite input)");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "train the mini segmenter");
  trn->add_option("--manifest", ta.manifest, "dataset manifest")->required();
  trn->add_option("--cbam", ta.cbam, "attach CBAM after every backbone conv")
      ->check(CLI::IsMember({"on", "off"}));
  trn->add_option("--epochs", ta.epochs, "epoch budget (max 500)")->check(CLI::Range(0, 500));
  trn->add_option("--patience", ta.patience, "early-stopping patience")->check(CLI::PositiveNumber);
  trn->add_option("--seed", ta.seed, "training seed");
  trn->add_option("--lr", ta.lr, "SGD step size");
  trn->add_option("--batch", ta.batch, "batch size")->check(CLI::PositiveNumber);
  trn->add_option("--out", ta.out, "output directory")->required();

  EvalArgs ea;
  auto add_eval_options = [&ea](CLI::App* cmd) {
    cmd->add_option("--checkpoint", ea.checkpoint, "trained checkpoint");
    cmd->add_option("--manifest", ea.manifest, "dataset manifest")->required();
    cmd->add_option("--season", ea.season, "season filter")
        ->check(CLI::IsMember({"dormant", "canopy", "mixed"}));
    cmd->add_option("--split", ea.split, "split filter")
        ->check(CLI::IsMember({"train", "val", "test", "all"}));
    cmd->add_option("--conf", ea.conf, "decode confidence threshold")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--iou", ea.iou, "matching and NMS IoU threshold")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--samples", ea.samples, "confidence curve samples");
    cmd->add_flag("--replay-gt", ea.replay_gt, "score the ground truth against itself");
    cmd->add_option("--pred-dir", ea.pred_dir, "evaluate prediction files instead of a checkpoint");
    cmd->add_option("--out", ea.out, "output directory")->required();
  };
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint per season");
  add_eval_options(evl);
  auto* crv = app.add_subcommand("curves", "alias of eval emitting the same curve files");
  add_eval_options(crv);

  ProfileArgs pa;
  auto* prf = app.add_subcommand("profile", "layer/parameter/GFLOPs accounting");
  prf->add_option("--checkpoint", pa.checkpoint, "checkpoint to profile");
  prf->add_option("--config", pa.config, "NetConfig JSON to profile");
  prf->add_option("--cbam", pa.cbam, "override the CBAM flag")->check(CLI::IsMember({"on", "off"}));
  prf->add_flag("--no-activations", pa.no_activations, "exclude activation ops from FLOPs");
  prf->add_option("--out", pa.out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(ga);
    if (aug->parsed()) return cmd_augment(aa);
    if (spl->parsed()) return cmd_split(sa);
    if (trn->parsed()) return cmd_train(ta);
    if (evl->parsed()) return cmd_eval(ea, "eval");
    if (crv->parsed()) return cmd_eval(ea, "curves");
    if (prf->parsed()) return cmd_profile(pa);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
