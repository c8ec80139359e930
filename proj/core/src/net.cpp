#include "oseg/net.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"
#include "oseg/image.hpp"
#include "oseg/rng.hpp"

using nlohmann::json;

namespace oseg {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) {
  p = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return std::log(p / (1.0 - p));
}

Tensor kaiming_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

// Small nonzero bias keeps pre-activations of all-zero receptive fields off
// the exact relu kink; gradient checks need that margin.
Tensor bias_init(int n, Rng& rng) {
  Tensor t({n});
  for (double& v : t.data) v = rng.uniform(-0.05, 0.05);
  return t;
}

// Cell assignment: box center picks the cell; collisions keep the larger box
// area, ties the earlier target. Degenerate boxes are skipped and counted.
struct Assignment {
  std::map<std::pair<int, int>, int> cell_to_target;  // (i,j) -> target index
  int skipped = 0;
};

Assignment assign_targets(const std::vector<InstanceRecord>& targets, int grid) {
  Assignment a;
  std::map<std::pair<int, int>, double> best_area;
  for (size_t t = 0; t < targets.size(); ++t) {
    const Box b = targets[t].bbox();
    const double area = b.area();
    if (area <= 0.0) {
      ++a.skipped;
      continue;
    }
    const double cx = (b.x1 + b.x2) / 2.0, cy = (b.y1 + b.y2) / 2.0;
    const int j = std::clamp(static_cast<int>(std::floor(cx * grid)), 0, grid - 1);
    const int i = std::clamp(static_cast<int>(std::floor(cy * grid)), 0, grid - 1);
    auto key = std::make_pair(i, j);
    auto it = best_area.find(key);
    if (it == best_area.end() || area > it->second) {
      best_area[key] = area;
      a.cell_to_target[key] = static_cast<int>(t);
    }
  }
  return a;
}

}  // namespace

int NetConfig::proto_block() const {
  int size = image_size;
  for (int b = 0; b < blocks(); ++b) {
    size /= 2;
    if (size == proto_res) return b;
  }
  fail("net config: proto_res " + std::to_string(proto_res) +
       " does not match any backbone block output");
}

int NetConfig::cbam_reduction_at(int block) const {
  if (cbam_reduction.empty()) return 16;
  require(block < static_cast<int>(cbam_reduction.size()), "net config: cbam_reduction too short");
  return cbam_reduction[static_cast<size_t>(block)];
}

int NetConfig::cbam_kernel_at(int block) const {
  if (cbam_kernel.empty()) return 7;
  require(block < static_cast<int>(cbam_kernel.size()), "net config: cbam_kernel too short");
  return cbam_kernel[static_cast<size_t>(block)];
}

void NetConfig::validate() const {
  require(!channels.empty(), "net config: channel plan is empty");
  for (int c : channels) require(c >= 1, "net config: channels must be positive");
  require(image_size >= (1 << blocks()), "net config: image too small for channel plan");
  require(image_size % (1 << blocks()) == 0,
          "net config: image size must be divisible by 2^blocks");
  require(grid() >= 1, "net config: grid collapsed to zero");
  require(num_classes == 2, "net config: the label set is fixed to branch/trunk (2 classes)");
  require(prototypes >= 1, "net config: need at least one prototype");
  require(proto_hidden >= 1, "net config: proto_hidden must be positive");
  proto_block();  // throws when proto_res matches no block
  if (!cbam_reduction.empty())
    require(static_cast<int>(cbam_reduction.size()) == blocks(),
            "net config: cbam_reduction must have one entry per block");
  if (!cbam_kernel.empty())
    require(static_cast<int>(cbam_kernel.size()) == blocks(),
            "net config: cbam_kernel must have one entry per block");
}

std::string config_to_json(const NetConfig& cfg) {
  json j;
  j["image_size"] = cfg.image_size;
  j["channels"] = cfg.channels;
  j["cbam"] = cfg.cbam;
  j["cbam_reduction"] = cfg.cbam_reduction;
  j["cbam_kernel"] = cfg.cbam_kernel;
  j["num_classes"] = cfg.num_classes;
  j["prototypes"] = cfg.prototypes;
  j["proto_res"] = cfg.proto_res;
  j["proto_hidden"] = cfg.proto_hidden;
  j["loss_weights"] = {{"obj", cfg.w_obj}, {"box", cfg.w_box}, {"cls", cfg.w_cls}, {"mask", cfg.w_mask}};
  return j.dump(2);
}

NetConfig config_from_json(const std::string& text) {
  json j = json::parse(text);
  NetConfig cfg;
  cfg.image_size = j.at("image_size").get<int>();
  cfg.channels = j.at("channels").get<std::vector<int>>();
  cfg.cbam = j.at("cbam").get<bool>();
  cfg.cbam_reduction = j.at("cbam_reduction").get<std::vector<int>>();
  cfg.cbam_kernel = j.at("cbam_kernel").get<std::vector<int>>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.prototypes = j.at("prototypes").get<int>();
  cfg.proto_res = j.at("proto_res").get<int>();
  cfg.proto_hidden = j.at("proto_hidden").get<int>();
  if (j.contains("loss_weights")) {
    cfg.w_obj = j["loss_weights"].at("obj").get<double>();
    cfg.w_box = j["loss_weights"].at("box").get<double>();
    cfg.w_cls = j["loss_weights"].at("cls").get<double>();
    cfg.w_mask = j["loss_weights"].at("mask").get<double>();
  }
  cfg.validate();
  return cfg;
}

Network::Network(NetConfig cfg, uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
  cfg_.validate();
  Rng rng(mix_seed(seed, 0x9e7));
  int in_c = 3;
  for (int b = 0; b < cfg_.blocks(); ++b) {
    const int out_c = cfg_.channels[static_cast<size_t>(b)];
    conv_w_.emplace_back(kaiming_uniform({out_c, in_c, 3, 3}, in_c * 9, rng));
    conv_b_.emplace_back(bias_init(out_c, rng));
    registry_.push_back({"backbone." + std::to_string(b) + ".w", conv_w_.back()});
    registry_.push_back({"backbone." + std::to_string(b) + ".b", conv_b_.back()});
    if (cfg_.cbam) {
      cbam_.push_back(CbamParams::create(out_c, cfg_.cbam_reduction_at(b), cfg_.cbam_kernel_at(b), rng));
      const std::string prefix = "backbone." + std::to_string(b) + ".cbam.";
      registry_.push_back({prefix + "mlp_w1", cbam_.back().mlp_w1});
      registry_.push_back({prefix + "mlp_w2", cbam_.back().mlp_w2});
      registry_.push_back({prefix + "sam_w", cbam_.back().sam_w});
      registry_.push_back({prefix + "sam_b", cbam_.back().sam_b});
    }
    in_c = out_c;
  }
  const int src_c = cfg_.channels[static_cast<size_t>(cfg_.proto_block())];
  proto_w1_ = Parameter(kaiming_uniform({cfg_.proto_hidden, src_c, 3, 3}, src_c * 9, rng));
  proto_b1_ = Parameter(bias_init(cfg_.proto_hidden, rng));
  proto_w2_ = Parameter(kaiming_uniform({cfg_.prototypes, cfg_.proto_hidden, 1, 1}, cfg_.proto_hidden, rng));
  proto_b2_ = Parameter(Tensor({cfg_.prototypes}));
  registry_.push_back({"proto.w1", proto_w1_});
  registry_.push_back({"proto.b1", proto_b1_});
  registry_.push_back({"proto.w2", proto_w2_});
  registry_.push_back({"proto.b2", proto_b2_});

  const int head_c = cfg_.head_channels();
  head_w_ = Parameter(kaiming_uniform({head_c, in_c, 1, 1}, in_c, rng));
  Tensor hb({head_c});
  hb[0] = -2.0;  // objectness prior: most cells are background
  head_b_ = Parameter(std::move(hb));
  registry_.push_back({"head.w", head_w_});
  registry_.push_back({"head.b", head_b_});
}

int64_t Network::parameter_count() const {
  int64_t n = 0;
  for (const NamedParam& p : registry_) n += p.param.value().size();
  return n;
}

void Network::zero_grads() {
  for (NamedParam& p : registry_) p.param.zero_grad();
}

Network::Census Network::census() const {
  return {cfg_.blocks(), static_cast<int>(cbam_.size())};
}

RawOutput Network::forward(const Tensor& image) const {
  require(image.ndim() == 3 && image.shape[0] == 3 && image.shape[1] == cfg_.image_size &&
              image.shape[2] == cfg_.image_size,
          "forward: expected image [3," + std::to_string(cfg_.image_size) + "," +
              std::to_string(cfg_.image_size) + "], got " + image.shape_str());

  Var x = constant(image);
  Var proto_src;
  for (int b = 0; b < cfg_.blocks(); ++b) {
    x = relu(conv2d(x, conv_w_[static_cast<size_t>(b)].var(), conv_b_[static_cast<size_t>(b)].var(), 2, 1));
    if (cfg_.cbam) x = cbam_forward(x, cbam_[static_cast<size_t>(b)]).refined;
    if (b == cfg_.proto_block()) proto_src = x;
  }
  Var head = conv2d(x, head_w_.var(), head_b_.var(), 1, 0);
  Var p = relu(conv2d(proto_src, proto_w1_.var(), proto_b1_.var(), 1, 1));
  Var protos = conv2d(p, proto_w2_.var(), proto_b2_.var(), 1, 0);

  RawOutput out;
  out.head_var = head;
  out.proto_var = protos;
  out.prototypes = protos->value;
  const int s = cfg_.grid();
  const int hc = cfg_.head_channels();
  out.cells = Tensor({s, s, hc});
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j)
      for (int c = 0; c < hc; ++c) out.cells.at(i, j, c) = head->value.at(c, i, j);
  if (!out.cells.all_finite() || !out.prototypes.all_finite())
    throw NonFiniteError("forward: non-finite output");
  return out;
}

Box PredictionRecord::box() const {
  Box b{cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0};
  b.x1 = std::clamp(b.x1, 0.0, 1.0);
  b.y1 = std::clamp(b.y1, 0.0, 1.0);
  b.x2 = std::clamp(b.x2, 0.0, 1.0);
  b.y2 = std::clamp(b.y2, 0.0, 1.0);
  return b;
}

std::vector<PredictionRecord> decode(const RawOutput& raw, int image_size, double conf_threshold) {
  require(conf_threshold >= 0.0 && conf_threshold <= 1.0, "decode: conf_threshold must be in [0,1]");
  require(raw.cells.ndim() == 3 && raw.cells.shape[0] == raw.cells.shape[1], "decode: bad cell tensor");
  const int s = raw.cells.shape[0];
  const int hc = raw.cells.shape[2];
  const int p = raw.prototypes.shape[0];
  const int nc = hc - 5 - p;
  require(nc >= 1, "decode: inconsistent head layout");
  const int ph = raw.prototypes.shape[1], pw = raw.prototypes.shape[2];
  require(image_size % ph == 0 && image_size % pw == 0, "decode: prototype resolution must divide image size");

  std::vector<PredictionRecord> preds;
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < s; ++j) {
      PredictionRecord r;
      r.cell_index = i * s + j;
      const double obj = stable_sigmoid(raw.cells.at(i, j, 0));

      // class probabilities via softmax over the class logits
      double mx = raw.cells.at(i, j, 5);
      for (int c = 1; c < nc; ++c) mx = std::max(mx, raw.cells.at(i, j, 5 + c));
      double se = 0.0;
      for (int c = 0; c < nc; ++c) se += std::exp(raw.cells.at(i, j, 5 + c) - mx);
      int best = 0;
      for (int c = 1; c < nc; ++c)
        if (raw.cells.at(i, j, 5 + c) > raw.cells.at(i, j, 5 + best)) best = c;
      r.class_id = best;
      r.confidence = obj * std::exp(raw.cells.at(i, j, 5 + best) - mx) / se;
      if (r.confidence < conf_threshold) continue;

      r.cx = (j + stable_sigmoid(raw.cells.at(i, j, 1))) / s;
      r.cy = (i + stable_sigmoid(raw.cells.at(i, j, 2))) / s;
      r.w = stable_sigmoid(raw.cells.at(i, j, 3));
      r.h = stable_sigmoid(raw.cells.at(i, j, 4));

      // mask: sigmoid of the prototype combination, nearest upsample, 0.5
      // threshold, cropped to the box
      const Box box = r.box();
      r.mask = Bitmask(image_size, image_size);
      const int fy = image_size / ph, fx = image_size / pw;
      for (int rr = 0; rr < image_size; ++rr) {
        const double y = (rr + 0.5) / image_size;
        if (y < box.y1 || y > box.y2) continue;
        const int pr = rr / fy;
        for (int cc = 0; cc < image_size; ++cc) {
          const double x = (cc + 0.5) / image_size;
          if (x < box.x1 || x > box.x2) continue;
          const int pc = cc / fx;
          double logit_acc = 0.0;
          for (int k = 0; k < p; ++k)
            logit_acc += raw.cells.at(i, j, 5 + nc + k) * raw.prototypes.at(k, pr, pc);
          if (stable_sigmoid(logit_acc) > 0.5) r.mask.set(rr, cc, 1);
        }
      }
      preds.push_back(std::move(r));
    }
  }
  std::sort(preds.begin(), preds.end(), [](const PredictionRecord& a, const PredictionRecord& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.cell_index < b.cell_index;
  });
  return preds;
}

std::vector<PredictionRecord> nms(const std::vector<PredictionRecord>& preds, double iou_threshold) {
  require(iou_threshold > 0.0 && iou_threshold <= 1.0, "nms: iou_threshold must be in (0,1]");
  std::vector<PredictionRecord> kept;
  for (const PredictionRecord& cand : preds) {
    bool suppressed = false;
    for (const PredictionRecord& k : kept) {
      if (k.class_id != cand.class_id) continue;
      if (box_iou(k.box(), cand.box()) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

LossInfo compute_loss(const RawOutput& raw, const std::vector<InstanceRecord>& targets,
                      const NetConfig& cfg) {
  require(raw.head_var && raw.proto_var, "compute_loss: raw output carries no graph handles");
  const int s = cfg.grid();
  const int nc = cfg.num_classes;
  const int np = cfg.prototypes;
  const int ph = raw.proto_var->value.shape[1], pw = raw.proto_var->value.shape[2];

  LossInfo info;
  Assignment assign = assign_targets(targets, s);
  info.skipped_degenerate = assign.skipped;
  info.assigned = static_cast<int>(assign.cell_to_target.size());

  Tensor obj_target({1, s, s});
  for (const auto& [cell, t] : assign.cell_to_target) obj_target.at(0, cell.first, cell.second) = 1.0;
  // summed, not averaged: positive cells must not be drowned by the S*S plane
  Var obj_loss = bce_with_logits_sum(slice_channels(raw.head_var, 0, 1), obj_target);

  Var box_acc, cls_acc, mask_acc;
  for (const auto& [cell, t] : assign.cell_to_target) {
    const auto [i, j] = cell;
    const InstanceRecord& target = targets[static_cast<size_t>(t)];
    const Box b = target.bbox();

    // decoded box: cx=(j+sig(tx))/S, cy=(i+sig(ty))/S, w=sig(tw), h=sig(th)
    Var txywh = sigmoid(cell_vector(raw.head_var, i, j, 1, 5));
    const double inv_s = 1.0 / s;
    Tensor mulc({4}, {inv_s, inv_s, 1.0, 1.0});
    Tensor addc({4}, {j * inv_s, i * inv_s, 0.0, 0.0});
    Var decoded = affine(txywh, std::move(mulc), std::move(addc));
    Tensor want({4}, {(b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0, b.x2 - b.x1, b.y2 - b.y1});
    Var box_term = squared_error_sum(decoded, std::move(want));
    box_acc = box_acc ? add(box_acc, box_term) : box_term;

    Var cls_term = softmax_cross_entropy(cell_vector(raw.head_var, i, j, 5, 5 + nc), target.class_id);
    cls_acc = cls_acc ? add(cls_acc, cls_term) : cls_term;

    // assembled mask at prototype resolution vs the rasterized target, scored
    // over the target's box window only (decode crops to the box anyway, and
    // whole-plane BCE collapses thin masks into the all-empty optimum)
    const int r0 = std::clamp(static_cast<int>(std::floor(b.y1 * ph)), 0, ph - 1);
    const int r1 = std::clamp(static_cast<int>(std::ceil(b.y2 * ph)), r0 + 1, ph);
    const int c0 = std::clamp(static_cast<int>(std::floor(b.x1 * pw)), 0, pw - 1);
    const int c1 = std::clamp(static_cast<int>(std::ceil(b.x2 * pw)), c0 + 1, pw);
    Var coeffs = cell_vector(raw.head_var, i, j, 5 + nc, 5 + nc + np);
    Var combined = scale(channel_pool(mul_channel(raw.proto_var, coeffs), PoolMode::avg),
                         static_cast<double>(np));
    Bitmask tm = target.mask(ph, pw);
    Tensor mask_target({1, r1 - r0, c1 - c0});
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c)
        mask_target.at(0, r - r0, c - c0) = tm.get(r, c) ? 1.0 : 0.0;
    Var mask_term = bce_with_logits_mean(crop_spatial(combined, r0, r1, c0, c1),
                                         std::move(mask_target));
    mask_acc = mask_acc ? add(mask_acc, mask_term) : mask_term;
  }

  // box/cls/mask accumulate per assigned cell; more instances, more gradient
  Var total = scale(obj_loss, cfg.w_obj);
  if (info.assigned > 0) {
    total = add(total, scale(box_acc, cfg.w_box));
    total = add(total, scale(cls_acc, cfg.w_cls));
    total = add(total, scale(mask_acc, cfg.w_mask));
    info.box = box_acc->value[0];
    info.cls = cls_acc->value[0];
    info.mask = mask_acc->value[0];
  }
  info.objectness = obj_loss->value[0];
  info.total = total;
  return info;
}

Tensor encode_targets(const std::vector<InstanceRecord>& targets, const NetConfig& cfg) {
  const int s = cfg.grid();
  Tensor cells({s, s, cfg.head_channels()});
  for (int64_t k = 0; k < cells.size(); ++k) cells[k] = 0.0;
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) cells.at(i, j, 0) = -1000.0;

  Assignment assign = assign_targets(targets, s);
  for (const auto& [cell, t] : assign.cell_to_target) {
    const auto [i, j] = cell;
    const Box b = targets[static_cast<size_t>(t)].bbox();
    cells.at(i, j, 0) = 1000.0;
    cells.at(i, j, 1) = logit((b.x1 + b.x2) / 2.0 * s - j);
    cells.at(i, j, 2) = logit((b.y1 + b.y2) / 2.0 * s - i);
    cells.at(i, j, 3) = logit(b.x2 - b.x1);
    cells.at(i, j, 4) = logit(b.y2 - b.y1);
    cells.at(i, j, 5 + targets[static_cast<size_t>(t)].class_id) = 50.0;
  }
  return cells;
}

namespace {

double example_loss_value(const Network& net, const TrainExample& ex) {
  RawOutput raw = net.forward(ex.image);
  return compute_loss(raw, ex.targets, net.config()).total->value[0];
}

std::vector<Tensor> snapshot_params(const Network& net) {
  std::vector<Tensor> snap;
  for (const auto& np : net.params()) snap.push_back(np.param.value());
  return snap;
}

void restore_params(Network& net, const std::vector<Tensor>& snap) {
  for (size_t k = 0; k < snap.size(); ++k) net.params()[k].param.value() = snap[k];
}

}  // namespace

TrainResult train(Network& net, const std::vector<TrainExample>& train_set,
                  const std::vector<TrainExample>& val_set, const TrainConfig& cfg) {
  require(cfg.epochs >= 0 && cfg.epochs <= 500, "train: epochs must be in [0,500]");
  require(cfg.patience >= 1, "train: patience must be positive");
  require(cfg.batch_size >= 1, "train: batch size must be positive");
  TrainResult result;
  if (cfg.epochs == 0) return result;
  require(!train_set.empty() && !val_set.empty(), "train: need nonempty train and val splits");

  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };

  std::vector<Tensor> velocity;
  for (const auto& np : net.params()) velocity.emplace_back(np.param.value().shape);

  std::vector<Tensor> last_good = snapshot_params(net);
  double best_val = std::numeric_limits<double>::infinity();
  int since_improve = 0;

  std::vector<int> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;

    auto t0 = clock::now();
    Rng rng(mix_seed(cfg.seed, 0xe90c + static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    stats.ms_preprocess += ms_since(t0);

    double loss_sum = 0.0;
    bool finite = true;
    for (size_t start = 0; start < order.size() && finite; start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const double inv_b = 1.0 / static_cast<double>(end - start);

      t0 = clock::now();
      Var batch_loss;
      try {
        for (size_t k = start; k < end; ++k) {
          const TrainExample& ex = train_set[static_cast<size_t>(order[k])];
          RawOutput raw = net.forward(ex.image);
          Var li = compute_loss(raw, ex.targets, net.config()).total;
          batch_loss = batch_loss ? add(batch_loss, li) : li;
        }
      } catch (const NonFiniteError&) {
        finite = false;
        break;
      }
      batch_loss = scale(batch_loss, inv_b);
      stats.ms_forward += ms_since(t0);

      const double lv = batch_loss->value[0];
      if (!std::isfinite(lv)) {
        finite = false;
        break;
      }
      loss_sum += lv * static_cast<double>(end - start);

      t0 = clock::now();
      net.zero_grads();
      backward(batch_loss);
      auto& params = net.params();
      for (size_t k = 0; k < params.size(); ++k) {
        Tensor& v = velocity[k];
        Tensor& p = params[k].param.value();
        const Tensor& g = params[k].param.grad();
        for (int64_t i = 0; i < p.size(); ++i) {
          v[i] = cfg.momentum * v[i] - cfg.lr * g[i];
          p[i] += v[i];
        }
      }
      stats.ms_backward += ms_since(t0);
    }

    if (!finite) {
      restore_params(net, last_good);
      result.diverged = true;
      break;
    }
    stats.train_loss = loss_sum / static_cast<double>(train_set.size());

    t0 = clock::now();
    double val_sum = 0.0;
    try {
      for (const TrainExample& ex : val_set) val_sum += example_loss_value(net, ex);
    } catch (const NonFiniteError&) {
      val_sum = std::numeric_limits<double>::quiet_NaN();
    }
    stats.val_loss = val_sum / static_cast<double>(val_set.size());
    stats.ms_forward += ms_since(t0);

    if (!std::isfinite(stats.val_loss)) {
      restore_params(net, last_good);
      result.diverged = true;
      break;
    }

    last_good = snapshot_params(net);
    result.history.push_back(stats);

    // Early stopping halts the run; the stopped parameters are kept as-is.
    if (stats.val_loss < best_val) {
      best_val = stats.val_loss;
      result.best_epoch = epoch;
      since_improve = 0;
    } else {
      ++since_improve;
      if (since_improve >= cfg.patience) break;
    }
  }

  result.best_val_loss = best_val;
  return result;
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_history_csv: cannot open " + path);
  os << "epoch,train_loss,val_loss,ms_preprocess,ms_forward,ms_backward\n";
  char buf[256];
  for (const EpochStats& e : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.9f,%.9f,%.3f,%.3f,%.3f\n", e.epoch, e.train_loss,
                  e.val_loss, e.ms_preprocess, e.ms_forward, e.ms_backward);
    os << buf;
  }
}

static constexpr char kCheckpointMagic[8] = {'O', 'S', 'E', 'G', 'N', 'E', 'T', '1'};

void save_checkpoint(const std::string& path, const Network& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::string cfg = config_to_json(net.config());
  const uint64_t cfg_len = cfg.size();
  os.write(reinterpret_cast<const char*>(&cfg_len), sizeof(cfg_len));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const uint64_t seed = net.seed();
  os.write(reinterpret_cast<const char*>(&seed), sizeof(seed));
  const uint32_t count = static_cast<uint32_t>(net.params().size());
  os.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& np : net.params()) {
    const uint32_t name_len = static_cast<uint32_t>(np.name.size());
    os.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
    os.write(np.name.data(), name_len);
    write_tensor(os, np.param.value());
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

std::vector<TrainExample> load_examples(const Manifest& m, const std::string& root,
                                        const std::vector<int>& indices) {
  namespace fs = std::filesystem;
  std::vector<TrainExample> out;
  out.reserve(indices.size());
  for (int idx : indices) {
    const ManifestItem& item = m.items.at(static_cast<size_t>(idx));
    TrainExample ex;
    ex.image = read_png((fs::path(root) / item.path).string());
    std::ifstream is(fs::path(root) / item.label_path, std::ios::binary);
    if (!is) throw std::runtime_error("load_examples: missing labels " + item.label_path);
    std::stringstream ss;
    ss << is.rdbuf();
    ex.targets = parse_labels(ss.str(), true).records;
    out.push_back(std::move(ex));
  }
  return out;
}

Network load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path);
  uint64_t cfg_len = 0;
  is.read(reinterpret_cast<char*>(&cfg_len), sizeof(cfg_len));
  require(is.good() && cfg_len < (1u << 20), "load_checkpoint: bad config length");
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  uint64_t seed = 0;
  is.read(reinterpret_cast<char*>(&seed), sizeof(seed));

  Network net(config_from_json(cfg_text), seed);
  uint32_t count = 0;
  is.read(reinterpret_cast<char*>(&count), sizeof(count));
  require(is.good() && count == net.params().size(), "load_checkpoint: parameter count mismatch");
  for (auto& np : net.params()) {
    uint32_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    require(is.good() && name_len < 4096, "load_checkpoint: bad name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    require(name == np.name, "load_checkpoint: parameter order mismatch at " + name);
    Tensor t = read_tensor(is);
    require(t.shape == np.param.value().shape, "load_checkpoint: shape mismatch for " + name);
    np.param.value() = std::move(t);
  }
  return net;
}

}  // namespace oseg
