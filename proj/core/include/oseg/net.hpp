#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oseg/cbam.hpp"
#include "oseg/dataio.hpp"
#include "oseg/geometry.hpp"

namespace oseg {

/// Raised when a forward pass produces non-finite values; train() treats it
/// as divergence and restores the last finite-epoch parameters.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Anchor-free single-scale detector/segmenter with a prototype mask head.
/// Every backbone conv is 3x3 stride 2; with `cbam` on, one attention block
/// follows each of them and nothing else changes shape.
struct NetConfig {
  int image_size = 96;
  std::vector<int> channels = {8, 16, 32, 64};
  bool cbam = false;
  std::vector<int> cbam_reduction;  // per block; empty means 16 everywhere
  std::vector<int> cbam_kernel;     // per block; empty means 7 everywhere
  int num_classes = 2;              // branch=0, trunk=1
  int prototypes = 8;
  int proto_res = 24;
  int proto_hidden = 16;
  // loss term weights: objectness BCE, box L2, class CE, mask BCE
  double w_obj = 1.0, w_box = 5.0, w_cls = 1.0, w_mask = 1.0;

  int blocks() const { return static_cast<int>(channels.size()); }
  int grid() const { return image_size >> blocks(); }
  int head_channels() const { return 5 + num_classes + prototypes; }
  int proto_block() const;  // backbone block whose output feeds the mask head
  int cbam_reduction_at(int block) const;
  int cbam_kernel_at(int block) const;
  void validate() const;
};

std::string config_to_json(const NetConfig& cfg);
NetConfig config_from_json(const std::string& text);

struct RawOutput {
  Tensor cells;       // [S,S,5+num_classes+P]: obj, tx,ty,tw,th, class logits, coeffs
  Tensor prototypes;  // [P,proto_res,proto_res]
  // Graph handles for the training path.
  Var head_var;   // [5+num_classes+P,S,S]
  Var proto_var;  // [P,proto_res,proto_res]
};

struct PredictionRecord {
  int class_id = 0;
  double confidence = 0.0;  // sigmoid(obj) * softmax class probability
  double cx = 0, cy = 0, w = 0, h = 0;
  Bitmask mask;  // image resolution, cropped to the box
  int cell_index = 0;

  Box box() const;  // corners clamped to [0,1]
};

class Network {
 public:
  Network(NetConfig cfg, uint64_t seed);

  const NetConfig& config() const { return cfg_; }
  uint64_t seed() const { return seed_; }

  struct NamedParam {
    std::string name;
    Parameter param;
  };
  std::vector<NamedParam>& params() { return registry_; }
  const std::vector<NamedParam>& params() const { return registry_; }
  int64_t parameter_count() const;
  void zero_grads();

  struct Census {
    int backbone_convs = 0;
    int cbam_blocks = 0;
  };
  Census census() const;

  RawOutput forward(const Tensor& image) const;

 private:
  NetConfig cfg_;
  uint64_t seed_ = 0;
  std::vector<Parameter> conv_w_, conv_b_;
  std::vector<CbamParams> cbam_;
  Parameter proto_w1_, proto_b1_, proto_w2_, proto_b2_;
  Parameter head_w_, head_b_;
  std::vector<NamedParam> registry_;
};

std::vector<PredictionRecord> decode(const RawOutput& raw, int image_size, double conf_threshold);

/// Greedy per-class suppression; a record is dropped when its box IoU with an
/// already kept record of the same class reaches `iou_threshold`.
std::vector<PredictionRecord> nms(const std::vector<PredictionRecord>& preds, double iou_threshold);

struct LossInfo {
  Var total;
  double objectness = 0, box = 0, cls = 0, mask = 0;
  int assigned = 0;
  int skipped_degenerate = 0;  // zero-area targets
};
LossInfo compute_loss(const RawOutput& raw, const std::vector<InstanceRecord>& targets,
                      const NetConfig& cfg);

/// Writes ideal box logits for each assigned cell (inverse of decode); test
/// support for the decode/encode consistency property.
Tensor encode_targets(const std::vector<InstanceRecord>& targets, const NetConfig& cfg);

struct TrainExample {
  Tensor image;
  std::vector<InstanceRecord> targets;
};

struct TrainConfig {
  int epochs = 300;  // hard cap 500
  int patience = 30;
  double lr = 0.15;
  double momentum = 0.9;
  int batch_size = 8;
  uint64_t seed = 42;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0, val_loss = 0;
  double ms_preprocess = 0, ms_forward = 0, ms_backward = 0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  bool diverged = false;
  int best_epoch = -1;
  double best_val_loss = 0;
};

/// Plain SGD with momentum and deterministic shuffling; halts when the
/// validation loss has not improved for `patience` epochs and keeps the
/// stopped parameters. On divergence the last finite-epoch parameters are
/// restored and `diverged` is set.
TrainResult train(Network& net, const std::vector<TrainExample>& train_set,
                  const std::vector<TrainExample>& val_set, const TrainConfig& cfg);

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history);

/// Checkpoint = serialized NetConfig + named parameter tensors, bit-exact.
void save_checkpoint(const std::string& path, const Network& net);
Network load_checkpoint(const std::string& path);

/// Reads the images and labels of the selected manifest items; paths resolve
/// against `root` (the manifest's directory).
std::vector<TrainExample> load_examples(const Manifest& m, const std::string& root,
                                        const std::vector<int>& indices);

}  // namespace oseg
