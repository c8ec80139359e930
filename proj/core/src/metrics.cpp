#include "oseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

using nlohmann::json;

namespace oseg {

int MatchResult::tp_total() const {
  int n = 0;
  for (int v : tp) n += v;
  return n;
}

MatchResult match_instances(const std::vector<int>& pred_classes,
                            const std::vector<int>& gt_classes,
                            const std::function<double(int, int)>& iou_fn, int num_classes,
                            double threshold) {
  MatchResult m;
  m.tp.assign(static_cast<size_t>(num_classes), 0);
  m.fp.assign(static_cast<size_t>(num_classes), 0);
  m.fn.assign(static_cast<size_t>(num_classes), 0);

  std::vector<bool> taken(gt_classes.size(), false);
  for (size_t p = 0; p < pred_classes.size(); ++p) {
    const int cls = pred_classes[p];
    require(cls >= 0 && cls < num_classes, "match_instances: prediction class out of range");
    int best_gt = -1;
    double best_iou = -1.0;
    for (size_t g = 0; g < gt_classes.size(); ++g) {
      if (taken[g] || gt_classes[g] != cls) continue;
      const double iou = iou_fn(static_cast<int>(p), static_cast<int>(g));
      if (iou >= threshold && iou > best_iou) {  // ties keep the lower GT index
        best_iou = iou;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) best_iou = std::max(best_iou, 0.0);
    ScoredPrediction sp;
    sp.class_id = cls;
    if (best_gt >= 0) {
      taken[static_cast<size_t>(best_gt)] = true;
      sp.is_tp = true;
      sp.matched_iou = best_iou;
      ++m.tp[static_cast<size_t>(cls)];
    } else {
      ++m.fp[static_cast<size_t>(cls)];
    }
    m.scored.push_back(sp);
  }
  for (size_t g = 0; g < gt_classes.size(); ++g) {
    if (!taken[g]) {
      m.unmatched_gt.push_back(static_cast<int>(g));
      ++m.fn[static_cast<size_t>(gt_classes[g])];
    }
  }
  return m;
}

std::pair<double, double> precision_recall(int tp, int fp, int fn) {
  const double p = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  const double r = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  return {p, r};
}

double average_precision(const std::vector<ScoredPrediction>& scored, int total_gt) {
  if (total_gt <= 0) return 0.0;  // warned by callers with nonempty scored
  if (scored.empty()) return 0.0;

  // cumulative precision/recall points in confidence order
  std::vector<double> prec, rec;
  int tp = 0, fp = 0;
  for (const ScoredPrediction& s : scored) {
    s.is_tp ? ++tp : ++fp;
    prec.push_back(static_cast<double>(tp) / (tp + fp));
    rec.push_back(static_cast<double>(tp) / total_gt);
  }
  // monotone non-increasing precision envelope
  for (size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);

  double ap = 0.0;
  double prev_r = 0.0;
  for (size_t i = 0; i < prec.size(); ++i) {
    ap += (rec[i] - prev_r) * prec[i];
    prev_r = rec[i];
  }
  return ap;
}

PRCurve confidence_curve(const std::vector<ScoredPrediction>& scored, int total_gt, int samples) {
  require(samples >= 2, "confidence_curve: need at least two samples");
  PRCurve curve;
  std::vector<ScoredPrediction> sorted = scored;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScoredPrediction& a, const ScoredPrediction& b) {
                     return a.confidence > b.confidence;
                   });
  curve.ap = average_precision(sorted, total_gt);

  curve.points.reserve(static_cast<size_t>(samples));
  for (int s = 0; s < samples; ++s) {
    const double thr = static_cast<double>(s) / (samples - 1);
    int tp = 0, kept = 0;
    for (const ScoredPrediction& sp : sorted) {
      if (sp.confidence >= thr) {
        ++kept;
        tp += sp.is_tp ? 1 : 0;
      }
    }
    CurvePoint pt;
    pt.threshold = thr;
    pt.precision = kept > 0 ? static_cast<double>(tp) / kept : 0.0;
    pt.recall = total_gt > 0 ? static_cast<double>(tp) / total_gt : 0.0;
    pt.f1 = pt.precision + pt.recall > 0.0
                ? 2.0 * pt.precision * pt.recall / (pt.precision + pt.recall)
                : 0.0;
    if (pt.f1 > curve.best_f1) {  // ties keep the lowest threshold
      curve.best_f1 = pt.f1;
      curve.best_f1_threshold = thr;
    }
    curve.points.push_back(pt);
  }
  return curve;
}

double miou(const std::vector<ScoredPrediction>& scored) {
  double acc = 0.0;
  int n = 0;
  for (const ScoredPrediction& s : scored) {
    if (s.is_tp) {
      acc += s.matched_iou;
      ++n;
    }
  }
  return n > 0 ? acc / n : 0.0;
}

namespace {

struct ClassPool {
  std::vector<ScoredPrediction> box_scored, mask_scored;
  int gt = 0;
};

void sort_by_confidence(std::vector<ScoredPrediction>& v) {
  std::stable_sort(v.begin(), v.end(), [](const ScoredPrediction& a, const ScoredPrediction& b) {
    return a.confidence > b.confidence;
  });
}

EvalReport evaluate_pools(std::vector<ClassPool>& pools, const EvalOptions& opts) {
  EvalReport report;
  const int nc = static_cast<int>(pools.size());

  ClassReport all;
  all.name = "All";
  int classes_present = 0;
  std::vector<ScoredPrediction> pooled_box, pooled_mask;
  int pooled_gt = 0;

  std::vector<ClassReport> rows;
  for (int c = 0; c < nc; ++c) {
    ClassPool& pool = pools[static_cast<size_t>(c)];
    sort_by_confidence(pool.box_scored);
    sort_by_confidence(pool.mask_scored);

    ClassReport row;
    row.name = kClassNames[c];
    row.gt_count = pool.gt;
    int tp = 0;
    for (const auto& s : pool.box_scored) tp += s.is_tp ? 1 : 0;
    auto [bp, br] = precision_recall(tp, static_cast<int>(pool.box_scored.size()) - tp, pool.gt - tp);
    row.box_p = bp;
    row.box_r = br;
    tp = 0;
    for (const auto& s : pool.mask_scored) tp += s.is_tp ? 1 : 0;
    auto [mp, mr] = precision_recall(tp, static_cast<int>(pool.mask_scored.size()) - tp, pool.gt - tp);
    row.mask_p = mp;
    row.mask_r = mr;
    row.box_curve = confidence_curve(pool.box_scored, pool.gt, opts.curve_samples);
    row.mask_curve = confidence_curve(pool.mask_scored, pool.gt, opts.curve_samples);
    row.box_ap = row.box_curve.ap;
    row.mask_ap = row.mask_curve.ap;
    row.miou = miou(pool.mask_scored);
    rows.push_back(std::move(row));

    if (pool.gt > 0) {
      ++classes_present;
      all.box_p += bp;
      all.box_r += br;
      all.box_ap += rows.back().box_ap;
      all.mask_p += mp;
      all.mask_r += mr;
      all.mask_ap += rows.back().mask_ap;
      all.miou += rows.back().miou;
    }
    all.gt_count += pool.gt;
    pooled_gt += pool.gt;
    pooled_box.insert(pooled_box.end(), pool.box_scored.begin(), pool.box_scored.end());
    pooled_mask.insert(pooled_mask.end(), pool.mask_scored.begin(), pool.mask_scored.end());
  }

  if (classes_present > 0) {
    const double inv = 1.0 / classes_present;
    all.box_p *= inv;
    all.box_r *= inv;
    all.box_ap *= inv;
    all.mask_p *= inv;
    all.mask_r *= inv;
    all.mask_ap *= inv;
    all.miou *= inv;
  }
  // aggregate curves pool every prediction against the pooled GT count
  all.box_curve = confidence_curve(pooled_box, pooled_gt, opts.curve_samples);
  all.mask_curve = confidence_curve(pooled_mask, pooled_gt, opts.curve_samples);

  report.rows.push_back(std::move(all));
  for (auto& r : rows) report.rows.push_back(std::move(r));
  return report;
}

}  // namespace

EvalReport evaluate(const std::vector<std::vector<PredictionRecord>>& preds_per_image,
                    const std::vector<std::vector<InstanceRecord>>& gts_per_image,
                    const EvalOptions& opts) {
  require(preds_per_image.size() == gts_per_image.size(), "evaluate: image list size mismatch");
  const int nc = 2;
  std::vector<ClassPool> pools(nc);

  for (size_t img = 0; img < gts_per_image.size(); ++img) {
    const auto& preds = preds_per_image[img];
    const auto& gts = gts_per_image[img];
    std::vector<int> pred_classes, gt_classes;
    for (const auto& p : preds) pred_classes.push_back(p.class_id);
    for (const auto& g : gts) {
      require(g.class_id >= 0 && g.class_id < nc, "evaluate: GT class out of range");
      gt_classes.push_back(g.class_id);
    }

    std::vector<Box> gt_boxes;
    std::vector<Bitmask> gt_masks;
    for (const auto& g : gts) {
      gt_boxes.push_back(g.bbox());
      gt_masks.push_back(g.mask(opts.mask_resolution, opts.mask_resolution));
    }

    MatchResult box_match = match_instances(
        pred_classes, gt_classes,
        [&](int p, int g) { return box_iou(preds[static_cast<size_t>(p)].box(), gt_boxes[static_cast<size_t>(g)]); },
        nc, opts.iou_threshold);
    MatchResult mask_match = match_instances(
        pred_classes, gt_classes,
        [&](int p, int g) {
          const Bitmask& pm = preds[static_cast<size_t>(p)].mask;
          require(pm.h == opts.mask_resolution && pm.w == opts.mask_resolution,
                  "evaluate: prediction mask resolution mismatch");
          return mask_iou(pm, gt_masks[static_cast<size_t>(g)]);
        },
        nc, opts.iou_threshold);

    for (size_t p = 0; p < preds.size(); ++p) {
      ScoredPrediction sb = box_match.scored[p];
      sb.confidence = preds[p].confidence;
      pools[static_cast<size_t>(sb.class_id)].box_scored.push_back(sb);
      ScoredPrediction sm = mask_match.scored[p];
      sm.confidence = preds[p].confidence;
      pools[static_cast<size_t>(sm.class_id)].mask_scored.push_back(sm);
    }
    for (int c : gt_classes) ++pools[static_cast<size_t>(c)].gt;
  }

  EvalReport report = evaluate_pools(pools, opts);
  report.images = static_cast<int>(gts_per_image.size());
  return report;
}

EvalReport evaluate_files(const std::vector<std::string>& pred_files,
                          const std::vector<std::string>& gt_files, const EvalOptions& opts) {
  require(pred_files.size() == gt_files.size(), "evaluate_files: aligned file lists required");
  int warnings = 0;
  std::vector<std::vector<PredictionRecord>> preds_per_image;
  std::vector<std::vector<InstanceRecord>> gts_per_image;

  auto slurp = [](const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };

  for (size_t i = 0; i < gt_files.size(); ++i) {
    gts_per_image.push_back(parse_labels(slurp(gt_files[i]), true).records);

    std::vector<PredictionRecord> preds;
    if (!std::filesystem::exists(pred_files[i])) {
      ++warnings;  // treated as zero predictions
    } else {
      for (const FilePrediction& fp : parse_predictions(slurp(pred_files[i]), true)) {
        PredictionRecord r;
        r.class_id = fp.instance.class_id;
        r.confidence = fp.confidence;
        const Box b = fp.instance.bbox();
        r.cx = (b.x1 + b.x2) / 2.0;
        r.cy = (b.y1 + b.y2) / 2.0;
        r.w = b.width();
        r.h = b.height();
        r.mask = fp.instance.mask(opts.mask_resolution, opts.mask_resolution);
        preds.push_back(std::move(r));
      }
      std::stable_sort(preds.begin(), preds.end(),
                       [](const PredictionRecord& a, const PredictionRecord& b) {
                         return a.confidence > b.confidence;
                       });
    }
    preds_per_image.push_back(std::move(preds));
  }

  EvalReport report = evaluate(preds_per_image, gts_per_image, opts);
  report.warnings = warnings;
  return report;
}

// --- report serialization --------------------------------------------------

std::string report_to_csv(const EvalReport& report) {
  std::string out =
      "class,gt_count,box_precision,box_recall,box_map50,mask_precision,mask_recall,mask_map50,miou\n";
  char buf[320];
  for (const ClassReport& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.name.c_str(),
                  r.gt_count, r.box_p, r.box_r, r.box_ap, r.mask_p, r.mask_r, r.mask_ap, r.miou);
    out += buf;
  }
  return out;
}

EvalReport report_from_csv(const std::string& csv) {
  EvalReport report;
  std::istringstream is(csv);
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::istringstream ls(line);
    std::string tok;
    ClassReport r;
    std::getline(ls, r.name, ',');
    std::getline(ls, tok, ',');
    r.gt_count = std::stoi(tok);
    double* fields[] = {&r.box_p, &r.box_r, &r.box_ap, &r.mask_p, &r.mask_r, &r.mask_ap, &r.miou};
    for (double* f : fields) {
      std::getline(ls, tok, ',');
      *f = std::stod(tok);
    }
    report.rows.push_back(std::move(r));
  }
  return report;
}

std::string report_to_json(const EvalReport& report) {
  json j;
  j["images"] = report.images;
  j["warnings"] = report.warnings;
  j["timing_ms"] = {{"preprocess", report.timing.ms_preprocess},
                    {"inference", report.timing.ms_inference},
                    {"postprocess", report.timing.ms_postprocess}};
  j["classes"] = json::array();
  for (const ClassReport& r : report.rows) {
    j["classes"].push_back({{"class", r.name},
                            {"gt_count", r.gt_count},
                            {"box", {{"precision", r.box_p}, {"recall", r.box_r}, {"map50", r.box_ap}}},
                            {"mask", {{"precision", r.mask_p}, {"recall", r.mask_r}, {"map50", r.mask_ap}}},
                            {"miou", r.miou},
                            {"best_f1", {{"score", r.mask_curve.best_f1},
                                         {"threshold", r.mask_curve.best_f1_threshold}}}});
  }
  return j.dump(2);
}

std::string curve_to_csv(const PRCurve& curve) {
  std::string out = "threshold,precision,recall,f1\n";
  char buf[160];
  for (const CurvePoint& p : curve.points) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f\n", p.threshold, p.precision, p.recall, p.f1);
    out += buf;
  }
  return out;
}

}  // namespace oseg
