#include <functional>

#include "doctest.h"
#include "oracles.hpp"
#include "oseg/metrics.hpp"
#include "oseg/rng.hpp"

using namespace oseg;

namespace {

using oracle::TinyCase;

Bitmask random_mask(int h, int w, Rng& rng, double fill = 0.4) {
  Bitmask m(h, w);
  for (auto& v : m.v) v = rng.uniform() < fill ? 1 : 0;
  return m;
}

}  // namespace

TEST_SUITE("iou") {
  TEST_CASE("box identities") {
    Box a{0.1, 0.2, 0.5, 0.8};
    CHECK(iou_box(a, a) == 1.0);
    CHECK(iou_box(a, Box{0.6, 0.2, 0.9, 0.8}) == 0.0);
    // two unit squares overlapping half: 0.5 / 1.5
    CHECK(iou_box(Box{0, 0, 1, 1}, Box{0.5, 0, 1.5, 1}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(iou_box(Box{0, 0, 0, 0}, Box{0, 0, 0, 0}) == 0.0);  // empty union
  }

  TEST_CASE("mask identities and the popcount oracle") {
    Rng rng(3);
    Bitmask a = random_mask(32, 32, rng);
    CHECK(iou_mask(a, a) == 1.0);
    Bitmask empty1(32, 32), empty2(32, 32);
    CHECK(iou_mask(empty1, empty2) == 0.0);

    Bitmask left(8, 8), right(8, 8);
    for (int r = 0; r < 8; ++r) {
      left.set(r, 0, 1);
      right.set(r, 7, 1);
    }
    CHECK(iou_mask(left, right) == 0.0);

    for (int trial = 0; trial < 20; ++trial) {
      Bitmask x = random_mask(32, 32, rng), y = random_mask(32, 32, rng);
      long long inter = 0, uni = 0;
      for (size_t i = 0; i < x.v.size(); ++i) {
        inter += (x.v[i] && y.v[i]) ? 1 : 0;
        uni += (x.v[i] || y.v[i]) ? 1 : 0;
      }
      const double want = uni ? oracle::Frac::of(inter, uni).value() : 0.0;
      CHECK(iou_mask(x, y) == doctest::Approx(want).epsilon(1e-15));
    }
    CHECK_THROWS(iou_mask(Bitmask(4, 4), Bitmask(4, 5)));
  }
}

TEST_SUITE("matching") {
  TEST_CASE("one perfect prediction is a TP") {
    auto iou = [](int, int) { return 1.0; };
    MatchResult m = match_instances({1}, {1}, iou, 2, 0.5);
    CHECK(m.tp[1] == 1);
    CHECK(m.fp[1] == 0);
    CHECK(m.fn[1] == 0);
    CHECK(m.scored[0].is_tp);
    CHECK(m.unmatched_gt.empty());
  }

  TEST_CASE("duplicate prediction is penalized as FP") {
    auto iou = [](int, int) { return 1.0; };
    MatchResult m = match_instances({0, 0}, {0}, iou, 2, 0.5);
    CHECK(m.tp[0] == 1);
    CHECK(m.fp[0] == 1);
    CHECK(m.fn[0] == 0);
    CHECK(m.scored[0].is_tp);
    CHECK(!m.scored[1].is_tp);
  }

  TEST_CASE("greedy equals the exhaustive priority oracle on fuzzed tiny cases") {
    Rng rng(17);
    for (int trial = 0; trial < 500; ++trial) {
      TinyCase tc;
      const int np = static_cast<int>(rng.uniform_int(0, 4));
      const int ng = static_cast<int>(rng.uniform_int(0, 4));
      for (int p = 0; p < np; ++p) tc.pred_classes.push_back(static_cast<int>(rng.uniform_int(0, 1)));
      for (int g = 0; g < ng; ++g) tc.gt_classes.push_back(static_cast<int>(rng.uniform_int(0, 1)));
      tc.iou.assign(static_cast<size_t>(np), std::vector<double>(static_cast<size_t>(ng)));
      for (auto& row : tc.iou)
        for (double& v : row) v = rng.uniform_int(0, 4) / 4.0;  // coarse grid forces IoU ties

      MatchResult got = match_instances(
          tc.pred_classes, tc.gt_classes,
          [&](int p, int g) { return tc.iou[static_cast<size_t>(p)][static_cast<size_t>(g)]; }, 2, 0.5);
      oracle::TinyAssign want = oracle::enumerate_match(tc, 0.5);

      int want_tp[2] = {0, 0};
      for (int p = 0; p < np; ++p) {
        const bool tp = want.gt_for_pred[static_cast<size_t>(p)] >= 0;
        CHECK(got.scored[static_cast<size_t>(p)].is_tp == tp);
        if (tp) {
          ++want_tp[tc.pred_classes[static_cast<size_t>(p)]];
          CHECK(got.scored[static_cast<size_t>(p)].matched_iou ==
                tc.iou[static_cast<size_t>(p)][static_cast<size_t>(want.gt_for_pred[static_cast<size_t>(p)])]);
        }
      }
      CHECK(got.tp[0] == want_tp[0]);
      CHECK(got.tp[1] == want_tp[1]);
      // count identities
      int gt_per_class[2] = {0, 0};
      for (int c : tc.gt_classes) ++gt_per_class[c];
      int preds_per_class[2] = {0, 0};
      for (int c : tc.pred_classes) ++preds_per_class[c];
      for (int c = 0; c < 2; ++c) {
        CHECK(got.tp[static_cast<size_t>(c)] + got.fn[static_cast<size_t>(c)] == gt_per_class[c]);
        CHECK(got.tp[static_cast<size_t>(c)] + got.fp[static_cast<size_t>(c)] == preds_per_class[c]);
      }
    }
  }
}

TEST_SUITE("precision_recall") {
  TEST_CASE("forced arithmetic and the zero conventions") {
    auto [p1, r1] = precision_recall(8, 2, 0);
    CHECK(p1 == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(r1 == 1.0);
    auto [p2, r2] = precision_recall(0, 0, 5);
    CHECK(p2 == 0.0);
    CHECK(r2 == 0.0);
  }

  TEST_CASE("fuzzed counts match the exact-fraction oracle") {
    Rng rng(23);
    for (int trial = 0; trial < 200; ++trial) {
      const int tp = static_cast<int>(rng.uniform_int(0, 20));
      const int fp = static_cast<int>(rng.uniform_int(0, 20));
      const int fn = static_cast<int>(rng.uniform_int(0, 20));
      auto [p, r] = precision_recall(tp, fp, fn);
      const double wp = tp + fp ? oracle::Frac::of(tp, tp + fp).value() : 0.0;
      const double wr = tp + fn ? oracle::Frac::of(tp, tp + fn).value() : 0.0;
      CHECK(p == doctest::Approx(wp).epsilon(1e-15));
      CHECK(r == doctest::Approx(wr).epsilon(1e-15));
    }
  }
}

TEST_SUITE("average_precision") {
  std::vector<ScoredPrediction> make_scored(const std::vector<bool>& flags) {
    std::vector<ScoredPrediction> out;
    double conf = 1.0;
    for (bool tp : flags) {
      ScoredPrediction s;
      s.confidence = conf;
      conf -= 0.01;
      s.is_tp = tp;
      out.push_back(s);
    }
    return out;
  }

  TEST_CASE("all TPs covering every GT give AP 1; no TPs give 0") {
    CHECK(average_precision(make_scored({true, true, true}), 3) == 1.0);
    CHECK(average_precision(make_scored({false, false}), 2) == 0.0);
    CHECK(average_precision({}, 3) == 0.0);
    CHECK(average_precision(make_scored({true}), 0) == 0.0);  // warned degenerate input
  }

  TEST_CASE("(TP, FP, TP) with two GTs equals the interpolated area 5/6") {
    const double got = average_precision(make_scored({true, false, true}), 2);
    CHECK(got == doctest::Approx(oracle::ap_exact({true, false, true}, 2)).epsilon(1e-15));
    CHECK(got == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  }

  TEST_CASE("fuzzed flag sequences match the exact-fraction oracle") {
    Rng rng(31);
    for (int trial = 0; trial < 300; ++trial) {
      const int n = static_cast<int>(rng.uniform_int(0, 10));
      std::vector<bool> flags;
      int tps = 0;
      for (int i = 0; i < n; ++i) {
        flags.push_back(rng.bernoulli(0.5));
        tps += flags.back() ? 1 : 0;
      }
      const int total_gt = tps + static_cast<int>(rng.uniform_int(0, 5));
      if (total_gt == 0) continue;
      CHECK(average_precision(make_scored(flags), total_gt) ==
            doctest::Approx(oracle::ap_exact(flags, total_gt)).epsilon(1e-12));
    }
  }

  TEST_CASE("AP depends on ranking only, not confidence values") {
    Rng rng(37);
    std::vector<ScoredPrediction> scored;
    for (int i = 0; i < 12; ++i) {
      ScoredPrediction s;
      s.confidence = 1.0 - 0.05 * i;
      s.is_tp = rng.bernoulli(0.5);
      scored.push_back(s);
    }
    const double base = confidence_curve(scored, 6).ap;
    // strictly increasing rescale keeps the order
    for (auto& s : scored) s.confidence = 1.0 / (1.0 + std::exp(-4.0 * (s.confidence - 0.5)));
    CHECK(confidence_curve(scored, 6).ap == doctest::Approx(base).epsilon(1e-15));
  }

  TEST_CASE("a trailing lowest-confidence FP never raises AP") {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 1 + static_cast<int>(rng.uniform_int(0, 8));
      std::vector<bool> flags;
      int tps = 0;
      for (int i = 0; i < n; ++i) {
        flags.push_back(rng.bernoulli(0.6));
        tps += flags.back() ? 1 : 0;
      }
      const int total_gt = std::max(1, tps);
      const double before = oracle::ap_exact(flags, total_gt);
      flags.push_back(false);
      const double after = oracle::ap_exact(flags, total_gt);
      CHECK(average_precision(make_scored(flags), total_gt) == doctest::Approx(after).epsilon(1e-12));
      CHECK(after <= before + 1e-15);
    }
  }
}

TEST_SUITE("curves") {
  TEST_CASE("threshold 0 reproduces the full-set precision/recall") {
    Rng rng(43);
    std::vector<ScoredPrediction> scored;
    int tps = 0;
    for (int i = 0; i < 9; ++i) {
      ScoredPrediction s;
      s.confidence = rng.uniform(0.05, 0.95);
      s.is_tp = rng.bernoulli(0.5);
      tps += s.is_tp ? 1 : 0;
      scored.push_back(s);
    }
    const int total_gt = tps + 2;
    PRCurve curve = confidence_curve(scored, total_gt, 200);
    auto [p, r] = precision_recall(tps, static_cast<int>(scored.size()) - tps, total_gt - tps);
    CHECK(curve.points.front().threshold == 0.0);
    CHECK(curve.points.front().precision == doctest::Approx(p).epsilon(1e-15));
    CHECK(curve.points.front().recall == doctest::Approx(r).epsilon(1e-15));
  }

  TEST_CASE("thresholds above the top confidence give zeros by convention") {
    std::vector<ScoredPrediction> scored(3);
    for (int i = 0; i < 3; ++i) {
      scored[static_cast<size_t>(i)].confidence = 0.4;
      scored[static_cast<size_t>(i)].is_tp = true;
    }
    PRCurve curve = confidence_curve(scored, 3, 200);
    const CurvePoint& last = curve.points.back();
    CHECK(last.threshold == 1.0);
    CHECK(last.precision == 0.0);
    CHECK(last.recall == 0.0);
    CHECK(last.f1 == 0.0);
  }

  TEST_CASE("fuzzed curves match the filter-then-recompute oracle at every threshold") {
    Rng rng(47);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<ScoredPrediction> scored;
      int tps = 0;
      const int n = static_cast<int>(rng.uniform_int(0, 12));
      for (int i = 0; i < n; ++i) {
        ScoredPrediction s;
        s.confidence = rng.uniform_int(0, 20) / 20.0;  // grid to hit threshold ties
        s.is_tp = rng.bernoulli(0.5);
        tps += s.is_tp ? 1 : 0;
        scored.push_back(s);
      }
      const int total_gt = tps + static_cast<int>(rng.uniform_int(0, 4));
      PRCurve curve = confidence_curve(scored, total_gt, 101);
      for (const CurvePoint& pt : curve.points) {
        long long tp = 0, kept = 0;
        for (const auto& s : scored) {
          if (s.confidence >= pt.threshold) {
            ++kept;
            tp += s.is_tp ? 1 : 0;
          }
        }
        const double p = kept ? oracle::Frac::of(tp, kept).value() : 0.0;
        const double r = total_gt ? oracle::Frac::of(tp, total_gt).value() : 0.0;
        CHECK(pt.precision == doctest::Approx(p).epsilon(1e-12));
        CHECK(pt.recall == doctest::Approx(r).epsilon(1e-12));
        const double f1 = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
        CHECK(pt.f1 == doctest::Approx(f1).epsilon(1e-12));
        CHECK(pt.f1 <= 1.0);
      }
      // recall never increases with the threshold
      for (size_t i = 1; i < curve.points.size(); ++i)
        CHECK(curve.points[i].recall <= curve.points[i - 1].recall + 1e-15);
      // best F1 is the argmax at the lowest threshold
      double best = 0.0, best_thr = 0.0;
      for (const auto& pt : curve.points)
        if (pt.f1 > best) {
          best = pt.f1;
          best_thr = pt.threshold;
        }
      CHECK(curve.best_f1 == doctest::Approx(best).epsilon(1e-15));
      CHECK(curve.best_f1_threshold == doctest::Approx(best_thr).epsilon(1e-15));
    }
  }
}

TEST_SUITE("miou") {
  TEST_CASE("identical masks give 1, no TPs give 0, fuzz matches the mean") {
    std::vector<ScoredPrediction> all_one(3);
    for (auto& s : all_one) {
      s.is_tp = true;
      s.matched_iou = 1.0;
    }
    CHECK(miou(all_one) == 1.0);
    CHECK(miou({}) == 0.0);
    std::vector<ScoredPrediction> no_tp(2);
    CHECK(miou(no_tp) == 0.0);

    Rng rng(53);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<ScoredPrediction> scored;
      double acc = 0.0;
      int n_tp = 0;
      const int n = static_cast<int>(rng.uniform_int(0, 10));
      for (int i = 0; i < n; ++i) {
        ScoredPrediction s;
        s.is_tp = rng.bernoulli(0.5);
        if (s.is_tp) {
          s.matched_iou = rng.uniform(0.5, 1.0);
          acc += s.matched_iou;
          ++n_tp;
        }
        scored.push_back(s);
      }
      const double want = n_tp ? acc / n_tp : 0.0;
      CHECK(miou(scored) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_SUITE("evaluate") {
  std::vector<InstanceRecord> two_class_gts() {
    return {{kClassTrunk, {{0.4, 0.1}, {0.6, 0.1}, {0.6, 0.9}, {0.4, 0.9}}},
            {kClassBranch, {{0.1, 0.3}, {0.35, 0.25}, {0.35, 0.3}, {0.1, 0.35}}}};
  }

  TEST_CASE("replaying ground truth as predictions scores 1.0 everywhere") {
    std::vector<std::vector<InstanceRecord>> gts{two_class_gts(), two_class_gts()};
    std::vector<std::vector<PredictionRecord>> preds;
    EvalOptions opts;
    for (const auto& image_gts : gts) {
      std::vector<PredictionRecord> image_preds;
      for (const auto& g : image_gts) {
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
    }
    EvalReport report = evaluate(preds, gts, opts);
    REQUIRE(report.rows.size() == 3);
    CHECK(report.rows[0].name == "All");
    CHECK(report.rows[1].name == "Branch");
    CHECK(report.rows[2].name == "Trunk");
    for (const ClassReport& row : report.rows) {
      CHECK(row.box_p == 1.0);
      CHECK(row.box_r == 1.0);
      CHECK(row.box_ap == 1.0);
      CHECK(row.mask_p == 1.0);
      CHECK(row.mask_r == 1.0);
      CHECK(row.mask_ap == 1.0);
      CHECK(row.miou == 1.0);
    }
  }

  TEST_CASE("empty predictions everywhere give zeros") {
    std::vector<std::vector<InstanceRecord>> gts{two_class_gts()};
    std::vector<std::vector<PredictionRecord>> preds{{}};
    EvalReport report = evaluate(preds, gts);
    for (const ClassReport& row : report.rows) {
      CHECK(row.box_p == 0.0);
      CHECK(row.box_r == 0.0);
      CHECK(row.box_ap == 0.0);
      CHECK(row.mask_ap == 0.0);
      CHECK(row.miou == 0.0);
    }
  }

  TEST_CASE("report CSV round-trips the published-style row unchanged") {
    EvalReport report;
    ClassReport all, branch, trunk;
    all.name = "All";
    branch.name = "Branch";
    trunk.name = "Trunk";
    trunk.gt_count = 78;
    trunk.mask_p = 0.830;
    trunk.mask_r = 0.688;
    trunk.mask_ap = 0.755;
    report.rows = {all, branch, trunk};

    EvalReport back = report_from_csv(report_to_csv(report));
    REQUIRE(back.rows.size() == 3);
    CHECK(back.rows[2].name == "Trunk");
    CHECK(back.rows[2].mask_p == 0.830);
    CHECK(back.rows[2].mask_r == 0.688);
    CHECK(back.rows[2].mask_ap == 0.755);
    CHECK(report_to_csv(back) == report_to_csv(report));
  }
}
