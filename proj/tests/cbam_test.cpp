#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "oseg/cbam.hpp"
#include "oseg/gradcheck.hpp"
#include "oseg/rng.hpp"

using namespace oseg;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

CbamParams random_params(int c, int r, int k, uint64_t seed) {
  Rng rng(seed);
  return CbamParams::create(c, r, k, rng);
}

}  // namespace

TEST_SUITE("cbam") {
  TEST_CASE("construction validates reduction and kernel") {
    Rng rng(1);
    CHECK_THROWS(CbamParams::create(8, 2, 4, rng));   // even kernel
    CHECK_THROWS(CbamParams::create(6, 4, 3, rng));   // clamped r=4 does not divide 6
    CbamParams p = CbamParams::create(8, 16, 7, rng); // r clamps to 8, hidden 1
    CHECK(p.reduction == 8);
    CHECK(p.hidden() == 1);
  }

  TEST_CASE("parameter count follows the closed form") {
    CbamParams p = random_params(16, 4, 7, 2);
    int64_t n = 0;
    for (Parameter* q : p.parameters()) n += q->value().size();
    CHECK(n == cbam_parameter_count(16, 4, 7));
    CHECK(n == 2 * (16 * 16 / 4) + 2 * 49 + 1);
  }

  TEST_CASE("zero MLP weights give uniform 0.5 channel attention") {
    CbamParams p = random_params(4, 2, 3, 3);
    p.mlp_w1.value().fill(0.0);
    p.mlp_w2.value().fill(0.0);
    Rng rng(4);
    Tensor f = random_tensor({4, 5, 5}, rng);
    Var mc = channel_attention(constant(f), p);
    for (double v : mc->value.data) CHECK(v == 0.5);
  }

  TEST_CASE("channel attention is invariant under spatial permutation") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed + 900);
      const int c = rng.uniform_int(1, 4);
      const int h = rng.uniform_int(2, 5), w = rng.uniform_int(2, 5);
      CbamParams p = random_params(c, c % 2 == 0 ? 2 : 1, 3, seed + 17);
      Tensor f = random_tensor({c, h, w}, rng);

      std::vector<int> perm(static_cast<size_t>(h * w));
      for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
      rng.shuffle(perm);
      Tensor g({c, h, w});
      for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < h * w; ++i)
          g[ci * h * w + perm[static_cast<size_t>(i)]] = f[ci * h * w + i];

      Var a = channel_attention(constant(f), p);
      Var b = channel_attention(constant(g), p);
      for (int ci = 0; ci < c; ++ci) CHECK(a->value[ci] == doctest::Approx(b->value[ci]).epsilon(1e-12));
    }
  }

  TEST_CASE("channel-count mismatch is rejected") {
    CbamParams p = random_params(4, 2, 3, 5);
    Tensor f({3, 4, 4});
    CHECK_THROWS(channel_attention(constant(f), p));
  }

  TEST_CASE("hand-set 2-channel case matches the dense-algebra oracle") {
    CbamParams p = random_params(2, 1, 1, 6);
    p.mlp_w1.value() = Tensor({2, 2}, {0.5, -0.25, 1.0, 0.75});
    p.mlp_w2.value() = Tensor({2, 2}, {-1.0, 0.5, 0.25, 2.0});
    Tensor f({2, 1, 1}, {0.8, -0.4});

    // with H=W=1 both pooled vectors equal the feature vector itself
    auto logits = oracle::mlp_dense_algebra({0.8, -0.4}, p.mlp_w1.value(), p.mlp_w2.value());
    Var got = channel_attention(constant(f), p);
    for (int i = 0; i < 2; ++i) {
      const double want = 1.0 / (1.0 + std::exp(-2.0 * logits[static_cast<size_t>(i)]));
      CHECK(got->value[i] == doctest::Approx(want).epsilon(1e-12));
    }
  }

  TEST_CASE("zero spatial kernel gives a uniform 0.5 map") {
    CbamParams p = random_params(3, 1, 1, 7);
    p.sam_w.value().fill(0.0);
    p.sam_b.value().fill(0.0);
    Rng rng(8);
    Tensor f = random_tensor({3, 4, 6}, rng);
    Var ms = spatial_attention(constant(f), p);
    REQUIRE(ms->value.shape == std::vector<int>{1, 4, 6});
    for (double v : ms->value.data) CHECK(v == 0.5);
  }

  TEST_CASE("k=1 constant input forces sigmoid((a+b)c + d) everywhere") {
    CbamParams p = random_params(2, 1, 1, 9);
    const double a = 0.7, b = -0.3, d = 0.2, c = 1.4;
    p.sam_w.value() = Tensor({1, 2, 1, 1}, {a, b});
    p.sam_b.value() = Tensor({1}, {d});
    Tensor f({2, 3, 3});
    f.fill(c);
    Var ms = spatial_attention(constant(f), p);
    const double want = 1.0 / (1.0 + std::exp(-((a + b) * c + d)));
    for (double v : ms->value.data) CHECK(v == doctest::Approx(want).epsilon(1e-12));
  }

  TEST_CASE("k=7 random case matches conv oracle plus sigmoid") {
    CbamParams p = random_params(5, 1, 7, 10);
    Rng rng(10);
    Tensor f = random_tensor({5, 9, 9}, rng);
    Tensor cat({2, 9, 9});
    Tensor avg = channel_pool_forward(f, PoolMode::avg);
    Tensor mxp = channel_pool_forward(f, PoolMode::max);
    std::copy(avg.data.begin(), avg.data.end(), cat.data.begin());
    std::copy(mxp.data.begin(), mxp.data.end(), cat.data.begin() + 81);
    Tensor conv = oracle::conv2d_loops(cat, p.sam_w.value(), p.sam_b.value(), 1, 3);

    Var ms = spatial_attention(constant(f), p);
    for (int64_t i = 0; i < ms->value.size(); ++i) {
      const double want = 1.0 / (1.0 + std::exp(-conv[i]));
      CHECK(ms->value[i] == doctest::Approx(want).epsilon(1e-12));
    }
  }

  TEST_CASE("large positive logits drive the refinement to identity") {
    CbamParams p = random_params(3, 1, 3, 11);
    p.mlp_w1.value().fill(1.0);
    p.mlp_w2.value().fill(2.0);
    p.sam_w.value().fill(0.0);
    p.sam_b.value() = Tensor({1}, {25.0});
    Tensor f({3, 4, 4});
    f.fill(0.9);
    auto [refined, atts] = cbam_forward_values(f, p);
    for (int64_t i = 0; i < f.size(); ++i)
      CHECK(std::fabs(refined[i] - f[i]) <= 1e-6);
    for (double v : atts.channel.data) CHECK(v < 1.0);
    for (double v : atts.spatial.data) CHECK(v < 1.0);
  }

  TEST_CASE("zero feature map stays zero under any parameters") {
    CbamParams p = random_params(4, 2, 5, 12);
    Tensor f({4, 6, 6});
    auto [refined, atts] = cbam_forward_values(f, p);
    for (double v : refined.data) CHECK(v == 0.0);
  }

  TEST_CASE("fuzz: attention bounds, attenuation and shape preservation") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed + 500);
      const int c = rng.uniform_int(1, 6);
      const int h = rng.uniform_int(1, 6), w = rng.uniform_int(1, 6);
      const int k = 1 + 2 * rng.uniform_int(0, 3);
      CbamParams p = random_params(c, rng.uniform_int(1, 2) == 1 ? 1 : c, k, seed + 31);
      Tensor f = random_tensor({c, h, w}, rng, -3.0, 3.0);
      auto [refined, atts] = cbam_forward_values(f, p);

      REQUIRE(refined.shape == f.shape);
      for (double v : atts.channel.data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
      for (double v : atts.spatial.data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
      for (int64_t i = 0; i < f.size(); ++i) CHECK(std::fabs(refined[i]) <= std::fabs(f[i]));
    }
  }

  TEST_CASE("gradient check through the whole block") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed + 700);
      const int c = 2 + static_cast<int>(seed % 3);
      CbamParams p = random_params(c, c % 2 == 0 ? 2 : 1, 3, seed + 77);
      Tensor f = random_tensor({c, 4, 4}, rng);

      double err = finite_diff_check(
          [&](const Var& v) { return sum(cbam_forward(v, p).refined); }, f, 1e-5);
      INFO("input grad, seed " << seed);
      CHECK(err <= 1e-4);

      std::vector<Parameter> params{p.mlp_w1, p.mlp_w2, p.sam_w, p.sam_b};
      double perr = finite_diff_check_params(
          [&]() { return sum(cbam_forward(constant(f), p).refined); }, params, 1e-5);
      INFO("param grad, seed " << seed);
      CHECK(perr <= 1e-4);
    }
  }

  TEST_CASE("channel attention gradients flow") {
    CbamParams p = random_params(4, 2, 3, 13);
    Rng rng(13);
    Tensor f = random_tensor({4, 3, 3}, rng);
    double err = finite_diff_check(
        [&](const Var& v) { return sum(channel_attention(v, p)); }, f, 1e-5);
    CHECK(err <= 1e-4);
    double serr = finite_diff_check(
        [&](const Var& v) { return sum(spatial_attention(v, p)); }, f, 1e-5);
    CHECK(serr <= 1e-4);
  }
}
