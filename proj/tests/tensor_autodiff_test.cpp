#include <cstring>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "oseg/autodiff.hpp"
#include "oseg/gradcheck.hpp"
#include "oseg/rng.hpp"

using namespace oseg;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape and data length stay consistent") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK_THROWS(Tensor({2, 0}));
    CHECK_THROWS(Tensor({2, 3}, std::vector<double>(5, 0.0)));
  }

  TEST_CASE("checkpoint dump round-trips bit-exactly") {
    Rng rng(7);
    Tensor t = random_tensor({3, 4, 5}, rng, -10, 10);
    t[0] = 0.1 + 0.2;  // not exactly representable; must survive untouched
    std::stringstream ss;
    write_tensor(ss, t);
    Tensor back = read_tensor(ss);
    REQUIRE(back.shape == t.shape);
    CHECK(std::memcmp(back.data.data(), t.data.data(), t.data.size() * sizeof(double)) == 0);
  }
}

TEST_SUITE("conv2d") {
  TEST_CASE("identity 1x1 kernel passes input through") {
    Tensor x({1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor w({1, 1, 1, 1}, {1.0});
    Tensor b({1}, {0.0});
    Tensor y = conv2d_forward(x, w, b, 1, 0);
    REQUIRE(y.shape == std::vector<int>{1, 3, 3});
    for (double v : y.data) CHECK(v == 1.0);
  }

  TEST_CASE("all-zero weights leave only the bias") {
    Rng rng(3);
    Tensor x = random_tensor({2, 4, 4}, rng);
    Tensor w({3, 2, 3, 3});
    Tensor b({3}, {0.5, -1.0, 2.0});
    Tensor y = conv2d_forward(x, w, b, 1, 1);
    for (int co = 0; co < 3; ++co)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(y.at(co, i, j) == b[co]);
  }

  TEST_CASE("matches the six-nested-loop oracle") {
    Rng rng(11);
    Tensor x = random_tensor({2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor y = conv2d_forward(x, w, b, 1, 1);
    Tensor want = oracle::conv2d_loops(x, w, b, 1, 1);
    REQUIRE(y.shape == want.shape);
    for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }

  TEST_CASE("oracle agreement across strides, pads and shapes") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
      const int cin = rng.uniform_int(1, 3), cout = rng.uniform_int(1, 3);
      const int h = rng.uniform_int(3, 8), w = rng.uniform_int(3, 8);
      const int k = 1 + 2 * rng.uniform_int(0, 1);
      const int stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 2);
      if (k > h + 2 * pad || k > w + 2 * pad) continue;
      Tensor x = random_tensor({cin, h, w}, rng);
      Tensor ww = random_tensor({cout, cin, k, k}, rng);
      Tensor b = random_tensor({cout}, rng);
      Tensor got = conv2d_forward(x, ww, b, stride, pad);
      Tensor want = oracle::conv2d_loops(x, ww, b, stride, pad);
      REQUIRE(got.shape == want.shape);
      for (int64_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("channel mismatch is rejected with a diagnostic") {
    Tensor x({2, 4, 4});
    Tensor w({1, 3, 3, 3});
    CHECK_THROWS_WITH_AS(conv2d_forward(x, w, Tensor{}, 1, 1),
                         doctest::Contains("do not match weight C_in"), std::invalid_argument);
  }

  TEST_CASE("kernel larger than padded input is rejected") {
    Tensor x({1, 2, 2});
    Tensor w({1, 1, 5, 5});
    CHECK_THROWS(conv2d_forward(x, w, Tensor{}, 1, 0));
  }

  TEST_CASE("forward is pure: identical inputs give bit-identical outputs") {
    Rng rng(5);
    Tensor x = random_tensor({3, 6, 6}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor y1 = conv2d_forward(x, w, b, 2, 1);
    Tensor y2 = conv2d_forward(x, w, b, 2, 1);
    CHECK(std::memcmp(y1.data.data(), y2.data.data(), y1.data.size() * sizeof(double)) == 0);
  }
}

TEST_SUITE("pooling") {
  TEST_CASE("constant input pools to the constant in both modes") {
    Tensor x({2, 3, 3});
    for (int i = 0; i < 9; ++i) x.data[static_cast<size_t>(i)] = 2.5;
    for (int i = 9; i < 18; ++i) x.data[static_cast<size_t>(i)] = -1.0;
    for (PoolMode m : {PoolMode::avg, PoolMode::max}) {
      Tensor y = global_pool_forward(x, m);
      CHECK(y[0] == 2.5);
      CHECK(y[1] == -1.0);
    }
  }

  TEST_CASE("forced arithmetic: {1,2,3,6} gives avg 3 and max 6") {
    Tensor x({1, 2, 2}, {1, 2, 3, 6});
    CHECK(global_pool_forward(x, PoolMode::avg)[0] == doctest::Approx(3.0));
    CHECK(global_pool_forward(x, PoolMode::max)[0] == 6.0);
  }

  TEST_CASE("global pool matches the naive reduce oracle") {
    Rng rng(21);
    Tensor x = random_tensor({4, 7, 5}, rng);
    for (bool mx : {false, true}) {
      Tensor got = global_pool_forward(x, mx ? PoolMode::max : PoolMode::avg);
      auto want = oracle::global_pool_naive(x, mx);
      for (int c = 0; c < 4; ++c)
        CHECK(got[c] == doctest::Approx(want[static_cast<size_t>(c)]).epsilon(1e-12));
    }
  }

  TEST_CASE("single-channel channel pool is the identity") {
    Rng rng(22);
    Tensor x = random_tensor({1, 4, 4}, rng);
    for (PoolMode m : {PoolMode::avg, PoolMode::max}) {
      Tensor y = channel_pool_forward(x, m);
      REQUIRE(y.shape == std::vector<int>{1, 4, 4});
      for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == x[i]);
    }
  }

  TEST_CASE("two constant channels reduce to their mean and max") {
    Tensor x({2, 3, 3});
    for (int i = 0; i < 9; ++i) x.data[static_cast<size_t>(i)] = 2.0;
    for (int i = 9; i < 18; ++i) x.data[static_cast<size_t>(i)] = 4.0;
    Tensor avg = channel_pool_forward(x, PoolMode::avg);
    Tensor mx = channel_pool_forward(x, PoolMode::max);
    for (int64_t i = 0; i < avg.size(); ++i) {
      CHECK(avg[i] == 3.0);
      CHECK(mx[i] == 4.0);
    }
  }

  TEST_CASE("channel pool matches the per-pixel oracle") {
    Rng rng(23);
    Tensor x = random_tensor({6, 4, 4}, rng);
    for (bool mx : {false, true}) {
      Tensor got = channel_pool_forward(x, mx ? PoolMode::max : PoolMode::avg);
      Tensor want = oracle::channel_pool_naive(x, mx);
      for (int64_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("empty spatial plane cannot be constructed") {
    CHECK_THROWS(Tensor({4, 0, 5}));
  }
}

TEST_SUITE("mlp") {
  TEST_CASE("all-zero weights give all-zero logits") {
    Rng rng(31);
    Tensor x = random_tensor({8}, rng);
    Tensor out = mlp_forward_values(x, Tensor({4, 8}), Tensor({8, 4}));
    for (double v : out.data) CHECK(v == 0.0);
  }

  TEST_CASE("identity weights: rectifier zeroes the negative lane") {
    Tensor x({2}, {1.0, -1.0});
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor out = mlp_forward_values(x, eye, eye);
    CHECK(out[0] == 1.0);
    CHECK(out[1] == 0.0);
  }

  TEST_CASE("random case matches the dense-algebra oracle") {
    Rng rng(32);
    Tensor x = random_tensor({8}, rng);
    Tensor w1 = random_tensor({4, 8}, rng);
    Tensor w2 = random_tensor({8, 4}, rng);
    Tensor got = mlp_forward_values(x, w1, w2);
    auto want = oracle::mlp_dense_algebra(x.data, w1, w2);
    for (int i = 0; i < 8; ++i)
      CHECK(got[i] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-12));
  }
}

TEST_SUITE("backward") {
  TEST_CASE("linear case: grad of sum(w*x) is exactly x") {
    Rng rng(41);
    Tensor xv = random_tensor({6}, rng);
    Parameter w(random_tensor({6}, rng));
    Var loss = sum(mul(w.var(), constant(xv)));
    backward(loss);
    for (int i = 0; i < 6; ++i) CHECK(w.grad()[i] == xv[i]);
  }

  TEST_CASE("parameter unused by the loss keeps a zero grad") {
    Rng rng(42);
    Parameter used(random_tensor({3}, rng));
    Parameter unused(random_tensor({3}, rng));
    backward(sum(used.var()));
    for (int i = 0; i < 3; ++i) {
      CHECK(used.grad()[i] == 1.0);
      CHECK(unused.grad()[i] == 0.0);
    }
  }

  TEST_CASE("parameter used twice accumulates both path gradients") {
    Rng rng(43);
    Tensor av = random_tensor({5}, rng);
    Tensor bv = random_tensor({5}, rng);

    Parameter w(random_tensor({5}, rng));
    backward(add(sum(mul(w.var(), constant(av))), sum(mul(w.var(), constant(bv)))));

    // split-and-add oracle: two separate parameters, one per path
    Parameter wa(w.value()), wb(w.value());
    backward(sum(mul(wa.var(), constant(av))));
    backward(sum(mul(wb.var(), constant(bv))));
    for (int i = 0; i < 5; ++i)
      CHECK(w.grad()[i] == doctest::Approx(wa.grad()[i] + wb.grad()[i]).epsilon(1e-15));
  }

  TEST_CASE("backward on a non-scalar is rejected") {
    Parameter w(Tensor({3}, {1, 2, 3}));
    CHECK_THROWS(backward(relu(w.var())));
  }

  TEST_CASE("grads accumulate across backward calls until zero_grad") {
    Parameter w(Tensor({2}, {1.0, 2.0}));
    backward(sum(w.var()));
    backward(sum(w.var()));
    CHECK(w.grad()[0] == 2.0);
    w.zero_grad();
    CHECK(w.grad()[0] == 0.0);
    CHECK(w.grad().shape == w.value().shape);
  }
}

TEST_SUITE("finite_diff") {
  TEST_CASE("sum of squares at (1,2,3) has tiny central-difference error") {
    Tensor point({3}, {1, 2, 3});
    double err = finite_diff_check([](const Var& x) { return sum(mul(x, x)); }, point, 1e-5);
    CHECK(err <= 1e-8);
  }

  TEST_CASE("constant function has exactly zero error") {
    Tensor point({4}, {1, 2, 3, 4});
    double err = finite_diff_check(
        [](const Var& x) { return sum(mul(x, constant(Tensor({4})))); }, point, 1e-5);
    CHECK(err == 0.0);
  }

  TEST_CASE("every operator passes the gradient check on 20 random shapes") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed + 100);
      const int c = rng.uniform_int(1, 3);
      const int h = rng.uniform_int(2, 5);
      const int w = rng.uniform_int(2, 5);
      Tensor x3 = random_tensor({c, h, w}, rng);

      auto check = [&](const std::string& what, const std::function<Var(const Var&)>& fn,
                       const Tensor& point) {
        const double err = finite_diff_check(fn, point, 1e-5);
        INFO(what, " seed ", seed);
        CHECK(err <= 1e-4);
      };

      Tensor wc = random_tensor({2, c, 3, 3}, rng);
      Tensor bc = random_tensor({2}, rng);
      check("conv2d/input", [&](const Var& v) {
        return sum(conv2d(v, constant(wc), constant(bc), 1, 1));
      }, x3);
      check("conv2d/weights", [&](const Var& v) {
        return sum(conv2d(constant(x3), v, constant(bc), 1, 1));
      }, wc);
      check("global_avg", [&](const Var& v) { return sum(global_pool(v, PoolMode::avg)); }, x3);
      check("global_max", [&](const Var& v) { return sum(mul(global_pool(v, PoolMode::max),
                                                             global_pool(v, PoolMode::max))); },
            x3);
      check("channel_avg", [&](const Var& v) { return sum(channel_pool(v, PoolMode::avg)); }, x3);
      check("channel_max", [&](const Var& v) { return mean(channel_pool(v, PoolMode::max)); }, x3);
      check("relu_sigmoid", [&](const Var& v) { return sum(sigmoid(relu(v))); }, x3);

      Tensor vec = random_tensor({6}, rng);
      Tensor dw = random_tensor({4, 6}, rng);
      check("dense", [&](const Var& v) { return sum(dense(constant(dw), v)); }, vec);
      check("softmax_ce", [&](const Var& v) { return softmax_cross_entropy(v, 1); }, vec);
      Tensor targets({6});
      for (double& t : targets.data) t = rng.uniform() > 0.5 ? 1.0 : 0.0;
      check("bce", [&](const Var& v) { return bce_with_logits_mean(v, targets); }, vec);
      Tensor sq_target = random_tensor({6}, rng);
      check("sq_err", [&](const Var& v) { return squared_error_sum(v, sq_target); }, vec);
      Tensor mulc = random_tensor({6}, rng);
      Tensor addc = random_tensor({6}, rng);
      check("affine", [&](const Var& v) { return sum(affine(v, mulc, addc)); }, vec);

      Tensor sc = random_tensor({c}, rng);
      check("mul_channel", [&](const Var& v) { return sum(mul_channel(v, constant(sc))); }, x3);
      Tensor sp = random_tensor({1, h, w}, rng);
      check("mul_spatial", [&](const Var& v) { return sum(mul_spatial(v, constant(sp))); }, x3);
      check("concat_slice", [&](const Var& v) {
        return sum(slice_channels(concat_channels(v, v), c, 2 * c));
      }, x3);
      check("cell_vector", [&](const Var& v) { return sum(cell_vector(v, h - 1, 0, 0, c)); }, x3);
    }
  }

  TEST_CASE("non-finite evaluations make the check fail") {
    Tensor point({1}, {2.0});
    double err = finite_diff_check(
        [](const Var& x) {
          Tensor big({1}, {1e308});
          return sum(mul(mul(x, constant(big)), constant(big)));
        },
        point, 1e-5);
    CHECK(err > 1e-4);  // reported as infinite
  }
}
