#include "oseg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

namespace oseg {

namespace {

Var make_node(const char* op, Tensor value, std::vector<Var> inputs,
              std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  for (const Var& in : n->inputs) {
    if (in && in->needs_grad) n->needs_grad = true;
  }
  if (n->needs_grad) {
    n->grad = Tensor(n->value.shape);
    n->backprop = std::move(backprop);
  }
  return n;
}

void check_same_shape(const char* op, const Var& a, const Var& b) {
  require(a->value.shape == b->value.shape,
          std::string(op) + ": shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
}

void check_chw(const char* op, const Var& x) {
  require(x->value.ndim() == 3, std::string(op) + ": expected [C,H,W], got " + x->value.shape_str());
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->op = "const";
  n->value = std::move(v);
  return n;
}

Var make_input(Tensor v) {
  auto n = std::make_shared<Node>();
  n->op = "input";
  n->value = std::move(v);
  n->needs_grad = true;
  n->grad = Tensor(n->value.shape);
  return n;
}

Parameter::Parameter(Tensor init) {
  node_ = make_input(std::move(init));
  node_->op = "param";
  node_->param_leaf = true;
}

Var add(const Var& a, const Var& b) {
  check_same_shape("add", a, b);
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_node("add", std::move(out), {a, b}, [](Node& n) {
    for (int k = 0; k < 2; ++k) {
      Node& in = *n.inputs[k];
      if (!in.needs_grad) continue;
      for (int64_t i = 0; i < n.grad.size(); ++i) in.grad[i] += n.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape("sub", a, b);
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_node("sub", std::move(out), {a, b}, [](Node& n) {
    if (n.inputs[0]->needs_grad)
      for (int64_t i = 0; i < n.grad.size(); ++i) n.inputs[0]->grad[i] += n.grad[i];
    if (n.inputs[1]->needs_grad)
      for (int64_t i = 0; i < n.grad.size(); ++i) n.inputs[1]->grad[i] -= n.grad[i];
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape("mul", a, b);
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_node("mul", std::move(out), {a, b}, [](Node& n) {
    Node& a = *n.inputs[0];
    Node& b = *n.inputs[1];
    if (a.needs_grad)
      for (int64_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i] * b.value[i];
    if (b.needs_grad)
      for (int64_t i = 0; i < n.grad.size(); ++i) b.grad[i] += n.grad[i] * a.value[i];
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (double& v : out.data) v *= s;
  return make_node("scale", std::move(out), {a}, [s](Node& n) {
    Node& a = *n.inputs[0];
    for (int64_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i] * s;
  });
}

Var affine(const Var& a, Tensor m, Tensor c) {
  require(a->value.shape == m.shape && a->value.shape == c.shape, "affine: coefficient shape mismatch");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = out[i] * m[i] + c[i];
  auto mm = std::make_shared<Tensor>(std::move(m));
  return make_node("affine", std::move(out), {a}, [mm](Node& n) {
    Node& a = *n.inputs[0];
    for (int64_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i] * (*mm)[i];
  });
}

Var relu(const Var& a) {
  Tensor out = a->value;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return make_node("relu", std::move(out), {a}, [](Node& n) {
    Node& a = *n.inputs[0];
    for (int64_t i = 0; i < n.grad.size(); ++i)
      if (a.value[i] > 0.0) a.grad[i] += n.grad[i];
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a->value;
  for (double& v : out.data) v = stable_sigmoid(v);
  return make_node("sigmoid", std::move(out), {a}, [](Node& n) {
    Node& a = *n.inputs[0];
    for (int64_t i = 0; i < n.grad.size(); ++i) {
      double s = n.value[i];
      a.grad[i] += n.grad[i] * s * (1.0 - s);
    }
  });
}

Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a->value.data) acc += v;
  return make_node("sum", Tensor({1}, {acc}), {a}, [](Node& n) {
    Node& a = *n.inputs[0];
    double g = n.grad[0];
    for (int64_t i = 0; i < a.grad.size(); ++i) a.grad[i] += g;
  });
}

Var mean(const Var& a) {
  double acc = 0.0;
  for (double v : a->value.data) acc += v;
  double inv = 1.0 / static_cast<double>(a->value.size());
  return make_node("mean", Tensor({1}, {acc * inv}), {a}, [inv](Node& n) {
    Node& a = *n.inputs[0];
    double g = n.grad[0] * inv;
    for (int64_t i = 0; i < a.grad.size(); ++i) a.grad[i] += g;
  });
}

Var dense(const Var& w, const Var& x) {
  require(w->value.ndim() == 2, "dense: weight must be [Out,In]");
  require(x->value.ndim() == 1, "dense: input must be a vector");
  const int out_n = w->value.shape[0];
  const int in_n = w->value.shape[1];
  require(x->value.shape[0] == in_n, "dense: input length " + std::to_string(x->value.shape[0]) +
                                         " does not match weight columns " + std::to_string(in_n));
  Tensor out({out_n});
  for (int o = 0; o < out_n; ++o) {
    const double* wr = w->value.data.data() + static_cast<size_t>(o) * in_n;
    double acc = 0.0;
    for (int i = 0; i < in_n; ++i) acc += wr[i] * x->value[i];
    out[o] = acc;
  }
  return make_node("dense", std::move(out), {w, x}, [out_n, in_n](Node& n) {
    Node& w = *n.inputs[0];
    Node& x = *n.inputs[1];
    for (int o = 0; o < out_n; ++o) {
      double g = n.grad[o];
      if (g == 0.0) continue;
      if (w.needs_grad) {
        double* wg = w.grad.data.data() + static_cast<size_t>(o) * in_n;
        for (int i = 0; i < in_n; ++i) wg[i] += g * x.value[i];
      }
      if (x.needs_grad) {
        const double* wr = w.value.data.data() + static_cast<size_t>(o) * in_n;
        for (int i = 0; i < in_n; ++i) x.grad[i] += g * wr[i];
      }
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  check_chw("conv2d", x);
  require(w->value.ndim() == 4, "conv2d: weight must be [Cout,Cin,k,k]");
  const int cin = x->value.shape[0], h = x->value.shape[1], wid = x->value.shape[2];
  const int cout = w->value.shape[0], kh = w->value.shape[2], kw = w->value.shape[3];
  require(w->value.shape[1] == cin, "conv2d: input channels (" + std::to_string(cin) +
                                        ") do not match weight C_in (" + std::to_string(w->value.shape[1]) + ")");
  require(kh == kw, "conv2d: kernel must be square");
  require(stride >= 1, "conv2d: stride must be positive");
  require(pad >= 0, "conv2d: pad must be nonnegative");
  require(kh <= h + 2 * pad && kw <= wid + 2 * pad, "conv2d: kernel larger than padded input");
  if (b) require(b->value.ndim() == 1 && b->value.shape[0] == cout, "conv2d: bias must be [Cout]");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wid + 2 * pad - kw) / stride + 1;

  // Valid output ranges per kernel offset, so inner loops are branch-free:
  // ky admits oy with 0 <= oy*stride - pad + ky < h, likewise kx/ox.
  auto lo = [stride, pad](int k) { return std::max(0, (pad - k + stride - 1) / stride); };
  auto hi = [stride, pad](int k, int extent, int n) {
    const int num = extent - 1 + pad - k;
    return num < 0 ? 0 : std::min(n, num / stride + 1);
  };

  Tensor out({cout, oh, ow});
  {
    const double* xd = x->value.data.data();
    const double* wd = w->value.data.data();
    double* od = out.data.data();
    for (int co = 0; co < cout; ++co) {
      const double bias = b ? b->value[co] : 0.0;
      double* oc = od + static_cast<size_t>(co) * oh * ow;
      for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) oc[i] = bias;
      for (int ci = 0; ci < cin; ++ci) {
        const double* xc = xd + static_cast<size_t>(ci) * h * wid;
        const double* wc = wd + (static_cast<size_t>(co) * cin + ci) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          const int oy0 = lo(ky), oy1 = hi(ky, h, oh);
          for (int kx = 0; kx < kw; ++kx) {
            const double wv = wc[static_cast<size_t>(ky) * kw + kx];
            const int ox0 = lo(kx), ox1 = hi(kx, wid, ow);
            for (int oy = oy0; oy < oy1; ++oy) {
              const int64_t xbase = static_cast<int64_t>(oy * stride - pad + ky) * wid - pad + kx;
              double* orow = oc + static_cast<size_t>(oy) * ow;
              for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * xc[xbase + ox * stride];
            }
          }
        }
      }
    }
  }

  std::vector<Var> inputs = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  auto back = [cin, h, wid, cout, kh, kw, stride, pad, oh, ow, lo, hi](Node& n) {
    Node& x = *n.inputs[0];
    Node& w = *n.inputs[1];
    Node* b = n.inputs.size() > 2 ? n.inputs[2].get() : nullptr;
    const double* xd = x.value.data.data();
    const double* wd = w.value.data.data();
    const double* gd = n.grad.data.data();
    double* xg = x.needs_grad ? x.grad.data.data() : nullptr;
    double* wg = w.needs_grad ? w.grad.data.data() : nullptr;
    for (int co = 0; co < cout; ++co) {
      const double* gc = gd + static_cast<size_t>(co) * oh * ow;
      if (b && b->needs_grad) {
        double bacc = 0.0;
        for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) bacc += gc[i];
        b->grad[co] += bacc;
      }
      for (int ci = 0; ci < cin; ++ci) {
        const double* xc = xd + static_cast<size_t>(ci) * h * wid;
        double* xgc = xg ? xg + static_cast<size_t>(ci) * h * wid : nullptr;
        const size_t woff = (static_cast<size_t>(co) * cin + ci) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          const int oy0 = lo(ky), oy1 = hi(ky, h, oh);
          for (int kx = 0; kx < kw; ++kx) {
            const int ox0 = lo(kx), ox1 = hi(kx, wid, ow);
            double wacc = 0.0;
            const double wv = wd[woff + static_cast<size_t>(ky) * kw + kx];
            for (int oy = oy0; oy < oy1; ++oy) {
              const int64_t xbase = static_cast<int64_t>(oy * stride - pad + ky) * wid - pad + kx;
              const double* grow = gc + static_cast<size_t>(oy) * ow;
              if (xgc) {
                for (int ox = ox0; ox < ox1; ++ox) {
                  const double g = grow[ox];
                  wacc += g * xc[xbase + ox * stride];
                  xgc[xbase + ox * stride] += g * wv;
                }
              } else {
                for (int ox = ox0; ox < ox1; ++ox) wacc += grow[ox] * xc[xbase + ox * stride];
              }
            }
            if (wg) wg[woff + static_cast<size_t>(ky) * kw + kx] += wacc;
          }
        }
      }
    }
  };
  return make_node("conv2d", std::move(out), std::move(inputs), std::move(back));
}

Var global_pool(const Var& x, PoolMode mode) {
  check_chw("global_pool", x);
  const int c = x->value.shape[0], h = x->value.shape[1], w = x->value.shape[2];
  require(h * w >= 1, "global_pool: empty spatial plane");
  const int64_t plane = static_cast<int64_t>(h) * w;
  Tensor out({c});
  if (mode == PoolMode::avg) {
    const double inv = 1.0 / static_cast<double>(plane);
    for (int ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      for (int64_t i = 0; i < plane; ++i) acc += x->value[ci * plane + i];
      out[ci] = acc * inv;
    }
    return make_node("gavg", std::move(out), {x}, [c, plane, inv](Node& n) {
      Node& x = *n.inputs[0];
      for (int ci = 0; ci < c; ++ci) {
        double g = n.grad[ci] * inv;
        for (int64_t i = 0; i < plane; ++i) x.grad[ci * plane + i] += g;
      }
    });
  }
  std::vector<int64_t> argmax(c);
  for (int ci = 0; ci < c; ++ci) {
    int64_t best = ci * plane;
    for (int64_t i = 1; i < plane; ++i)
      if (x->value[ci * plane + i] > x->value[best]) best = ci * plane + i;
    argmax[ci] = best;
    out[ci] = x->value[best];
  }
  return make_node("gmax", std::move(out), {x}, [c, argmax](Node& n) {
    Node& x = *n.inputs[0];
    for (int ci = 0; ci < c; ++ci) x.grad[argmax[ci]] += n.grad[ci];
  });
}

Var channel_pool(const Var& x, PoolMode mode) {
  check_chw("channel_pool", x);
  const int c = x->value.shape[0], h = x->value.shape[1], w = x->value.shape[2];
  require(c >= 1, "channel_pool: need at least one channel");
  const int64_t plane = static_cast<int64_t>(h) * w;
  Tensor out({1, h, w});
  if (mode == PoolMode::avg) {
    const double inv = 1.0 / static_cast<double>(c);
    for (int64_t i = 0; i < plane; ++i) {
      double acc = 0.0;
      for (int ci = 0; ci < c; ++ci) acc += x->value[ci * plane + i];
      out[i] = acc * inv;
    }
    return make_node("cavg", std::move(out), {x}, [c, plane, inv](Node& n) {
      Node& x = *n.inputs[0];
      for (int64_t i = 0; i < plane; ++i) {
        double g = n.grad[i] * inv;
        for (int ci = 0; ci < c; ++ci) x.grad[ci * plane + i] += g;
      }
    });
  }
  std::vector<int> argmax(static_cast<size_t>(plane));
  for (int64_t i = 0; i < plane; ++i) {
    int best = 0;
    for (int ci = 1; ci < c; ++ci)
      if (x->value[ci * plane + i] > x->value[best * plane + i]) best = ci;
    argmax[static_cast<size_t>(i)] = best;
    out[i] = x->value[best * plane + i];
  }
  return make_node("cmax", std::move(out), {x}, [plane, argmax](Node& n) {
    Node& x = *n.inputs[0];
    for (int64_t i = 0; i < plane; ++i) x.grad[argmax[static_cast<size_t>(i)] * plane + i] += n.grad[i];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  check_chw("concat_channels", a);
  check_chw("concat_channels", b);
  require(a->value.shape[1] == b->value.shape[1] && a->value.shape[2] == b->value.shape[2],
          "concat_channels: spatial extents differ");
  const int ca = a->value.shape[0], cb = b->value.shape[0];
  Tensor out({ca + cb, a->value.shape[1], a->value.shape[2]});
  std::copy(a->value.data.begin(), a->value.data.end(), out.data.begin());
  std::copy(b->value.data.begin(), b->value.data.end(), out.data.begin() + a->value.size());
  return make_node("concat_c", std::move(out), {a, b}, [](Node& n) {
    Node& a = *n.inputs[0];
    Node& b = *n.inputs[1];
    const int64_t na = a.value.size();
    if (a.needs_grad)
      for (int64_t i = 0; i < na; ++i) a.grad[i] += n.grad[i];
    if (b.needs_grad)
      for (int64_t i = 0; i < b.value.size(); ++i) b.grad[i] += n.grad[na + i];
  });
}

Var mul_channel(const Var& x, const Var& s) {
  check_chw("mul_channel", x);
  require(s->value.ndim() == 1 && s->value.shape[0] == x->value.shape[0],
          "mul_channel: scale must be [C]");
  const int c = x->value.shape[0];
  const int64_t plane = static_cast<int64_t>(x->value.shape[1]) * x->value.shape[2];
  Tensor out = x->value;
  for (int ci = 0; ci < c; ++ci)
    for (int64_t i = 0; i < plane; ++i) out[ci * plane + i] *= s->value[ci];
  return make_node("mul_ch", std::move(out), {x, s}, [c, plane](Node& n) {
    Node& x = *n.inputs[0];
    Node& s = *n.inputs[1];
    for (int ci = 0; ci < c; ++ci) {
      double sv = s.value[ci];
      double acc = 0.0;
      for (int64_t i = 0; i < plane; ++i) {
        double g = n.grad[ci * plane + i];
        if (x.needs_grad) x.grad[ci * plane + i] += g * sv;
        acc += g * x.value[ci * plane + i];
      }
      if (s.needs_grad) s.grad[ci] += acc;
    }
  });
}

Var mul_spatial(const Var& x, const Var& m) {
  check_chw("mul_spatial", x);
  require(m->value.ndim() == 3 && m->value.shape[0] == 1 && m->value.shape[1] == x->value.shape[1] &&
              m->value.shape[2] == x->value.shape[2],
          "mul_spatial: map must be [1,H,W] matching input");
  const int c = x->value.shape[0];
  const int64_t plane = static_cast<int64_t>(x->value.shape[1]) * x->value.shape[2];
  Tensor out = x->value;
  for (int ci = 0; ci < c; ++ci)
    for (int64_t i = 0; i < plane; ++i) out[ci * plane + i] *= m->value[i];
  return make_node("mul_sp", std::move(out), {x, m}, [c, plane](Node& n) {
    Node& x = *n.inputs[0];
    Node& m = *n.inputs[1];
    for (int ci = 0; ci < c; ++ci) {
      for (int64_t i = 0; i < plane; ++i) {
        double g = n.grad[ci * plane + i];
        if (x.needs_grad) x.grad[ci * plane + i] += g * m.value[i];
        if (m.needs_grad) m.grad[i] += g * x.value[ci * plane + i];
      }
    }
  });
}

Var slice_channels(const Var& x, int c0, int c1) {
  check_chw("slice_channels", x);
  require(0 <= c0 && c0 < c1 && c1 <= x->value.shape[0], "slice_channels: bad range");
  const int64_t plane = static_cast<int64_t>(x->value.shape[1]) * x->value.shape[2];
  Tensor out({c1 - c0, x->value.shape[1], x->value.shape[2]});
  std::copy(x->value.data.begin() + c0 * plane, x->value.data.begin() + c1 * plane, out.data.begin());
  return make_node("slice_c", std::move(out), {x}, [c0, plane](Node& n) {
    Node& x = *n.inputs[0];
    for (int64_t i = 0; i < n.grad.size(); ++i) x.grad[c0 * plane + i] += n.grad[i];
  });
}

Var crop_spatial(const Var& x, int r0, int r1, int c0, int c1) {
  check_chw("crop_spatial", x);
  const int h = x->value.shape[1], w = x->value.shape[2];
  require(0 <= r0 && r0 < r1 && r1 <= h && 0 <= c0 && c0 < c1 && c1 <= w,
          "crop_spatial: window out of range");
  const int c = x->value.shape[0];
  const int ch = r1 - r0, cw = c1 - c0;
  Tensor out({c, ch, cw});
  for (int ci = 0; ci < c; ++ci)
    for (int r = 0; r < ch; ++r)
      for (int cc = 0; cc < cw; ++cc) out.at(ci, r, cc) = x->value.at(ci, r0 + r, c0 + cc);
  return make_node("crop_sp", std::move(out), {x}, [r0, c0, ch, cw](Node& n) {
    Node& x = *n.inputs[0];
    const int c = x.value.shape[0];
    for (int ci = 0; ci < c; ++ci)
      for (int r = 0; r < ch; ++r)
        for (int cc = 0; cc < cw; ++cc)
          x.grad.at(ci, r0 + r, c0 + cc) += n.grad.at(ci, r, cc);
  });
}

Var cell_vector(const Var& x, int i, int j, int c0, int c1) {
  check_chw("cell_vector", x);
  require(0 <= i && i < x->value.shape[1] && 0 <= j && j < x->value.shape[2], "cell_vector: cell out of range");
  require(0 <= c0 && c0 < c1 && c1 <= x->value.shape[0], "cell_vector: bad channel range");
  const int h = x->value.shape[1], w = x->value.shape[2];
  Tensor out({c1 - c0});
  for (int c = c0; c < c1; ++c) out[c - c0] = x->value.at(c, i, j);
  const int64_t base = (static_cast<int64_t>(i) * w) + j;
  const int64_t plane = static_cast<int64_t>(h) * w;
  return make_node("cell_vec", std::move(out), {x}, [base, plane, c0](Node& n) {
    Node& x = *n.inputs[0];
    for (int64_t c = 0; c < n.grad.size(); ++c) x.grad[(c0 + c) * plane + base] += n.grad[c];
  });
}

namespace {

Var bce_with_logits(const Var& logits, Tensor targets, double scale_out) {
  require(logits->value.shape == targets.shape, "bce: target shape mismatch");
  const int64_t n = logits->value.size();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double z = logits->value[i], t = targets[i];
    acc += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::fabs(z)));
  }
  auto tt = std::make_shared<Tensor>(std::move(targets));
  return make_node("bce", Tensor({1}, {acc * scale_out}), {logits}, [tt, scale_out](Node& nn) {
    Node& z = *nn.inputs[0];
    double g = nn.grad[0] * scale_out;
    for (int64_t i = 0; i < z.grad.size(); ++i)
      z.grad[i] += g * (stable_sigmoid(z.value[i]) - (*tt)[i]);
  });
}

}  // namespace

Var bce_with_logits_mean(const Var& logits, Tensor targets) {
  const double inv = 1.0 / static_cast<double>(logits->value.size());
  return bce_with_logits(logits, std::move(targets), inv);
}

Var bce_with_logits_sum(const Var& logits, Tensor targets) {
  return bce_with_logits(logits, std::move(targets), 1.0);
}

Var softmax_cross_entropy(const Var& logits, int label) {
  require(logits->value.ndim() == 1, "softmax_ce: logits must be a vector");
  const int k = logits->value.shape[0];
  require(0 <= label && label < k, "softmax_ce: label out of range");
  double m = logits->value[0];
  for (int i = 1; i < k; ++i) m = std::max(m, logits->value[i]);
  double se = 0.0;
  for (int i = 0; i < k; ++i) se += std::exp(logits->value[i] - m);
  const double lse = m + std::log(se);
  return make_node("softmax_ce", Tensor({1}, {lse - logits->value[label]}), {logits},
                   [label, lse](Node& n) {
                     Node& z = *n.inputs[0];
                     double g = n.grad[0];
                     for (int64_t i = 0; i < z.grad.size(); ++i) {
                       double p = std::exp(z.value[i] - lse);
                       z.grad[i] += g * (p - (i == label ? 1.0 : 0.0));
                     }
                   });
}

Var squared_error_sum(const Var& x, Tensor target) {
  require(x->value.shape == target.shape, "squared_error_sum: target shape mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < x->value.size(); ++i) {
    double d = x->value[i] - target[i];
    acc += d * d;
  }
  auto tt = std::make_shared<Tensor>(std::move(target));
  return make_node("sq_err", Tensor({1}, {acc}), {x}, [tt](Node& n) {
    Node& x = *n.inputs[0];
    double g = n.grad[0];
    for (int64_t i = 0; i < x.grad.size(); ++i) x.grad[i] += g * 2.0 * (x.value[i] - (*tt)[i]);
  });
}

Var mlp_forward(const Var& x, const Parameter& w1, const Parameter& w2) {
  require(x->value.ndim() == 1, "mlp_forward: input must be a vector");
  const int c = x->value.shape[0];
  require(w1.value().ndim() == 2 && w1.value().shape[1] == c, "mlp_forward: w1 must be [hidden,C]");
  require(w2.value().ndim() == 2 && w2.value().shape[0] == c &&
              w2.value().shape[1] == w1.value().shape[0],
          "mlp_forward: w2 must be [C,hidden]");
  return dense(w2.var(), relu(dense(w1.var(), x)));
}

void backward(const Var& loss) {
  require(loss != nullptr, "backward: null loss");
  require(loss->value.scalar(), "backward: loss must be scalar, got " + loss->value.shape_str());
  if (!loss->needs_grad) return;  // nothing trainable below

  // Iterative post-order: inputs before node, each node once.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      Node* in = node->inputs[idx++].get();
      if (in->needs_grad && visited.insert(in).second) stack.emplace_back(in, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->param_leaf) n->grad.fill(0.0);
  }
  loss->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  Var bb = b.empty() ? Var{} : constant(b);
  return conv2d(constant(x), constant(w), bb, stride, pad)->value;
}

Tensor global_pool_forward(const Tensor& x, PoolMode mode) {
  return global_pool(constant(x), mode)->value;
}

Tensor channel_pool_forward(const Tensor& x, PoolMode mode) {
  return channel_pool(constant(x), mode)->value;
}

Tensor mlp_forward_values(const Tensor& x, const Tensor& w1, const Tensor& w2) {
  return dense(constant(w2), relu(dense(constant(w1), constant(x))))->value;
}

}  // namespace oseg
