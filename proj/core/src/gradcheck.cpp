#include "oseg/gradcheck.hpp"

#include <cmath>
#include <limits>

namespace oseg {

namespace {

double scalar_eval(const Var& v) {
  require(v->value.scalar(), "finite_diff_check: fn must return a scalar");
  return v->value[0];
}

double rel_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max(1.0, std::fabs(analytic));
}

}  // namespace

double finite_diff_check(const std::function<Var(const Var&)>& fn, const Tensor& point,
                         double step) {
  require(step > 0.0, "finite_diff_check: step must be positive");
  Var x = make_input(point);
  Var loss = fn(x);
  double center = scalar_eval(loss);
  if (!std::isfinite(center)) return std::numeric_limits<double>::infinity();
  backward(loss);

  double worst = 0.0;
  Tensor probe = point;
  for (int64_t i = 0; i < point.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    double hi = scalar_eval(fn(constant(probe)));
    probe[i] = orig - step;
    double lo = scalar_eval(fn(constant(probe)));
    probe[i] = orig;
    if (!std::isfinite(hi) || !std::isfinite(lo)) return std::numeric_limits<double>::infinity();
    double numeric = (hi - lo) / (2.0 * step);
    worst = std::max(worst, rel_error(x->grad[i], numeric));
  }
  return worst;
}

double finite_diff_check_params(const std::function<Var()>& make_loss,
                                std::span<Parameter> params, double step) {
  require(step > 0.0, "finite_diff_check_params: step must be positive");
  for (Parameter& p : params) p.zero_grad();
  Var loss = make_loss();
  if (!std::isfinite(scalar_eval(loss))) return std::numeric_limits<double>::infinity();
  backward(loss);

  double worst = 0.0;
  for (Parameter& p : params) {
    for (int64_t i = 0; i < p.value().size(); ++i) {
      const double orig = p.value()[i];
      p.value()[i] = orig + step;
      double hi = scalar_eval(make_loss());
      p.value()[i] = orig - step;
      double lo = scalar_eval(make_loss());
      p.value()[i] = orig;
      if (!std::isfinite(hi) || !std::isfinite(lo)) return std::numeric_limits<double>::infinity();
      double numeric = (hi - lo) / (2.0 * step);
      worst = std::max(worst, rel_error(p.grad()[i], numeric));
    }
  }
  return worst;
}

}  // namespace oseg
