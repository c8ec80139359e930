#pragma once

#include <functional>
#include <span>

#include "oseg/autodiff.hpp"

namespace oseg {

/// Central-difference check of d(fn)/d(point). Returns the maximum over
/// coordinates of |analytic - numeric| / max(1, |analytic|); +inf when any
/// evaluation is non-finite (the check then fails at every tolerance).
double finite_diff_check(const std::function<Var(const Var&)>& fn, const Tensor& point,
                         double step = 1e-5);

/// Same check applied to every coordinate of every parameter reachable from
/// the loss built by `make_loss` (which must rebuild the graph each call).
double finite_diff_check_params(const std::function<Var()>& make_loss,
                                std::span<Parameter> params, double step = 1e-5);

}  // namespace oseg
