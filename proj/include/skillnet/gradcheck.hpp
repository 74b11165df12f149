#pragma once

// Central finite-difference gradients, the independent oracle every
// backward implementation is checked against.

#include <functional>

#include "skillnet/tensor.hpp"

namespace skillnet {

// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per element. `f` is evaluated
// on a scratch copy of `at`; the input tensor is left untouched.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& at,
                               double eps = 1e-5) {
  if (eps <= 0.0) throw ContractError("finite_diff_grad: eps must be positive");
  Tensor x = at.clone();
  Tensor g(at.shape());
  for (size_t i = 0; i < x.data().size(); ++i) {
    const double orig = x.data()[i];
    x.data()[i] = orig + eps;
    const double fp = f(x);
    x.data()[i] = orig - eps;
    const double fm = f(x);
    x.data()[i] = orig;
    g.data()[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

// Same scheme, but perturbs `x` in place and calls a closure that reads it
// through shared storage. Used to differentiate a full model loss with
// respect to one parameter held in a store.
inline std::vector<double> finite_diff_grad_inplace(const std::function<double()>& f, Tensor& x,
                                                    double eps = 1e-5) {
  if (eps <= 0.0) throw ContractError("finite_diff_grad: eps must be positive");
  std::vector<double> g(x.data().size());
  for (size_t i = 0; i < x.data().size(); ++i) {
    const double orig = x.data()[i];
    x.data()[i] = orig + eps;
    const double fp = f();
    x.data()[i] = orig - eps;
    const double fm = f();
    x.data()[i] = orig;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

// Infinity-norm relative error between two gradients.
inline double grad_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("grad_rel_err: length mismatch");
  double scale = 1e-12, diff = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    diff = std::max(diff, std::abs(a[i] - b[i]));
  }
  return diff / scale;
}

inline double grad_rel_err(const Tensor& a, const Tensor& b) {
  return grad_rel_err(a.data(), b.data());
}

}  // namespace skillnet
