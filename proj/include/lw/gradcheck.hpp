#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lw/tensor.hpp"

namespace lw::ag {

/// Compares analytic gradients against central finite differences for
/// every coordinate of every listed parameter.  f must rebuild the same
/// scalar loss on each call (with a null tape it runs forward-only).
/// Returns the worst scaled error  |a - n| / max(1e-3, |a| + |n|); the
/// floor turns a relative threshold t into an absolute tolerance 1e-3*t
/// where the gradient is too small for central differences to resolve.
template <class Real>
double finite_diff_check(const std::function<Tensor<Real>(Tape<Real>*)>& f,
                         const std::vector<Tensor<Real>>& params, Real eps) {
  for (Tensor<Real> p : params) p.clear_grad();
  Tape<Real> tape;
  Tensor<Real> loss = f(&tape);
  tape.backward(loss);

  std::vector<std::vector<Real>> analytic;
  analytic.reserve(params.size());
  for (Tensor<Real> p : params)
    analytic.push_back(p.has_grad() ? p.grad()
                                    : std::vector<Real>(p.numel(), Real(0)));

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<Real> p = params[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const Real orig = p.values()[i];
      p.values()[i] = orig + eps;
      const double lp = static_cast<double>(f(nullptr).item());
      p.values()[i] = orig - eps;
      const double lm = static_cast<double>(f(nullptr).item());
      p.values()[i] = orig;
      const double numeric = (lp - lm) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[pi][i]);
      const double rel =
          std::abs(a - numeric) / std::max(1e-3, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace lw::ag
