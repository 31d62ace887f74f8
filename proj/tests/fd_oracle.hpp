#pragma once

// Test-only centered finite differences, independent of lode::finite_diff_check.

#include <cmath>
#include <map>
#include <string>
#include <utility>

#include "lode/params.hpp"

namespace lode::testing {

/// ||a - b|| / (||a|| + ||b||); absolute difference when both are below 1e-10.
inline double rel_error(std::span<const double> a, std::span<const double> b) {
  double num = 0, den_a = 0, den_b = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den_a += a[i] * a[i];
    den_b += b[i] * b[i];
  }
  const double den = std::sqrt(den_a) + std::sqrt(den_b);
  return den < 1e-10 ? std::sqrt(num) : std::sqrt(num) / den;
}

/// Per-block relative error between `analytic` and centered differences of
/// `objective()` with respect to every entry of `params`.
template <class P, class Objective>
std::map<std::string, double> fd_block_errors(P& params, const P& analytic, Objective&& objective,
                                              double h = 1e-5) {
  std::map<std::string, double> out;
  auto blocks = param_blocks(params);
  const auto grads = param_blocks(analytic);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    std::vector<double> fd(blocks[b].values.size());
    for (std::size_t j = 0; j < fd.size(); ++j) {
      double& v = blocks[b].values[j];
      const double keep = v;
      v = keep + h;
      const double fp = objective();
      v = keep - h;
      const double fm = objective();
      v = keep;
      fd[j] = (fp - fm) / (2 * h);
    }
    out[blocks[b].name] = rel_error(grads[b].values, fd);
  }
  return out;
}

}  // namespace lode::testing
