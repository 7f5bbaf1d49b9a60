// File: gradcheck.h
// Description: Central finite-difference gradient checking over any parameter
// structure that supports visit_tensors().

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "adrbc/nn.h"

namespace adrbc::gradcheck {

struct Report {
  double max_rel_error = 0.0;  // ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf, floor)
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
};

double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                      double floor = 1e-8);

/// Merge two reports (max of errors, sum of coordinates).
Report combine(const Report& a, const Report& b);

template <class Params>
std::vector<double> flatten(const Params& params) {
  std::vector<double> out;
  visit_tensors(params, [&](std::span<const double> t) { out.insert(out.end(), t.begin(), t.end()); });
  return out;
}

/// Compares `analytic` with central differences of `objective` (which must read
/// the current contents of `params`). Only tensors whose visit index passes
/// `select` are perturbed. `params` is restored exactly afterwards.
template <class Params>
Report check(Params& params, const Params& analytic, const std::function<double()>& objective,
             double eps = 1e-5, const std::function<bool(std::size_t)>& select = {}) {
  std::vector<std::span<double>> tensors;
  visit_tensors(params, [&](std::span<double> t) { tensors.push_back(t); });
  std::vector<std::span<const double>> grads;
  visit_tensors(analytic, [&](std::span<const double> t) { grads.push_back(t); });
  if (tensors.size() != grads.size()) {
    throw ConfigError("gradcheck: analytic gradient structure does not match parameters");
  }
  std::vector<double> a;
  std::vector<double> n;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (select && !select(i)) {
      continue;
    }
    auto& t = tensors[i];
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double saved = t[j];
      t[j] = saved + eps;
      const double up = objective();
      t[j] = saved - eps;
      const double down = objective();
      t[j] = saved;
      n.push_back((up - down) / (2.0 * eps));
      a.push_back(grads[i][j]);
    }
  }
  Report report;
  report.coordinates = a.size();
  report.max_rel_error = relative_error(a, n);
  for (std::size_t k = 0; k < a.size(); ++k) {
    report.max_abs_error = std::max(report.max_abs_error, std::abs(a[k] - n[k]));
  }
  return report;
}

/// Central differences of a scalar function of a matrix input (used for
/// gradients with respect to actions).
Matrix numeric_input_gradient(Matrix& input, const std::function<double()>& objective,
                              double eps = 1e-5);

}  // namespace adrbc::gradcheck
