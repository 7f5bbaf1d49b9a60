#include "adrbc/gradcheck.h"

namespace adrbc::gradcheck {

double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                      double floor) {
  double diff = 0.0;
  double scale = floor;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    diff = std::max(diff, std::abs(analytic[k] - numeric[k]));
    scale = std::max({scale, std::abs(analytic[k]), std::abs(numeric[k])});
  }
  return diff / scale;
}

Report combine(const Report& a, const Report& b) {
  return {std::max(a.max_rel_error, b.max_rel_error), std::max(a.max_abs_error, b.max_abs_error),
          a.coordinates + b.coordinates};
}

Matrix numeric_input_gradient(Matrix& input, const std::function<double()>& objective, double eps) {
  Matrix out(input.rows(), input.cols());
  for (Index c = 0; c < input.cols(); ++c) {
    for (Index r = 0; r < input.rows(); ++r) {
      const double saved = input(r, c);
      input(r, c) = saved + eps;
      const double up = objective();
      input(r, c) = saved - eps;
      const double down = objective();
      input(r, c) = saved;
      out(r, c) = (up - down) / (2.0 * eps);
    }
  }
  return out;
}

}  // namespace adrbc::gradcheck
