// Built with -ffast-math so the exp in the inner loops vectorizes.
#include <cmath>

#include "opsplit/metrics.hpp"

namespace opsplit::detail {

namespace {

template <int D>
void sums_fixed(const std::vector<std::vector<double>>& points, const std::vector<std::vector<double>>& queries,
                std::size_t first, std::size_t count, double* out) {
  const std::size_t n = points[0].size();
  const double* p[D];
  for (int k = 0; k < D; ++k) p[k] = points[k].data();
  for (std::size_t i = first; i < first + count; ++i) {
    double q[D];
    for (int k = 0; k < D; ++k) q[k] = queries[k][i];
    double acc = 0.0;
#pragma GCC ivdep
    for (std::size_t j = 0; j < n; ++j) {
      double r2 = 0.0;
      for (int k = 0; k < D; ++k) {
        const double diff = q[k] - p[k][j];
        r2 += diff * diff;
      }
      acc += std::exp(-0.5 * r2);
    }
    out[i - first] = acc;
  }
}

void sums_generic(const std::vector<std::vector<double>>& points, const std::vector<std::vector<double>>& queries,
                  std::size_t first, std::size_t count, double* out) {
  const std::size_t n = points[0].size();
  const std::size_t d = points.size();
  std::vector<double> r2(n);
  for (std::size_t i = first; i < first + count; ++i) {
    std::fill(r2.begin(), r2.end(), 0.0);
    for (std::size_t k = 0; k < d; ++k) {
      const double q = queries[k][i];
      const double* pk = points[k].data();
      for (std::size_t j = 0; j < n; ++j) {
        const double diff = q - pk[j];
        r2[j] += diff * diff;
      }
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += std::exp(-0.5 * r2[j]);
    out[i - first] = acc;
  }
}

}  // namespace

void kernel_sums(const std::vector<std::vector<double>>& points, const std::vector<std::vector<double>>& queries,
                 std::size_t first, std::size_t count, double* out) {
  switch (points.size()) {
    case 1:
      return sums_fixed<1>(points, queries, first, count, out);
    case 2:
      return sums_fixed<2>(points, queries, first, count, out);
    case 3:
      return sums_fixed<3>(points, queries, first, count, out);
    default:
      return sums_generic(points, queries, first, count, out);
  }
}

}  // namespace opsplit::detail
