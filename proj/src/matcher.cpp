#include "ps/matcher.hpp"

#include <limits>

#include "ps/common.hpp"

namespace ps {

std::vector<int64_t> hungarian_min_assign(const std::vector<double>& cost,
                                          int64_t rows, int64_t cols) {
  PS_CHECK(rows >= 0 && cols >= rows, "hungarian: needs rows <= cols, got "
                                          << rows << "x" << cols);
  PS_CHECK(static_cast<int64_t>(cost.size()) == rows * cols, "hungarian: cost size mismatch");
  if (rows == 0) return {};
  const double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials formulation; p[j] = row matched to column j
  std::vector<double> u(static_cast<size_t>(rows + 1), 0.0);
  std::vector<double> v(static_cast<size_t>(cols + 1), 0.0);
  std::vector<int64_t> p(static_cast<size_t>(cols + 1), 0);
  std::vector<int64_t> way(static_cast<size_t>(cols + 1), 0);
  auto a = [&](int64_t i, int64_t j) { return cost[static_cast<size_t>((i - 1) * cols + (j - 1))]; };

  for (int64_t i = 1; i <= rows; ++i) {
    p[0] = i;
    int64_t j0 = 0;
    std::vector<double> minv(static_cast<size_t>(cols + 1), kInf);
    std::vector<bool> used(static_cast<size_t>(cols + 1), false);
    do {
      used[static_cast<size_t>(j0)] = true;
      int64_t i0 = p[static_cast<size_t>(j0)], j1 = 0;
      double delta = kInf;
      for (int64_t j = 1; j <= cols; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        double cur = a(i0, j) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int64_t j = 0; j <= cols; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      int64_t j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }

  std::vector<int64_t> result(static_cast<size_t>(rows), -1);
  for (int64_t j = 1; j <= cols; ++j)
    if (p[static_cast<size_t>(j)] != 0) result[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
  return result;
}

}  // namespace ps
