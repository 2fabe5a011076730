#pragma once

#include <cstdint>
#include <vector>

namespace ps {

// Minimum-cost assignment of every row to a distinct column (rows <= cols),
// shortest-augmenting-path Hungarian in O(rows^2 * cols).
// cost is row-major [rows, cols]; result[r] = column assigned to row r.
std::vector<int64_t> hungarian_min_assign(const std::vector<double>& cost,
                                          int64_t rows, int64_t cols);

}  // namespace ps
