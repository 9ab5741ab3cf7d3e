#pragma once

#include <vector>

#include "owvis/common.hpp"

namespace owvis {

// Exact minimum-cost injection of rows into columns. cost[r][c] must be
// finite (use a large finite gate value for "ineligible"). Returns one
// column per row; among all minimum-total assignments the result is the
// lexicographically smallest sequence (result[0], result[1], ...). Totals
// are compared as sums taken in row order, so integer-valued costs break
// ties exactly.
// Errors: "bad-shape" when rows exceed columns or rows are ragged,
// "bad-cost" on non-finite entries.
std::vector<int> match_min_cost(const std::vector<std::vector<double>>& cost);

// Exhaustive reference with the same tie-break. Errors: additionally
// "too-large" beyond 7 rows.
std::vector<int> match_brute_force(const std::vector<std::vector<double>>& cost);

}  // namespace owvis
