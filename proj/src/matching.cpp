#include "owvis/matching.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace owvis {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_matrix(const std::vector<std::vector<double>>& cost) {
  if (cost.empty()) return;
  size_t m = cost[0].size();
  if (cost.size() > m) throw Error("bad-shape", "more rows than columns");
  for (const auto& row : cost) {
    if (row.size() != m) throw Error("bad-shape", "ragged cost matrix");
    for (double v : row)
      if (!std::isfinite(v)) throw Error("bad-cost", "cost entries must be finite");
  }
}

// Shortest-augmenting-path assignment over a rectangular matrix (rows <=
// cols); returns the column picked for each row of an optimal assignment.
std::vector<int> assign_optimal(const std::vector<std::vector<double>>& a) {
  const int n = static_cast<int>(a.size());
  if (n == 0) return {};
  const int m = static_cast<int>(a[0].size());
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> result(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] > 0) result[p[j] - 1] = j - 1;
  return result;
}

// Total of an assignment, summed in row order (the canonical comparison
// order, so equal assignments always produce bitwise-equal totals).
double row_order_total(const std::vector<std::vector<double>>& cost,
                       const std::vector<int>& pick) {
  double s = 0.0;
  for (size_t r = 0; r < pick.size(); ++r) s += cost[r][pick[r]];
  return s;
}

}  // namespace

std::vector<int> match_min_cost(const std::vector<std::vector<double>>& cost) {
  check_matrix(cost);
  const int n = static_cast<int>(cost.size());
  if (n == 0) return {};
  const int m = static_cast<int>(cost[0].size());

  // Fix columns row by row: for each candidate column of the current row,
  // complete the assignment optimally over the remaining rows and compare
  // full totals in row order; the first minimum wins, which realizes the
  // lexicographically-smallest tie-break exactly.
  std::vector<int> chosen(n, -1);
  std::vector<char> used(m, 0);
  for (int r = 0; r < n; ++r) {
    int rest_rows = n - r - 1;
    int best_col = -1;
    double best_total = kInf;
    std::vector<int> free_cols;
    for (int c = 0; c < m; ++c)
      if (!used[c]) free_cols.push_back(c);
    for (int c : free_cols) {
      std::vector<std::vector<double>> sub(rest_rows);
      std::vector<int> col_of;
      col_of.reserve(free_cols.size() - 1);
      for (int cc : free_cols)
        if (cc != c) col_of.push_back(cc);
      for (int rr = 0; rr < rest_rows; ++rr) {
        sub[rr].reserve(col_of.size());
        for (int cc : col_of) sub[rr].push_back(cost[r + 1 + rr][cc]);
      }
      std::vector<int> rest = assign_optimal(sub);
      std::vector<int> full(chosen.begin(), chosen.begin() + r);
      full.push_back(c);
      for (int rr = 0; rr < rest_rows; ++rr) full.push_back(col_of[rest[rr]]);
      double total = row_order_total(cost, full);
      if (total < best_total) {
        best_total = total;
        best_col = c;
      }
    }
    chosen[r] = best_col;
    used[best_col] = 1;
  }
  return chosen;
}

std::vector<int> match_brute_force(const std::vector<std::vector<double>>& cost) {
  check_matrix(cost);
  const int n = static_cast<int>(cost.size());
  if (n == 0) return {};
  if (n > 7) throw Error("too-large", "exhaustive matching is limited to 7 rows");
  const int m = static_cast<int>(cost[0].size());

  std::vector<int> best, current;
  double best_total = kInf;
  std::vector<char> used(m, 0);
  // Depth-first in ascending column order: the first assignment reaching a
  // given total is the lexicographically smallest with that total.
  std::function<void(int)> rec = [&](int r) {
    if (r == n) {
      double total = row_order_total(cost, current);
      if (total < best_total) {
        best_total = total;
        best = current;
      }
      return;
    }
    for (int c = 0; c < m; ++c) {
      if (used[c]) continue;
      used[c] = 1;
      current.push_back(c);
      rec(r + 1);
      current.pop_back();
      used[c] = 0;
    }
  };
  rec(0);
  return best;
}

}  // namespace owvis
