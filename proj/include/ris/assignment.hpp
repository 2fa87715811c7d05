#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace ris {

// Result of matching prediction rows to ground-truth columns. `row_to_col[i]`
// is the column assigned to row i, or -1 when the row is left unmatched. Each
// row and each column is used at most once.
struct MatchResult {
  int rows = 0;
  int cols = 0;
  std::vector<int> row_to_col;
  double matched_sum = 0.0;
};

// Row-major score matrix for the matching problems in this project.
struct ScoreMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  ScoreMatrix() = default;
  ScoreMatrix(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {
    if (r < 0 || c < 0) throw std::invalid_argument("ScoreMatrix: negative size");
  }
  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

// Maximum-sum assignment via the Hungarian algorithm (shortest augmenting
// paths over dual potentials, O(n^3)). Rectangular inputs are padded to a
// square with zero-valued cells, which is what leaves the surplus rows or
// columns unmatched. Negative entries never improve the sum over skipping
// the pair, so they are clamped to zero for the solve and dropped from the
// returned assignment; zero-valued pairs the solver picked stay matched
// (they contribute nothing to the sum either way).
inline MatchResult hungarian(const ScoreMatrix& m) {
  MatchResult res;
  res.rows = m.rows;
  res.cols = m.cols;
  res.row_to_col.assign(static_cast<std::size_t>(m.rows), -1);
  if (m.rows == 0 || m.cols == 0) return res;
  for (double x : m.v) {
    if (!std::isfinite(x))
      throw std::invalid_argument("hungarian: matrix entries must be finite");
  }

  const int n = std::max(m.rows, m.cols);
  // cost = -max(value, 0), minimized over perfect matchings of the padded square.
  auto cost = [&](int r, int c) -> double {
    if (r < m.rows && c < m.cols) return -std::max(m.at(r, c), 0.0);
    return 0.0;
  };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match_col(n + 1, 0), way(n + 1, 0);  // 1-based
  for (int i = 1; i <= n; ++i) {
    match_col[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match_col[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match_col[j0] != 0);
    do {
      const int j1 = way[j0];
      match_col[j0] = match_col[j1];
      j0 = j1;
    } while (j0);
  }

  for (int j = 1; j <= n; ++j) {
    const int i = match_col[j];
    if (i >= 1 && i <= m.rows && j <= m.cols && m.at(i - 1, j - 1) >= 0.0) {
      res.row_to_col[i - 1] = j - 1;
    }
  }
  // Accumulate in row order so the sum's rounding cannot depend on how the
  // columns happen to be permuted.
  for (int i = 0; i < m.rows; ++i)
    if (res.row_to_col[i] >= 0) res.matched_sum += m.at(i, res.row_to_col[i]);
  return res;
}

// Exhaustive maximum over all partial injections (each row matched to at most
// one unused column or skipped), computed by bitmask DP over columns. Oracle
// for `hungarian`; capped at 8x8.
inline MatchResult brute_force_match(const ScoreMatrix& m) {
  if (std::max(m.rows, m.cols) > 8)
    throw std::invalid_argument("brute_force_match: dimensions capped at 8");
  MatchResult res;
  res.rows = m.rows;
  res.cols = m.cols;
  res.row_to_col.assign(static_cast<std::size_t>(m.rows), -1);
  if (m.rows == 0 || m.cols == 0) return res;

  const int masks = 1 << m.cols;
  const double neg_inf = -std::numeric_limits<double>::infinity();
  // best[r][mask]: best total for rows r..end with `mask` columns already used
  std::vector<std::vector<double>> best(m.rows + 1,
                                        std::vector<double>(masks, neg_inf));
  for (int mask = 0; mask < masks; ++mask) best[m.rows][mask] = 0.0;
  for (int r = m.rows - 1; r >= 0; --r) {
    for (int mask = 0; mask < masks; ++mask) {
      double b = best[r + 1][mask];  // skip row r
      for (int c = 0; c < m.cols; ++c) {
        if (mask & (1 << c)) continue;
        b = std::max(b, m.at(r, c) + best[r + 1][mask | (1 << c)]);
      }
      best[r][mask] = b;
    }
  }
  // Recover one optimal assignment. The comparisons are exact: every value
  // compared was produced by the same additions during the DP fill.
  int mask = 0;
  for (int r = 0; r < m.rows; ++r) {
    if (best[r][mask] == best[r + 1][mask]) continue;  // skipping row r is optimal
    for (int c = 0; c < m.cols; ++c) {
      if (mask & (1 << c)) continue;
      if (m.at(r, c) + best[r + 1][mask | (1 << c)] == best[r][mask]) {
        res.row_to_col[r] = c;
        mask |= 1 << c;
        break;
      }
    }
  }
  res.matched_sum = best[0][0];
  return res;
}

}  // namespace ris
