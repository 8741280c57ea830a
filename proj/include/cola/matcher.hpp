#pragma once

// Pairing of factual rows with counterfactual rows: row-aligned, nearest
// neighbour, and exact optimal assignment (Hungarian algorithm).

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cola/error.hpp"
#include "cola/matrix.hpp"
#include "cola/schema.hpp"

namespace cola {

// n x m squared Euclidean distances; rows are factuals, columns counterfactuals.
using CostMatrix = Matrix;

struct Pair {
  std::size_t factual = 0;
  std::size_t counterfactual = 0;

  friend bool operator==(const Pair&, const Pair&) = default;
  friend auto operator<=>(const Pair&, const Pair&) = default;
};

struct Matching {
  std::vector<Pair> pairs;
  std::string policy;
  double total_cost = 0.0;

  nlohmann::ordered_json to_json() const {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& p : pairs) arr.push_back({p.factual, p.counterfactual});
    return {{"policy", policy}, {"pairs", arr}, {"total_cost", total_cost}};
  }

  template <typename Json>
  static Matching from_json(const Json& j) {
    Matching m;
    m.policy = j.at("policy").template get<std::string>();
    for (const auto& p : j.at("pairs")) {
      m.pairs.push_back({p.at(0).template get<std::size_t>(), p.at(1).template get<std::size_t>()});
    }
    m.total_cost = j.at("total_cost").template get<double>();
    return m;
  }
};

inline CostMatrix cost_matrix(const Matrix& f, const Matrix& c) {
  if (f.cols() != c.cols()) {
    fail("cost_matrix: width mismatch (" + std::to_string(f.cols()) + " vs " +
         std::to_string(c.cols()) + ")");
  }
  CostMatrix out(f.rows(), c.rows());
  for (std::size_t i = 0; i < f.rows(); ++i) {
    const auto a = f.row(i);
    for (std::size_t j = 0; j < c.rows(); ++j) {
      const auto b = c.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
      }
      out(i, j) = s;
    }
  }
  return out;
}

inline CostMatrix cost_matrix(const EncodedMatrix& f, const EncodedMatrix& c) {
  return cost_matrix(f.values, c.values);
}

// Sum of the pairs' costs, accumulated in pair order.
inline double matching_cost(const CostMatrix& cost, const std::vector<Pair>& pairs) {
  double total = 0.0;
  for (const auto& p : pairs) total += cost(p.factual, p.counterfactual);
  return total;
}

// Row-aligned pairing: (i, i), or (external_index[j], j) for imported sets
// that carry a factual index per counterfactual row.
inline Matching match_index(std::size_t n, std::size_t m,
                            const std::optional<std::vector<std::size_t>>& external_index = {}) {
  Matching out{{}, "index", 0.0};
  if (external_index) {
    if (external_index->size() != m) {
      fail("match_index: external index has " + std::to_string(external_index->size()) +
           " entries for " + std::to_string(m) + " counterfactuals");
    }
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t f = (*external_index)[j];
      if (f >= n) {
        fail("match_index: counterfactual " + std::to_string(j) + " references factual " +
             std::to_string(f) + " of " + std::to_string(n));
      }
      out.pairs.push_back({f, j});
    }
    std::stable_sort(out.pairs.begin(), out.pairs.end());
    return out;
  }
  if (n != m) {
    fail("match_index: " + std::to_string(n) + " factuals but " + std::to_string(m) +
         " counterfactuals and no factual index");
  }
  for (std::size_t i = 0; i < n; ++i) out.pairs.push_back({i, i});
  return out;
}

inline Matching match_index(const CostMatrix& cost,
                            const std::optional<std::vector<std::size_t>>& external_index = {}) {
  Matching out = match_index(cost.rows(), cost.cols(), external_index);
  out.total_cost = matching_cost(cost, out.pairs);
  return out;
}

inline Matching match_nearest(const CostMatrix& cost) {
  if (cost.cols() == 0) fail("match_nearest: no counterfactuals");
  Matching out{{}, "nearest", 0.0};
  for (std::size_t i = 0; i < cost.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < cost.cols(); ++j) {
      if (cost(i, j) < cost(i, best)) best = j;
    }
    out.pairs.push_back({i, best});
  }
  out.total_cost = matching_cost(cost, out.pairs);
  return out;
}

namespace detail {

// Minimum-cost perfect assignment on a square matrix via shortest augmenting
// paths with dual potentials, O(n^3). Returns the column assigned to each row.
inline std::vector<std::size_t> hungarian(const Matrix& a) {
  const std::size_t n = a.rows();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based arrays; index 0 is the virtual root of each augmenting tree.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> row_of(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    row_of[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = row_of[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      row_of[j0] = row_of[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of_row(n, 0);
  for (std::size_t j = 1; j <= n; ++j) col_of_row[row_of[j] - 1] = j - 1;
  return col_of_row;
}

}  // namespace detail

// Exact minimum-cost bijection. Unbalanced inputs are padded to square with
// dummy rows/columns costing (max + 1); pairs involving a dummy are dropped, so
// when n > m some factuals stay unmatched.
inline Matching match_ot(const CostMatrix& cost) {
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();
  Matching out{{}, "ot", 0.0};
  if (n == 0 || m == 0) return out;
  double top = 0.0;
  for (double v : cost.data()) {
    if (!std::isfinite(v)) fail("match_ot: non-finite cost");
    top = std::max(top, v);
  }
  const std::size_t size = std::max(n, m);
  Matrix square(size, size, top + 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) square(i, j) = cost(i, j);
  }
  const auto col_of_row = detail::hungarian(square);
  for (std::size_t i = 0; i < n; ++i) {
    if (col_of_row[i] < m) out.pairs.push_back({i, col_of_row[i]});
  }
  out.total_cost = matching_cost(cost, out.pairs);
  return out;
}

}  // namespace cola
