// ============================================================================
// transport.hpp - empirical Wasserstein-1 distance between balanced point
// clouds, via exact min-cost perfect matching, plus the subsampled estimator
// and source ranking built on it.
// ============================================================================

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "sagan/common.hpp"
#include "sagan/domain.hpp"

namespace sagan {

inline constexpr std::size_t kW1ExactMaxPoints = 1024;

struct TransportPlan {
  // pairing[i] = index of the point in b matched with a's point i.
  std::vector<std::size_t> pairing;
  double cost = 0.0;  // mean Euclidean cost of the matched pairs
};

namespace detail {

inline double euclidean(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// Min-cost assignment on a dense n x n cost matrix via the augmenting-path
// shortest-path method with dual potentials; O(n^3) overall. Returns
// match_row[i] = assigned column of row i.
inline std::vector<std::size_t> min_cost_assignment(
    const std::vector<double>& cost, std::size_t n) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> match_row(n);
  for (std::size_t j = 1; j <= n; ++j) match_row[p[j] - 1] = j - 1;
  return match_row;
}

}  // namespace detail

// Exact W1 between two equal-size point clouds treated as uniform empirical
// measures: min-cost perfect matching on the Euclidean cost matrix, reported
// as the mean matched cost.
inline std::pair<double, TransportPlan> w1_exact(const Matrix& a,
                                                 const Matrix& b) {
  require<TransportError>(a.rows == b.rows,
                          "w1_exact: unequal sample counts " +
                              std::to_string(a.rows) + " vs " +
                              std::to_string(b.rows) +
                              " (subsample to balance first)");
  require<TransportError>(a.rows > 0, "w1_exact: empty point sets");
  require<TransportError>(a.cols == b.cols,
                          "w1_exact: dimension mismatch " +
                              std::to_string(a.cols) + " vs " +
                              std::to_string(b.cols));
  require<TransportError>(a.rows <= kW1ExactMaxPoints,
                          "w1_exact: " + std::to_string(a.rows) +
                              " points exceeds the exact-solver cap of " +
                              std::to_string(kW1ExactMaxPoints));
  const std::size_t n = a.rows;
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      cost[i * n + j] = detail::euclidean(a.row(i), b.row(j));
  TransportPlan plan;
  plan.pairing = detail::min_cost_assignment(cost, n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += cost[i * n + plan.pairing[i]];
  plan.cost = total / static_cast<double>(n);
  return {plan.cost, plan};
}

// Mean of w1_exact over independent balanced subsamples (without
// replacement). Deterministic given the seed; repeats are reduced in order.
inline double w1_estimate(const Matrix& a, const Matrix& b, std::size_t n_sub,
                          std::size_t n_repeats, std::uint64_t seed) {
  require<TransportError>(a.rows > 0 && b.rows > 0,
                          "w1_estimate: empty domain");
  require<TransportError>(n_sub > 0, "w1_estimate: n_sub must be positive");
  require<TransportError>(n_repeats > 0,
                          "w1_estimate: n_repeats must be positive");
  require<TransportError>(
      n_sub <= std::min(a.rows, b.rows),
      "w1_estimate: n_sub " + std::to_string(n_sub) +
          " exceeds the smaller point set (" +
          std::to_string(std::min(a.rows, b.rows)) + ")");
  require<TransportError>(a.cols == b.cols,
                          "w1_estimate: dimension mismatch " +
                              std::to_string(a.cols) + " vs " +
                              std::to_string(b.cols));

  auto subsample = [n_sub](const Matrix& m, Rng& rng) {
    // Partial Fisher-Yates over row indices, first n_sub entries.
    std::vector<std::size_t> idx(m.rows);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < n_sub; ++i) {
      const std::size_t j = i + rng.integer(m.rows - i);
      std::swap(idx[i], idx[j]);
    }
    Matrix out(n_sub, m.cols);
    for (std::size_t i = 0; i < n_sub; ++i)
      std::copy_n(m.row(idx[i]).data(), m.cols, out.row(i).data());
    return out;
  };

  double total = 0.0;
  for (std::size_t r = 0; r < n_repeats; ++r) {
    // The two sides draw from identically seeded streams so identical point
    // sets pick identical row subsets (and distance exactly 0).
    const std::uint64_t repeat_seed = derive_seed(seed, 0x5751ull * (r + 1));
    Rng rng_a(repeat_seed), rng_b(repeat_seed);
    const Matrix sa = a.rows == n_sub ? a : subsample(a, rng_a);
    const Matrix sb = b.rows == n_sub ? b : subsample(b, rng_b);
    total += w1_exact(sa, sb).first;
  }
  return total / static_cast<double>(n_repeats);
}

struct RankedSource {
  std::string subject_id;
  double distance = 0.0;
};

struct RankConfig {
  std::size_t n_sub = 256;
  std::size_t n_repeats = 8;
  std::uint64_t seed = 0;
};

// Candidates ordered by estimated W1 to the target, nearest first; ties
// break toward the smaller subject id.
inline std::vector<RankedSource> rank_sources(const Domain& target,
                                              const std::vector<Domain>& candidates,
                                              const RankConfig& cfg = {}) {
  require<TransportError>(!candidates.empty(),
                          "rank_sources: no candidate domains");
  std::vector<RankedSource> out;
  out.reserve(candidates.size());
  for (const Domain& c : candidates) {
    require<TransportError>(c.dim() == target.dim(),
                            "rank_sources: candidate '" + c.subject_id +
                                "' has dimension " + std::to_string(c.dim()) +
                                " but target has " +
                                std::to_string(target.dim()));
    const std::size_t cap = std::min({cfg.n_sub, c.size(), target.size()});
    const double d = w1_estimate(c.features, target.features, cap,
                                 cfg.n_repeats,
                                 derive_seed(cfg.seed, c.subject_id));
    out.push_back({c.subject_id, d});
  }
  std::sort(out.begin(), out.end(), [](const RankedSource& x, const RankedSource& y) {
    if (x.distance != y.distance) return x.distance < y.distance;
    return x.subject_id < y.subject_id;
  });
  return out;
}

}  // namespace sagan
