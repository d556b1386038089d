#pragma once

// Test fixtures and independent reference computations.  Nothing here calls
// into the solvers under test; the oracles re-derive their answers from the
// model definitions directly.

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "contagion/clearing.hpp"

namespace testing_support {

using namespace contagion;

/// Two firms, two assets: firm 0 holds 2 units of asset 1 and owes 1 unit of
/// asset 0 to firm 1; firm 1 holds 2 units of asset 0 and owes 1 unit of
/// asset 1 to firm 0.
inline Network crossed_pair() {
  NetworkBuilder b(2, 2);
  b.owe_firm(0, 1, 0, 1.0).owe_firm(1, 0, 1, 1.0);
  b.endow(0, 1, 2.0).endow(1, 0, 2.0);
  return b.build();
}

/// Closed-form clearing holdings of crossed_pair at price (1, q2).
inline std::array<Vector, 2> crossed_pair_holdings(double q2) {
  const double a = std::min(1.0, 3.0 * q2);
  const double b = std::min(1.0, 3.0 / q2);
  return {Vector{a, std::max(2.0 + b - 1.0 / q2, 0.0)}, Vector{std::max(2.0 + a - q2, 0.0), b}};
}

/// Capped-linear impact on asset 1 only, numeraire asset 0.
inline InverseDemand capped_linear_pair(double b, double lo = 0.05, double hi = 5.0) {
  return InverseDemand::capped_linear({1.0, 1.0}, {0.0, b}, {1.0, lo}, {1.0, hi});
}

/// Closed-form price branches of the crossed pair under capped_linear_pair.
struct PairBranches {
  double b, lo, hi;

  double disc(double q0) const { return q0 * q0 + 2.0 * b * (q0 - 2.0) + b * b; }
  double up(double q0) const { return 0.5 * (q0 + b + std::sqrt(disc(q0))); }
  double down(double q0) const { return 0.5 * (q0 + b - std::sqrt(disc(q0))); }
  double zero(double q0) const { return std::max(q0 - 2.0 * b, lo); }
  double one(double q0) const { return std::min(0.5 * (q0 + std::sqrt(q0 * q0 + 8.0 * b)), hi); }

  double crash() const { return -b + 2.0 * std::sqrt(b); }
  double triple_end() const { return 2.0 * b + 1.0 / 3.0; }
  double upper_switch() const { return 3.0 - 2.0 * b / 3.0; }

  /// Full equilibrium set for shock price q0 (ascending).
  std::vector<double> set(double q0) const {
    if (q0 < crash()) return {zero(q0)};
    if (q0 <= triple_end()) return {zero(q0), down(q0), up(q0)};
    if (q0 < upper_switch()) return {up(q0)};
    return {one(q0)};
  }

  /// Equilibrium selected by the price dynamic.
  double attained(double q0) const {
    if (q0 < crash()) return zero(q0);
    if (q0 < upper_switch()) return up(q0);
    return one(q0);
  }
};

/// Payment utility rebuilt from the scheme definitions: center, weights.
inline std::pair<Vector, Vector> reference_payment_utility(const PaymentRule& rule, const Vector& pbar,
                                                           const Vector& e, const Vector& q) {
  const std::size_t m = pbar.size();
  Vector delta(m), c(m), d(m);
  for (std::size_t k = 0; k < m; ++k) delta[k] = rule.delta_scale * (1.0 + std::max(pbar[k], e[k]));
  double w = 0.0;
  for (std::size_t k = 0; k < m; ++k) w += q[k] * e[k];
  if (rule.scheme == PaymentScheme::Surplus) {
    for (std::size_t k = 0; k < m; ++k) {
      c[k] = std::max(pbar[k], e[k]) + delta[k];
      d[k] = q[k] / (c[k] - e[k]);
    }
    return {c, d};
  }
  std::vector<std::size_t> order = rule.order;
  if (order.empty())
    for (std::size_t k = 0; k < m; ++k) order.push_back(k);
  Vector s(m, 0.0);
  double prior = 0.0;
  for (std::size_t r = 0; r < rule.priority_count; ++r) {
    const std::size_t k = order[r];
    s[k] = std::min(pbar[k], std::max(w - prior, 0.0) / q[k]);
    prior += q[k] * s[k];
  }
  double total = 0.0;
  for (std::size_t k = 0; k < m; ++k) total += q[k] * pbar[k];
  const double pi = total - prior == 0.0 ? 1.0 : (std::min(total, w) - prior) / (total - prior);
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t k = order[r];
    c[k] = pbar[k] + delta[k];
    d[k] = q[k] / (c[k] - (r < rule.priority_count ? s[k] : pi * pbar[k]));
  }
  return {c, d};
}

inline double quadratic_value(const Vector& c, const Vector& d, double p0, double p1) {
  return -0.5 * (d[0] * (c[0] - p0) * (c[0] - p0) + d[1] * (c[1] - p1) * (c[1] - p1));
}

/// Best h-value over a (grid x grid) lattice of the feasible box, keeping
/// points with q^T p <= w, plus the lattice points of the budget line itself.
inline double grid_best_payment_value(const Vector& c, const Vector& d, const Vector& pbar, const Vector& q, double w,
                                      std::size_t grid = 400) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < grid; ++a) {
    const double p0 = pbar[0] * static_cast<double>(a) / static_cast<double>(grid - 1);
    for (std::size_t b = 0; b < grid; ++b) {
      const double p1 = pbar[1] * static_cast<double>(b) / static_cast<double>(grid - 1);
      if (q[0] * p0 + q[1] * p1 <= w) best = std::max(best, quadratic_value(c, d, p0, p1));
    }
    // Largest feasible p1 for this p0: the budget-line point of the column.
    const double p1 = std::clamp((w - q[0] * p0) / q[1], 0.0, pbar[1]);
    if (q[0] * p0 + q[1] * p1 <= w * (1.0 + 1e-15)) best = std::max(best, quadratic_value(c, d, p0, p1));
  }
  return best;
}

/// Euclidean projection of e onto {y >= floor, q^T y <= w} for m = 2 by a
/// golden-section search along the budget line.
inline Vector reference_projection(const Vector& floor, const Vector& e, const Vector& q, double w) {
  Vector y{std::max(e[0], floor[0]), std::max(e[1], floor[1])};
  if (q[0] * y[0] + q[1] * y[1] <= w) return y;
  const double lo = floor[0], hi = (w - q[1] * floor[1]) / q[0];
  auto at = [&](double y0) { return Vector{y0, (w - q[0] * y0) / q[1]}; };
  auto dist = [&](double y0) {
    const auto v = at(y0);
    return (v[0] - e[0]) * (v[0] - e[0]) + (v[1] - e[1]) * (v[1] - e[1]);
  };
  double a = lo, b = std::max(hi, lo);
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 300; ++it) {
    const double x1 = b - g * (b - a), x2 = a + g * (b - a);
    if (dist(x1) < dist(x2))
      b = x2;
    else
      a = x1;
  }
  return at(0.5 * (a + b));
}

/// Single-asset Eisenberg-Noe clearing payments by Picard from full payment,
/// written against the raw liability entries.
inline Vector reference_en_payments(const Network& net, std::size_t iterations = 100000) {
  const std::size_t n = net.firms();
  Vector pbar(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= n; ++j) pbar[i] += net.liability(i, j, 0);
  Vector p = pbar;
  for (std::size_t it = 0; it < iterations; ++it) {
    Vector next(n);
    for (std::size_t i = 0; i < n; ++i) {
      double in = net.endowment(i, 0);
      for (std::size_t j = 0; j < n; ++j)
        if (pbar[j] > 0.0) in += net.liability(j, i + 1, 0) / pbar[j] * p[j];
      next[i] = std::min(pbar[i], in);
    }
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(next[i] - p[i]));
    p = next;
    if (change < 1e-14) break;
  }
  return p;
}

/// A random network with link sizes and society claims that vary per entry.
inline Network varied_network(std::mt19937_64& rng, std::size_t n, std::size_t m, bool society_linked) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  NetworkBuilder b(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && u(rng) < 0.4) b.owe_firm(i, j, k, 0.2 + 2.0 * u(rng));
      if (society_linked)
        b.owe_society(i, k, 0.1 + u(rng));
      else if (u(rng) < 0.3)
        b.owe_society(i, k, u(rng));
      b.endow(i, k, u(rng) < 0.2 ? 0.0 : 3.0 * u(rng));
    }
  return b.build();
}

inline PaymentRule random_payment_rule(std::mt19937_64& rng, std::size_t m, int kind) {
  std::vector<std::size_t> order(m);
  for (std::size_t k = 0; k < m; ++k) order[k] = k;
  std::shuffle(order.begin(), order.end(), rng);
  switch (kind) {
    case 0: return PaymentRule::surplus();
    case 1: return PaymentRule::proportional();
    default: return PaymentRule::priority(1 + rng() % m, order);
  }
}

inline BehaviorRule random_behavior_rule(std::mt19937_64& rng, std::size_t m, int kind) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  switch (kind) {
    case 0: return BehaviorRule::min_trading();
    case 1: return BehaviorRule::asset_max(rng() % m);
    default: {
      Vector ref(m);
      for (auto& r : ref) r = u(rng);
      return BehaviorRule::value_max(ref);
    }
  }
}

inline Vector random_prices(std::mt19937_64& rng, std::size_t m) {
  std::uniform_real_distribution<double> u(0.3, 3.0);
  Vector q(m);
  q[0] = 1.0;
  for (std::size_t k = 1; k < m; ++k) q[k] = u(rng);
  return q;
}

}  // namespace testing_support
