#pragma once

// Payment regulations as strictly concave quadratic payment utilities
//   h(p) = -1/2 (c - p)^T diag(d) (c - p)
// maximized over the box [0, pbar] under the budget q^T p <= q^T e.
//
// Both shipped schemes are built so that the gradient of h equals q at a
// "target" point t (d_k = q_k / (c_k - t_k)).  The KKT conditions then give
//   p_k(lambda) = clamp(t_k + (1 - lambda)(c_k - t_k), 0, pbar_k)
// and the optimum is p(lambda*) where lambda* >= 0 balances the budget.

#include <numeric>

#include "contagion/network.hpp"

namespace contagion {

enum class PaymentScheme { Surplus, PriorityProportional };

struct PaymentRule {
  PaymentScheme scheme = PaymentScheme::PriorityProportional;
  /// Number of assets paid in strict seniority before the pro-rata remainder (mu).
  std::size_t priority_count = 0;
  /// Asset seniority order; empty means 0, 1, ..., m-1.
  std::vector<std::size_t> order;
  /// delta_k = delta_scale * (1 + max(pbar_k, e_k)).
  double delta_scale = 1e-3;

  static PaymentRule surplus(double delta_scale = 1e-3) {
    return {PaymentScheme::Surplus, 0, {}, delta_scale};
  }
  static PaymentRule priority(std::size_t mu, std::vector<std::size_t> order = {}, double delta_scale = 1e-3) {
    return {PaymentScheme::PriorityProportional, mu, std::move(order), delta_scale};
  }
  static PaymentRule proportional(double delta_scale = 1e-3) { return priority(0, {}, delta_scale); }

  /// Seniority order resolved against m assets; validates the permutation.
  std::vector<std::size_t> resolved_order(std::size_t m) const {
    std::vector<std::size_t> out(m);
    if (order.empty()) {
      std::iota(out.begin(), out.end(), std::size_t{0});
      return out;
    }
    if (order.size() != m) throw std::invalid_argument("payment order must list every asset once");
    std::vector<bool> seen(m, false);
    for (std::size_t k : order) {
      if (k >= m || seen[k]) throw std::invalid_argument("payment order must be a permutation of the assets");
      seen[k] = true;
    }
    return order;
  }

  void validate(std::size_t m) const {
    if (!(delta_scale > 0.0)) throw std::invalid_argument("delta_scale must be strictly positive");
    if (scheme == PaymentScheme::PriorityProportional && priority_count > m)
      throw std::invalid_argument("priority count exceeds asset count");
    (void)resolved_order(m);
  }
};

struct PaymentProblem {
  Vector obligations;  // pbar_i
  Vector inflow;       // e_i
  Vector prices;       // q

  double budget() const { return dot(prices, inflow); }
};

/// Center c, diagonal weights d and the gradient-matching target t of h.
struct QuadraticPayment {
  Vector center;
  Vector weights;
  Vector target;
  Vector delta;
};

inline Vector default_delta(const PaymentRule& rule, const PaymentProblem& pb) {
  Vector delta(pb.obligations.size());
  for (std::size_t k = 0; k < delta.size(); ++k)
    delta[k] = rule.delta_scale * (1.0 + std::max(pb.obligations[k], pb.inflow[k]));
  return delta;
}

inline QuadraticPayment center_and_weights(const PaymentRule& rule, const PaymentProblem& pb) {
  const std::size_t m = pb.obligations.size();
  if (pb.inflow.size() != m || pb.prices.size() != m) throw std::invalid_argument("payment problem dimension mismatch");
  QuadraticPayment out;
  out.delta = default_delta(rule, pb);
  out.center.resize(m);
  out.target.resize(m);
  out.weights.resize(m);

  if (rule.scheme == PaymentScheme::Surplus) {
    for (std::size_t k = 0; k < m; ++k) {
      out.center[k] = std::max(pb.obligations[k], pb.inflow[k]) + out.delta[k];
      out.target[k] = pb.inflow[k];
    }
  } else {
    const auto order = rule.resolved_order(m);
    const std::size_t mu = rule.priority_count;
    const double wealth = pb.budget();
    double owed = dot(pb.prices, pb.obligations);
    double filled = 0.0;  // sum over priority assets of q_k s_k
    for (std::size_t r = 0; r < mu; ++r) {
      const std::size_t k = order[r];
      const double s = std::min(pb.obligations[k], std::max(wealth - filled, 0.0) / pb.prices[k]);
      out.target[k] = s;
      filled += pb.prices[k] * s;
    }
    const double denom = owed - filled;
    const double pi = denom > 0.0 ? std::clamp((std::min(owed, wealth) - filled) / denom, 0.0, 1.0) : 1.0;
    for (std::size_t r = mu; r < m; ++r) out.target[order[r]] = pi * pb.obligations[order[r]];
    for (std::size_t k = 0; k < m; ++k) out.center[k] = pb.obligations[k] + out.delta[k];
  }
  for (std::size_t k = 0; k < m; ++k) {
    const double gap = out.center[k] - out.target[k];
    if (!(gap > 0.0)) throw std::logic_error("payment utility center does not dominate its target");
    out.weights[k] = pb.prices[k] / gap;
  }
  return out;
}

inline double payment_utility(const QuadraticPayment& h, std::span<const double> p) {
  double v = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double d = h.center[k] - p[k];
    v -= 0.5 * h.weights[k] * d * d;
  }
  return v;
}

namespace detail {

/// Moves a rounding-level budget residual into coordinates that still have room.
inline void absorb_residual(Vector& x, std::span<const double> lo, std::span<const double> hi,
                            std::span<const double> prices, double residual) {
  for (std::size_t k = 0; k < x.size() && residual != 0.0; ++k) {
    const double room = residual > 0.0 ? hi[k] - x[k] : x[k] - lo[k];
    if (room <= 0.0) continue;
    const double step = std::min(std::abs(residual) / prices[k], room);
    x[k] += residual > 0.0 ? step : -step;
    residual -= (residual > 0.0 ? 1.0 : -1.0) * step * prices[k];
  }
}

}  // namespace detail

/// Maximizer of h over [0, pbar] with q^T p <= q^T e.
inline Vector solve_payment(const PaymentRule& rule, const PaymentProblem& pb) {
  const std::size_t m = pb.obligations.size();
  if (pb.inflow.size() != m || pb.prices.size() != m) throw std::invalid_argument("payment problem dimension mismatch");
  const auto& pbar = pb.obligations;
  const auto& q = pb.prices;
  if (std::all_of(pbar.begin(), pbar.end(), [](double v) { return v == 0.0; })) return Vector(m, 0.0);

  const double w = pb.budget();
  if (dot(q, pbar) <= w) return pbar;
  if (w <= 0.0) return Vector(m, 0.0);

  const QuadraticPayment h = center_and_weights(rule, pb);
  auto at = [&](double lambda) {
    Vector p(m);
    for (std::size_t k = 0; k < m; ++k)
      p[k] = std::clamp(h.target[k] + (1.0 - lambda) * (h.center[k] - h.target[k]), 0.0, pbar[k]);
    return p;
  };
  const double tol = 1e-12 * std::max(1.0, w);

  Vector p = at(1.0);
  double spent = dot(q, p);
  if (std::abs(spent - w) <= tol) return p;

  double lo = 0.0, hi = 1.0;
  if (spent > w) {
    // Beyond lambda_max every coordinate is clamped at zero.
    lo = 1.0;
    hi = 1.0;
    for (std::size_t k = 0; k < m; ++k)
      hi = std::max(hi, 1.0 + h.target[k] / (h.center[k] - h.target[k]));
    hi += 1.0;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    p = at(mid);
    spent = dot(q, p);
    if (std::abs(spent - w) <= tol) break;
    (spent > w ? lo : hi) = mid;
  }
  {
    // p is affine in lambda between kinks; solve the budget equation exactly
    // on the set of coordinates that are unclamped inside the bracket.
    const double mid = 0.5 * (lo + hi);
    double fixed = 0.0, base = 0.0, slope = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const double d = h.center[k] - h.target[k];
      const double raw = h.target[k] + (1.0 - mid) * d;
      if (raw <= 0.0 || raw >= pbar[k]) {
        fixed += q[k] * std::clamp(raw, 0.0, pbar[k]);
      } else {
        base += q[k] * h.target[k];
        slope += q[k] * d;
      }
    }
    if (slope != 0.0) {
      const double lambda = 1.0 - (w - fixed - base) / slope;
      if (lambda >= lo && lambda <= hi) {
        const Vector exact = at(lambda);
        const double s = dot(q, exact);
        if (std::abs(s - w) <= std::abs(spent - w)) {
          p = exact;
          spent = s;
        }
      }
    }
  }
  // The residual is rounding-sized in either direction; absorb_residual trims
  // an overspend as well as it fills a shortfall.
  detail::absorb_residual(p, Vector(m, 0.0), pbar, q, w - spent);
  return p;
}

/// Per-firm payment rules and behavior; indexes follow the network's firms.
inline Matrix payment_map(std::span<const PaymentRule> rules, const Network& net, const RelativeLiabilities& rel,
                          const Matrix& holdings, std::span<const double> prices) {
  const Matrix inflow = realized_inflow(net, rel, holdings);
  Matrix out(net.firms(), net.assets());
  const Vector q(prices.begin(), prices.end());
  for (std::size_t i = 0; i < net.firms(); ++i) {
    PaymentProblem pb{rel.totals().row_vector(i), inflow.row_vector(i), q};
    out.set_row(i, solve_payment(rules[i], pb));
  }
  return out;
}

}  // namespace contagion
