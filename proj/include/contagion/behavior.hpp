#pragma once

// Firm rebalancing after payments: y_i maximizes a utility over
// { e >= P_i, q^T e <= q^T inflow_i }.  All shipped utilities spend the full
// budget, so q^T y_i = q^T inflow_i.

#include "contagion/payment_rules.hpp"

namespace contagion {

enum class Utility { MinTrading, AssetMax, ValueMax };

/// How ValueMax splits residual wealth when several assets share the best
/// reference-to-market price ratio.
enum class TieBreak { LowestIndex, ProportionalSpread };

struct BehaviorRule {
  Utility utility = Utility::MinTrading;
  std::size_t target_asset = 0;  // AssetMax
  Vector reference;              // ValueMax: unshocked price F(0)
  TieBreak tie_break = TieBreak::LowestIndex;

  static BehaviorRule min_trading() { return {}; }
  static BehaviorRule asset_max(std::size_t asset) { return {Utility::AssetMax, asset, {}, TieBreak::LowestIndex}; }
  static BehaviorRule value_max(Vector reference, TieBreak tie = TieBreak::LowestIndex) {
    return {Utility::ValueMax, 0, std::move(reference), tie};
  }

  void validate(std::size_t m) const {
    if (utility == Utility::AssetMax && target_asset >= m) throw std::invalid_argument("asset_max target out of range");
    if (utility == Utility::ValueMax) {
      if (reference.size() != m) throw std::invalid_argument("value_max reference price has wrong dimension");
      for (double r : reference)
        if (!(r > 0.0)) throw std::invalid_argument("value_max reference price must be strictly positive");
    }
  }
};

struct HoldingsProblem {
  Vector floor;   // P_i
  Vector inflow;  // e_i
  Vector prices;  // q

  double budget() const { return dot(prices, inflow); }
};

inline Vector solve_holdings(const BehaviorRule& rule, const HoldingsProblem& pb) {
  const std::size_t m = pb.inflow.size();
  if (pb.floor.size() != m || pb.prices.size() != m) throw std::invalid_argument("holdings problem dimension mismatch");
  const auto& q = pb.prices;
  const auto& e = pb.inflow;
  Vector floor = pb.floor;
  const double w = pb.budget();
  double floor_value = dot(q, floor);
  if (floor_value > w) {
    if (floor_value > w * (1.0 + 1e-9) + 1e-300)
      throw std::logic_error("payment floor exceeds the available budget");
    const double scale = w / floor_value;
    for (double& v : floor) v *= scale;
    floor_value = dot(q, floor);
  }
  const double residual = std::max(w - floor_value, 0.0);

  switch (rule.utility) {
    case Utility::MinTrading: {
      // Euclidean projection of the inflow onto the feasible set.
      auto at = [&](double lambda) {
        Vector y(m);
        for (std::size_t k = 0; k < m; ++k) y[k] = std::max(floor[k], e[k] - lambda * q[k]);
        return y;
      };
      const double tol = 1e-12 * std::max(1.0, w);
      Vector y = at(0.0);
      double spent = dot(q, y);
      if (spent <= w + tol) return y;
      double lo = 0.0, hi = 0.0;
      for (std::size_t k = 0; k < m; ++k) hi = std::max(hi, (e[k] - floor[k]) / q[k]);
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        y = at(mid);
        spent = dot(q, y);
        if (std::abs(spent - w) <= tol) break;
        (spent > w ? lo : hi) = mid;
      }
      // The bracket pins down which components sit above the floor; solve
      // the budget equation exactly on that active set.
      double active_q2 = 0.0, excess = -w;
      for (std::size_t k = 0; k < m; ++k) {
        if (e[k] - hi * q[k] > floor[k]) {
          active_q2 += q[k] * q[k];
          excess += q[k] * e[k];
        } else {
          excess += q[k] * floor[k];
        }
      }
      if (active_q2 > 0.0) {
        const double lambda = excess / active_q2;
        if (lambda >= lo && lambda <= hi) {
          y = at(lambda);
          spent = dot(q, y);
        }
      }
      detail::absorb_residual(y, floor, Vector(m, std::numeric_limits<double>::infinity()), q, w - spent);
      return y;
    }
    case Utility::AssetMax: {
      Vector y = floor;
      y[rule.target_asset] += residual / q[rule.target_asset];
      return y;
    }
    case Utility::ValueMax: {
      Vector y = floor;
      if (residual == 0.0) return y;
      double best = 0.0;
      for (std::size_t k = 0; k < m; ++k) best = std::max(best, rule.reference[k] / q[k]);
      std::vector<std::size_t> winners;
      for (std::size_t k = 0; k < m; ++k)
        if (rule.reference[k] / q[k] >= best * (1.0 - 1e-12)) winners.push_back(k);
      if (rule.tie_break == TieBreak::LowestIndex) winners.resize(1);
      const double share = residual / static_cast<double>(winners.size());
      for (std::size_t k : winners) y[k] += share / q[k];
      return y;
    }
  }
  return floor;
}

/// Payment and behavior rules for every firm.
struct RuleBook {
  std::vector<PaymentRule> payment;
  std::vector<BehaviorRule> behavior;

  static RuleBook uniform(std::size_t firms, const PaymentRule& p, const BehaviorRule& b) {
    return {std::vector<PaymentRule>(firms, p), std::vector<BehaviorRule>(firms, b)};
  }

  void validate(const Network& net) const {
    if (payment.size() != net.firms() || behavior.size() != net.firms())
      throw std::invalid_argument("rule book must hold one payment and one behavior rule per firm");
    for (const auto& r : payment) r.validate(net.assets());
    for (const auto& r : behavior) r.validate(net.assets());
  }
};

/// One application of the clearing mechanism: inflow, payments, holdings.
struct MapEvaluation {
  Matrix inflow;
  Matrix payments;
  Matrix holdings;
};

inline MapEvaluation evaluate_clearing_map(const RuleBook& rules, const Network& net, const RelativeLiabilities& rel,
                                           const Matrix& y, std::span<const double> prices) {
  MapEvaluation out{realized_inflow(net, rel, y), Matrix(net.firms(), net.assets()), Matrix(net.firms(), net.assets())};
  const Vector q(prices.begin(), prices.end());
  for (std::size_t i = 0; i < net.firms(); ++i) {
    PaymentProblem pp{rel.totals().row_vector(i), out.inflow.row_vector(i), q};
    const Vector p = solve_payment(rules.payment[i], pp);
    out.payments.set_row(i, p);
    HoldingsProblem hp{p, std::move(pp.inflow), q};
    out.holdings.set_row(i, solve_holdings(rules.behavior[i], hp));
  }
  return out;
}

/// Y(y, q): the holdings the clearing mechanism assigns given holdings y.
inline Matrix holdings_map(const RuleBook& rules, const Network& net, const RelativeLiabilities& rel, const Matrix& y,
                           std::span<const double> prices) {
  return evaluate_clearing_map(rules, net, rel, y, prices).holdings;
}

}  // namespace contagion
