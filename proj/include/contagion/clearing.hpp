#pragma once

// Equilibrium computations: clearing holdings at a fixed price (greatest and
// least fixed points of the monotone clearing map), the fictitious default
// cascade, joint price/holdings equilibria under an inverse demand function,
// the tatonnement price dynamic and a grid scan for the full equilibrium set
// in the two-asset case.
//
// The clearing map depends on holdings only through the realized payments
// pbar ^ y, so fixed-price iterations run on the payment lattice [0, pbar]:
// the greatest fixed point is reached from full payment, the least from zero.

#include <optional>
#include <set>

#include "contagion/behavior.hpp"
#include "contagion/market.hpp"

namespace contagion {

/// A network together with its derived relative liabilities and per-firm rules.
struct ClearingProblem {
  Network network;
  RelativeLiabilities relative;
  RuleBook rules;

  ClearingProblem(Network net, RuleBook book)
      : network(std::move(net)), relative(build_relative_liabilities(network)), rules(std::move(book)) {
    rules.validate(network);
  }

  const Matrix& obligations() const { return relative.totals(); }
};

enum class Selector { Greatest, Least, Attained };

inline std::string to_string(Selector s) {
  switch (s) {
    case Selector::Greatest: return "greatest";
    case Selector::Least: return "least";
    case Selector::Attained: return "attained";
  }
  return "unknown";
}

struct ClearingOptions {
  /// Fixed-point tolerance, multiplied by (1 + network scale).
  double tolerance = 1e-10;
  std::size_t max_iterations = 10000;
  /// Firm i defaults if y_ik < pbar_ik - default_tolerance * (1 + pbar_ik) for some k.
  double default_tolerance = 1e-9;
};

struct ClearingResult {
  Matrix holdings;
  Vector prices;
  Matrix payments;  // pbar ^ y
  Matrix inflow;
  Vector society_holdings;
  std::vector<std::size_t> defaults;
  std::size_t iterations = 0;
  double residual = 0.0;
  Selector selector = Selector::Greatest;
  bool converged = false;
  /// False when the societal-node uniqueness hypothesis fails, in which case
  /// price computations used the greatest clearing holdings as the selector.
  bool unique = false;
};

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

inline double fixed_point_tolerance(const ClearingProblem& pb, const ClearingOptions& opt) {
  return opt.tolerance * (1.0 + pb.network.scale());
}

inline std::vector<std::size_t> classify_defaults(const Matrix& holdings, const Matrix& pbar, double tol) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < holdings.rows(); ++i)
    for (std::size_t k = 0; k < holdings.cols(); ++k)
      if (holdings(i, k) < pbar(i, k) - tol * (1.0 + pbar(i, k))) {
        out.push_back(i);
        break;
      }
  return out;
}

/// Builds the result record for payment state `p` (holdings = Y(p, q)).
inline ClearingResult finish(const ClearingProblem& pb, const Matrix& p, std::span<const double> q,
                             const ClearingOptions& opt) {
  const auto& net = pb.network;
  MapEvaluation ev = evaluate_clearing_map(pb.rules, net, pb.relative, p, q);
  ClearingResult r;
  r.payments = meet(pb.obligations(), ev.holdings);
  r.residual = sup_norm_diff(r.payments, p);
  r.holdings = std::move(ev.holdings);
  r.inflow = std::move(ev.inflow);
  r.prices.assign(q.begin(), q.end());
  r.society_holdings = society_inflow(net, pb.relative, r.payments);
  r.defaults = classify_defaults(r.holdings, pb.obligations(), opt.default_tolerance);
  r.unique = net.society_linked();
  return r;
}

/// Stopping rule for a monotone iteration: the last step is below tolerance
/// and the geometric tail estimated from the last two steps is too.
inline bool settled(double change, double previous, double tol) {
  if (change == 0.0) return true;
  if (change > tol) return false;
  if (change <= 1e-3 * tol) return true;
  const double ratio = change / previous;
  return ratio < 1.0 && change * ratio / (1.0 - ratio) <= tol;
}

}  // namespace detail

/// Greatest or least solution of y = Y(y, q) by Picard iteration on payments.
inline ClearingResult clearing_holdings(const ClearingProblem& pb, std::span<const double> q, Selector direction,
                                        const ClearingOptions& opt = {}) {
  if (direction == Selector::Attained) throw std::invalid_argument("fixed-price clearing selects greatest or least");
  const auto& pbar = pb.obligations();
  const double tol = detail::fixed_point_tolerance(pb, opt);
  const bool down = direction == Selector::Greatest;
  Matrix p = down ? pbar : Matrix(pbar.rows(), pbar.cols());

  double previous = std::numeric_limits<double>::infinity();
  std::size_t it = 0;
  bool converged = false;
  while (it < opt.max_iterations) {
    ++it;
    Matrix next = meet(pbar, holdings_map(pb.rules, pb.network, pb.relative, p, q));
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t k = 0; k < p.cols(); ++k) {
        const double step = next(i, k) - p(i, k);
        if (down ? step > tol : step < -tol)
          throw ContractViolation("clearing iterates are not monotone at firm " + std::to_string(i) +
                                  "; payment or utility rules violate the monotonicity hypotheses");
      }
    const double change = sup_norm_diff(next, p);
    p = std::move(next);
    if (detail::settled(change, previous, tol)) {
      converged = true;
      break;
    }
    previous = change;
  }
  ClearingResult r = detail::finish(pb, p, q, opt);
  r.iterations = it;
  r.selector = direction;
  r.converged = converged && r.residual <= tol;
  return r;
}

struct FictitiousDefaultResult {
  ClearingResult result;
  /// Insolvency set found at each outer round, starting with round 1.
  std::vector<std::vector<std::size_t>> default_sets;
  /// Number of inner fixed-point solves (rounds in which the default set grew).
  std::size_t rounds = 0;
};

/// Fictitious default cascade for the greatest clearing holdings.  Each round
/// marks firms whose mark-to-market inflow falls short of their obligations,
/// then solves for the maximal payments of the marked firms while everyone
/// else pays in full.
inline FictitiousDefaultResult fictitious_default(const ClearingProblem& pb, std::span<const double> q,
                                                  const ClearingOptions& opt = {}) {
  const auto& net = pb.network;
  const auto& pbar = pb.obligations();
  const std::size_t n = net.firms();
  const double tol = detail::fixed_point_tolerance(pb, opt);
  const Vector prices(q.begin(), q.end());

  FictitiousDefaultResult out;
  Matrix p = pbar;
  std::set<std::size_t> previous;
  std::size_t inner_total = 0;
  for (std::size_t alpha = 1;; ++alpha) {
    if (alpha > n + 1) throw ContractViolation("fictitious default cascade exceeded n rounds");
    const Matrix inflow = realized_inflow(net, pb.relative, p);
    std::set<std::size_t> current;
    for (std::size_t i = 0; i < n; ++i) {
      const double owed = dot(prices, pbar.row(i));
      const double shortfall = dot(prices, inflow.row(i)) - owed;
      if (shortfall < -opt.default_tolerance * (1.0 + owed)) current.insert(i);
    }
    out.default_sets.emplace_back(current.begin(), current.end());
    if (current == previous) break;
    if (!std::includes(current.begin(), current.end(), previous.begin(), previous.end()))
      throw ContractViolation("default set shrank during the fictitious default cascade");

    // Maximal solution of p_D = P_D(p), p_{not D} = pbar, by Picard from pbar.
    Matrix hat = pbar;
    double prev_change = std::numeric_limits<double>::infinity();
    bool inner_ok = false;
    for (std::size_t it = 0; it < opt.max_iterations; ++it) {
      ++inner_total;
      const Matrix pay = payment_map(pb.rules.payment, net, pb.relative, hat, prices);
      Matrix next = pbar;
      for (std::size_t i : current) next.set_row(i, pay.row(i));
      const double change = sup_norm_diff(next, hat);
      hat = std::move(next);
      if (detail::settled(change, prev_change, tol)) {
        inner_ok = true;
        break;
      }
      prev_change = change;
    }
    if (!inner_ok)
      throw std::runtime_error("inner fixed point did not converge in round " + std::to_string(alpha));
    p = std::move(hat);
    previous = std::move(current);
    ++out.rounds;
  }
  out.result = detail::finish(pb, p, q, opt);
  out.result.iterations = inner_total;
  out.result.selector = Selector::Greatest;
  out.result.converged = out.result.residual <= 10.0 * tol;
  return out;
}

/// Aggregate net sales of each asset by the firms: sum_i (inflow_i - y_i).
/// The societal node holds its inflow and contributes nothing.
inline Vector net_sales(const ClearingResult& r) {
  Vector z(r.holdings.cols(), 0.0);
  for (std::size_t i = 0; i < r.holdings.rows(); ++i)
    for (std::size_t k = 0; k < z.size(); ++k) z[k] += r.inflow(i, k) - r.holdings(i, k);
  return z;
}

struct PriceEvaluation {
  ClearingResult clearing;
  Vector sales;   // gamma0 + net sales
  Vector target;  // F(sales)
};

/// Clears at price q (greatest holdings; unique under the society hypothesis)
/// and returns the price implied by the resulting trades.
inline PriceEvaluation evaluate_price_map(const ClearingProblem& pb, const InverseDemand& F,
                                          std::span<const double> gamma0, std::span<const double> q,
                                          const ClearingOptions& opt = {}) {
  PriceEvaluation ev;
  ev.clearing = clearing_holdings(pb, q, Selector::Greatest, opt);
  ev.sales = net_sales(ev.clearing);
  for (std::size_t k = 0; k < ev.sales.size(); ++k) ev.sales[k] += gamma0[k];
  ev.target = F(ev.sales);
  return ev;
}

struct PriceOptions {
  ClearingOptions clearing;
  /// Initial Euler step (tatonnement) or damping factor (price_equilibrium).
  double step = 0.1;
  std::size_t max_steps = 200000;
  /// Stop once the price update step * |F - q| falls below this.
  double tolerance = 1e-11;
  /// Keep every k-th sample of the trajectory.
  std::size_t trace_stride = 1;
};

struct TatonnementTrace {
  std::vector<double> times;
  std::vector<Vector> prices;
  Vector terminal;
  bool converged = false;
  double initial_step = 0.0;
  double final_step = 0.0;
  std::size_t steps = 0;
  std::size_t max_steps = 0;
  /// |F(gamma0 + net sales(q*)) - q*| at the terminal point.  Large values
  /// with converged = true mark a discontinuity of the price map.
  double residual = 0.0;
  ClearingResult clearing;
};

namespace detail {

inline int sign(double v) { return (v > 0.0) - (v < 0.0); }

inline Vector clip(Vector q, const InverseDemand& F) {
  for (std::size_t k = 0; k < q.size(); ++k) q[k] = std::clamp(q[k], F.lower()[k], F.upper()[k]);
  return q;
}

}  // namespace detail

/// Explicit Euler discretization of dq = (F(gamma0 + net sales(q)) - q) dt
/// from q0 = F(gamma0).  The step halves whenever some component of the
/// residual changes sign on two consecutive steps.
inline TatonnementTrace tatonnement(const ClearingProblem& pb, const InverseDemand& F, std::span<const double> gamma0,
                                    const PriceOptions& opt = {}) {
  if (!(opt.step > 0.0 && opt.step <= 1.0)) throw std::invalid_argument("tatonnement step must lie in (0, 1]");
  if (gamma0.size() != F.assets() || F.assets() != pb.network.assets())
    throw std::invalid_argument("shock dimension does not match the network");
  TatonnementTrace tr;
  tr.initial_step = opt.step;
  tr.max_steps = opt.max_steps;
  Vector q = detail::clip(F(gamma0), F);
  double h = opt.step, t = 0.0;
  const std::size_t m = q.size();
  std::vector<int> last(m, 0), before(m, 0);
  const std::size_t stride = std::max<std::size_t>(opt.trace_stride, 1);

  PriceEvaluation ev = evaluate_price_map(pb, F, gamma0, q, opt.clearing);
  for (std::size_t s = 0;; ++s) {
    Vector r(m);
    for (std::size_t k = 0; k < m; ++k) r[k] = ev.target[k] - q[k];
    if (s % stride == 0) {
      tr.times.push_back(t);
      tr.prices.push_back(q);
    }
    bool halve = false;
    for (std::size_t k = 0; k < m; ++k) {
      const int sg = detail::sign(r[k]);
      if (sg != 0 && last[k] != 0 && before[k] != 0 && sg != last[k] && last[k] != before[k]) halve = true;
    }
    if (halve) {
      h *= 0.5;
      std::fill(last.begin(), last.end(), 0);
      std::fill(before.begin(), before.end(), 0);
    }
    for (std::size_t k = 0; k < m; ++k) {
      before[k] = last[k];
      last[k] = detail::sign(r[k]);
    }
    const double update = h * sup_norm(r);
    if (update < opt.tolerance) {
      tr.converged = true;
      tr.steps = s;
      break;
    }
    if (s >= opt.max_steps) {
      tr.steps = s;
      break;
    }
    for (std::size_t k = 0; k < m; ++k) q[k] += h * r[k];
    q = detail::clip(std::move(q), F);
    t += h;
    ev = evaluate_price_map(pb, F, gamma0, q, opt.clearing);
  }
  if (tr.prices.empty() || tr.prices.back() != q) {
    tr.times.push_back(t);
    tr.prices.push_back(q);
  }
  tr.terminal = q;
  tr.final_step = h;
  tr.residual = sup_norm_diff(ev.target, q);
  tr.clearing = std::move(ev.clearing);
  tr.clearing.selector = Selector::Attained;
  return tr;
}

/// A price q* with q* = F(gamma0 + net sales(q*)) by damped Picard iteration
/// (damping = opt.step, halved on sign oscillation).  The result is flagged
/// non-converged when the residual does not reach the tolerance; use
/// tatonnement for the attained selector in that case.
inline ClearingResult price_equilibrium(const ClearingProblem& pb, const InverseDemand& F,
                                        std::span<const double> gamma0, const PriceOptions& opt = {}) {
  PriceOptions local = opt;
  if (local.step == PriceOptions{}.step) local.step = 0.5;
  local.trace_stride = std::numeric_limits<std::size_t>::max();
  TatonnementTrace tr = tatonnement(pb, F, gamma0, local);
  ClearingResult r = std::move(tr.clearing);
  r.residual = tr.residual;
  r.iterations = tr.steps;
  r.converged = tr.converged && tr.residual <= std::max(1e-8, 1e3 * local.tolerance);
  r.selector = Selector::Attained;
  return r;
}

struct EquilibriumPoint {
  Vector prices;
  double residual = 0.0;
  /// False when the sign change of the residual is a jump of the price map
  /// rather than a zero (set-valued equilibrium of a discontinuous selector).
  bool continuous = true;
};

struct ScanOptions {
  std::size_t grid_points = 2000;
  ClearingOptions clearing;
  double root_tolerance = 1e-10;
  double dedup_tolerance = 1e-8;
  /// A refined sign change is a genuine root if |residual| stays below this.
  double continuity_tolerance = 1e-6;
};

/// All prices q = (1, q2) with q2 = F_2(gamma0 + net sales(q)) on a grid over
/// [lower_2, upper_2], refined by bisection.  Roots lying strictly between two
/// grid points with equal residual sign are missed.
inline std::vector<EquilibriumPoint> equilibrium_set_scan(const ClearingProblem& pb, const InverseDemand& F,
                                                          std::span<const double> gamma0, const ScanOptions& opt = {}) {
  if (pb.network.assets() != 2 || F.assets() != 2)
    throw std::invalid_argument("equilibrium_set_scan supports two assets only");
  if (!F.has_numeraire()) throw std::invalid_argument("equilibrium_set_scan needs asset 0 as numeraire");
  const double lo = F.lower()[1], hi = F.upper()[1];
  auto residual = [&](double q2) {
    const Vector q{1.0, q2};
    return evaluate_price_map(pb, F, gamma0, q, opt.clearing).target[1] - q2;
  };
  std::vector<EquilibriumPoint> roots;
  auto add = [&](double q2, double r, bool continuous) { roots.push_back({{1.0, q2}, r, continuous}); };

  const std::size_t N = lo == hi ? 1 : std::max<std::size_t>(opt.grid_points, 2);
  std::vector<double> grid(N), res(N);
  for (std::size_t s = 0; s < N; ++s) {
    grid[s] = N == 1 ? lo : (s + 1 == N ? hi : lo + (hi - lo) * static_cast<double>(s) / static_cast<double>(N - 1));
    res[s] = residual(grid[s]);
  }
  for (std::size_t s = 0; s < N; ++s) {
    if (std::abs(res[s]) <= 1e-14 * (1.0 + grid[s])) add(grid[s], res[s], true);
    if (s + 1 == N) continue;
    if (detail::sign(res[s]) * detail::sign(res[s + 1]) >= 0) continue;
    double a = grid[s], b = grid[s + 1];
    const int sa = detail::sign(res[s]);
    double ra = res[s];
    while (b - a > opt.root_tolerance) {
      const double mid = 0.5 * (a + b);
      if (mid == a || mid == b) break;
      const double rm = residual(mid);
      if (rm == 0.0) {
        a = b = mid;
        ra = 0.0;
        break;
      }
      if (detail::sign(rm) == sa) {
        a = mid;
        ra = rm;
      } else {
        b = mid;
      }
    }
    const double root = 0.5 * (a + b);
    const double rr = residual(root);
    add(root, rr, std::abs(rr) <= opt.continuity_tolerance || std::abs(ra) <= opt.continuity_tolerance);
  }
  std::sort(roots.begin(), roots.end(), [](const auto& x, const auto& y) { return x.prices[1] < y.prices[1]; });
  std::vector<EquilibriumPoint> out;
  for (auto& r : roots)
    if (out.empty() || r.prices[1] - out.back().prices[1] > opt.dedup_tolerance) out.push_back(std::move(r));
  return out;
}

struct DiagnosticsReport {
  std::vector<double> equity;  // q^T (y_i - pbar_i)
  std::vector<bool> defaulted;
  std::vector<std::size_t> defaults;
  double positive_equity_value = 0.0;  // sum_i q^T (y_i - pbar_i)^+
  double society_value = 0.0;          // q^T y_0
  double endowment_value = 0.0;        // sum_i q^T x_i
  /// |positive equity + society holdings - endowments|; zero at any clearing point.
  double wealth_gap = 0.0;
};

inline DiagnosticsReport diagnostics(const ClearingProblem& pb, const ClearingResult& r) {
  const auto& pbar = pb.obligations();
  const std::size_t n = pb.network.firms(), m = pb.network.assets();
  DiagnosticsReport d;
  d.equity.resize(n);
  d.defaulted.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < m; ++k) {
      const double gap = r.holdings(i, k) - pbar(i, k);
      d.equity[i] += r.prices[k] * gap;
      d.positive_equity_value += r.prices[k] * std::max(gap, 0.0);
    }
    d.endowment_value += dot(r.prices, pb.network.endowments().row(i));
  }
  for (std::size_t i : r.defaults) d.defaulted[i] = true;
  d.defaults = r.defaults;
  d.society_value = dot(r.prices, r.society_holdings);
  d.wealth_gap = std::abs(d.positive_equity_value + d.society_value - d.endowment_value);
  return d;
}

}  // namespace contagion
