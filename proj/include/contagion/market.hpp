#pragma once

// Inverse demand functions: maps from net quantities sold (per asset) to
// prices in the numeraire.  Every family is bounded, continuous and
// nonincreasing; the ratio form is nonincreasing in every coordinate except
// the numeraire's own sale quantity z_1, see make_ratio_form.

#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <utility>

#include "contagion/types.hpp"

namespace contagion {

/// Scalar nonincreasing price curve with known range [lower, upper].
struct ScalarCurve {
  std::function<double(double)> value;
  double lower = 0.0;
  double upper = 0.0;
};

/// f(z) = 1 - depth * (2/pi) * atan(impact * z).  With depth = 3/4, impact = 1
/// this is (3 atan(-z) + 2 pi) / (2 pi); with depth = 2/3 it is
/// (4 atan(-b z) + 3 pi) / (3 pi).  impact = 0 gives the constant 1.
inline ScalarCurve arctan_curve(double depth, double impact) {
  if (!(depth > 0.0 && depth < 1.0)) throw std::invalid_argument("arctan depth must lie in (0, 1)");
  if (!(impact >= 0.0)) throw std::invalid_argument("arctan impact must be nonnegative");
  ScalarCurve c;
  c.value = [depth, impact](double z) { return 1.0 - depth * (2.0 / std::numbers::pi) * std::atan(impact * z); };
  c.lower = impact > 0.0 ? 1.0 - depth : 1.0;
  c.upper = impact > 0.0 ? 1.0 + depth : 1.0;
  return c;
}

/// g(z) = clamp(exp(-rate z), lower, upper).
inline ScalarCurve exponential_curve(double rate, double lower, double upper) {
  if (!(rate >= 0.0)) throw std::invalid_argument("exponential rate must be nonnegative");
  if (!(lower > 0.0 && lower <= 1.0 && upper >= 1.0))
    throw std::invalid_argument("exponential curve bounds must satisfy 0 < lower <= 1 <= upper");
  ScalarCurve c;
  c.value = [rate, lower, upper](double z) { return std::clamp(std::exp(-rate * z), lower, upper); };
  c.lower = lower;
  c.upper = upper;
  return c;
}

enum class DemandFamily { Constant, CappedLinear, SymmetricTwoAsset, RatioForm, Custom };

inline std::string to_string(DemandFamily f) {
  switch (f) {
    case DemandFamily::Constant: return "constant";
    case DemandFamily::CappedLinear: return "capped_linear";
    case DemandFamily::SymmetricTwoAsset: return "arctan_symmetric";
    case DemandFamily::RatioForm: return "ratio_form";
    case DemandFamily::Custom: return "custom";
  }
  return "unknown";
}

namespace detail {

/// Finds z with curve(z) = target for a continuous nonincreasing scalar map.
/// Grows a bracket geometrically away from zero, then bisects.
inline double invert_nonincreasing(const std::function<double(double)>& curve, double target) {
  const double at0 = curve(0.0);
  if (target == at0) return 0.0;
  const double dir = target < at0 ? 1.0 : -1.0;  // lower prices need positive sales
  double near = 0.0, far = dir;
  auto reached = [&](double z) { return dir > 0 ? curve(z) <= target : curve(z) >= target; };
  while (!reached(far)) {
    near = far;
    far *= 2.0;
    if (std::abs(far) > 1e15) throw std::invalid_argument("price " + std::to_string(target) + " is outside the range of the inverse demand");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (near + far);
    if (mid == near || mid == far) break;
    (reached(mid) ? far : near) = mid;
  }
  return far;
}

}  // namespace detail

class InverseDemand {
 public:
  using Evaluator = std::function<Vector(std::span<const double>)>;

  InverseDemand() = default;

  /// Frictionless market: F(z) = price for all z.
  static InverseDemand constant(Vector price) {
    for (double p : price)
      if (!(p > 0.0)) throw std::invalid_argument("constant prices must be strictly positive");
    InverseDemand F(DemandFamily::Constant, price, price);
    F.eval_ = [price](std::span<const double>) { return price; };
    F.component_ = [price](std::size_t k, double) { return price[k]; };
    return F;
  }

  /// F_k(z) = lower_k v (base_k - slope_k z_k) ^ upper_k.
  static InverseDemand capped_linear(Vector base, Vector slope, Vector lower, Vector upper) {
    const std::size_t m = base.size();
    if (slope.size() != m || lower.size() != m || upper.size() != m)
      throw std::invalid_argument("capped_linear parameter vectors must have equal length");
    for (std::size_t k = 0; k < m; ++k) {
      if (!(lower[k] > 0.0 && lower[k] <= upper[k])) throw std::invalid_argument("capped_linear needs 0 < lower <= upper");
      if (!(slope[k] >= 0.0)) throw std::invalid_argument("capped_linear slope must be nonnegative");
    }
    InverseDemand F(DemandFamily::CappedLinear, lower, upper);
    auto comp = [base, slope, lower, upper](std::size_t k, double zk) {
      return std::clamp(base[k] - slope[k] * zk, lower[k], upper[k]);
    };
    F.component_ = comp;
    F.eval_ = [comp, m](std::span<const double> z) {
      Vector q(m);
      for (std::size_t k = 0; k < m; ++k) q[k] = comp(k, z[k]);
      return q;
    };
    return F;
  }

  /// Two-asset construction with asset 0 as numeraire: F_1 = f(z_1) for
  /// sales, 1 / f(alpha^{-1}(-z_1)) for purchases, alpha(u) = u f(u).
  /// Requires f(0) = 1 and alpha strictly increasing on the validation grid.
  static InverseDemand symmetric_two_asset(ScalarCurve f) {
    if (!f.value) throw std::invalid_argument("symmetric_two_asset needs a curve");
    if (std::abs(f.value(0.0) - 1.0) > 1e-12)
      throw std::invalid_argument("symmetric_two_asset needs f(0) = 1 for continuity at zero");
    if (!(f.lower > 0.0)) throw std::invalid_argument("symmetric_two_asset needs a strictly positive lower bound");
    double prev_alpha = 0.0, prev_f = 1.0;
    for (double u = 1e-6; u <= 1e7; u *= 1.05) {
      const double fu = f.value(u);
      const double a = u * fu;
      if (!(a > prev_alpha)) throw std::invalid_argument("z f(z) is not strictly increasing on the validation grid");
      if (fu > prev_f + 1e-15) throw std::invalid_argument("f is not nonincreasing on the validation grid");
      prev_alpha = a;
      prev_f = fu;
    }
    auto impl = std::make_shared<const ScalarCurve>(std::move(f));
    InverseDemand F(DemandFamily::SymmetricTwoAsset, {1.0, impl->lower}, {1.0, 1.0 / impl->lower});
    F.curve_ = impl;
    F.component_ = [impl](std::size_t k, double zk) -> double {
      if (k == 0) return 1.0;
      if (zk >= 0.0) return impl->value(zk);
      return 1.0 / impl->value(alpha_inverse(*impl, -zk));
    };
    auto comp = F.component_;
    F.eval_ = [comp](std::span<const double> z) { return Vector{comp(0, z[0]), comp(1, z[1])}; };
    return F;
  }

  /// Arctan family of the two-currency case studies.
  static InverseDemand arctan_symmetric(double depth, double impact) {
    if (impact == 0.0) {
      auto F = constant({1.0, 1.0});
      F.family_ = DemandFamily::SymmetricTwoAsset;
      return F;
    }
    return symmetric_two_asset(arctan_curve(depth, impact));
  }

  /// F_k(z) = g(z_k) / g(z_0).  F_0 is identically one.  Note F_k is
  /// nondecreasing in z_0: selling the numeraire raises the other prices.
  static InverseDemand ratio_form(ScalarCurve g, std::size_t assets) {
    if (!g.value) throw std::invalid_argument("ratio_form needs a curve");
    if (!(g.lower > 0.0)) throw std::invalid_argument("ratio_form curve must take strictly positive values");
    if (assets == 0) throw std::invalid_argument("ratio_form needs at least one asset");
    Vector lo(assets, g.lower / g.upper), hi(assets, g.upper / g.lower);
    lo[0] = hi[0] = 1.0;
    InverseDemand F(DemandFamily::RatioForm, lo, hi);
    auto impl = std::make_shared<const ScalarCurve>(std::move(g));
    F.curve_ = impl;
    F.eval_ = [impl, assets](std::span<const double> z) {
      const double base = impl->value(z[0]);
      if (!(base > 0.0)) throw std::domain_error("ratio_form curve returned a nonpositive value");
      Vector q(assets, 1.0);
      for (std::size_t k = 1; k < assets; ++k) {
        const double gk = impl->value(z[k]);
        if (!(gk > 0.0)) throw std::domain_error("ratio_form curve returned a nonpositive value");
        q[k] = gk / base;
      }
      return q;
    };
    // Shock inversion holds z_0 at zero.
    F.component_ = [impl](std::size_t k, double zk) {
      return k == 0 ? 1.0 : impl->value(zk) / impl->value(0.0);
    };
    return F;
  }

  /// User-supplied map, e.g. a tabulated cross-impact surface.  The result is
  /// clipped into [lower, upper].
  static InverseDemand custom(Evaluator eval, Vector lower, Vector upper) {
    if (lower.size() != upper.size()) throw std::invalid_argument("custom bounds must have equal length");
    InverseDemand F(DemandFamily::Custom, lower, upper);
    F.eval_ = [eval = std::move(eval), lower, upper](std::span<const double> z) {
      Vector q = eval(z);
      for (std::size_t k = 0; k < q.size(); ++k) q[k] = std::clamp(q[k], lower[k], upper[k]);
      return q;
    };
    return F;
  }

  Vector operator()(std::span<const double> z) const {
    if (z.size() != assets()) throw std::invalid_argument("inverse demand evaluated with wrong dimension");
    return eval_(z);
  }

  Vector unshocked() const { return (*this)(Vector(assets(), 0.0)); }

  std::size_t assets() const { return lower_.size(); }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }
  DemandFamily family() const { return family_; }

  /// True when asset 0 has a fixed unit price (numeraire).
  bool has_numeraire() const { return lower_[0] == 1.0 && upper_[0] == 1.0; }

  /// Returns gamma0 with F(gamma0) = q0, coordinate by coordinate.  Only
  /// defined for families whose k-th price depends on z_k alone (the ratio
  /// form is inverted with z_0 held at zero).
  Vector shock_for_price(std::span<const double> q0) const {
    if (q0.size() != assets()) throw std::invalid_argument("shock price has wrong dimension");
    if (!component_) throw std::invalid_argument("custom inverse demand cannot be inverted; supply gamma0 directly");
    Vector gamma(assets(), 0.0);
    for (std::size_t k = 0; k < assets(); ++k) {
      if (q0[k] < lower_[k] || q0[k] > upper_[k])
        throw std::invalid_argument("initial price of asset " + std::to_string(k) + " outside [lower, upper]");
      const double at0 = component_(k, 0.0);
      if (q0[k] == at0) continue;
      if (lower_[k] == upper_[k])
        throw std::invalid_argument("asset " + std::to_string(k) + " has a fixed price");
      auto comp = component_;
      gamma[k] = detail::invert_nonincreasing([&comp, k](double zk) { return comp(k, zk); }, q0[k]);
    }
    return gamma;
  }

  /// alpha^{-1}(w) for the symmetric two-asset family: the u >= 0 with u f(u) = w.
  double alpha_inverse(double w) const {
    if (!curve_ || family_ != DemandFamily::SymmetricTwoAsset)
      throw std::logic_error("alpha_inverse is only defined for the symmetric two-asset family");
    return alpha_inverse(*curve_, w);
  }

  /// Safeguarded Newton on alpha(u) - w over the bracket [w / f(0), w / inf f].
  static double alpha_inverse(const ScalarCurve& f, double w) {
    if (w <= 0.0) return 0.0;
    auto alpha = [&f](double u) { return u * f.value(u); };
    double lo = w / f.value(0.0), hi = w / f.lower;
    while (alpha(hi) < w) hi *= 2.0;
    while (lo > 0.0 && alpha(lo) > w) lo *= 0.5;
    const double tol = std::max(1e-12, 4.0 * std::numeric_limits<double>::epsilon() * w);
    double u = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
      const double r = alpha(u) - w;
      if (std::abs(r) <= tol) return u;
      (r > 0.0 ? hi : lo) = u;
      const double h = 1e-7 * (1.0 + u);
      const double slope = (alpha(u + h) - alpha(std::max(u - h, 0.0))) / (u + h - std::max(u - h, 0.0));
      double next = slope > 0.0 ? u - r / slope : lo - 1.0;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (next == u) return u;
      u = next;
    }
    return u;
  }

  const ScalarCurve* curve() const { return curve_.get(); }

 private:
  InverseDemand(DemandFamily family, Vector lower, Vector upper)
      : family_(family), lower_(std::move(lower)), upper_(std::move(upper)) {}

  DemandFamily family_ = DemandFamily::Constant;
  Vector lower_, upper_;
  Evaluator eval_;
  std::function<double(std::size_t, double)> component_;
  std::shared_ptr<const ScalarCurve> curve_;
};

/// Checks z -> z^T F(z) for strict increase along each coordinate axis on a
/// symmetric grid.  Informational: the clearing results do not depend on it.
inline bool liquidation_value_increasing(const InverseDemand& F, double half_width = 10.0, std::size_t points = 401) {
  const std::size_t m = F.assets();
  for (std::size_t k = 0; k < m; ++k) {
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < points; ++s) {
      Vector z(m, 0.0);
      z[k] = -half_width + 2.0 * half_width * static_cast<double>(s) / static_cast<double>(points - 1);
      const double v = dot(z, F(z));
      if (!(v > prev)) return false;
      prev = v;
    }
  }
  return true;
}

}  // namespace contagion
