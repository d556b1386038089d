#pragma once

// Balance-sheet data model for multi-asset interbank networks.
//
// Node indexing: node 0 is the societal node (a pure sink with no obligations
// of its own); firm i (zero based) is node i + 1.  Liabilities are stored as
// L[firm][node][asset] in physical units of the asset.

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <utility>

#include "contagion/types.hpp"

namespace contagion {

class Network {
 public:
  static constexpr std::size_t kSociety = 0;
  static constexpr std::size_t node_of(std::size_t firm) { return firm + 1; }

  Network() = default;

  /// `liabilities` is laid out [firm][node][asset] with n * (n + 1) * m entries.
  Network(std::size_t firms, std::size_t assets, std::vector<double> liabilities, Matrix endowments)
      : n_(firms), m_(assets), liabilities_(std::move(liabilities)), endowments_(std::move(endowments)) {
    validate();
  }

  std::size_t firms() const { return n_; }
  std::size_t assets() const { return m_; }
  std::size_t nodes() const { return n_ + 1; }

  double liability(std::size_t firm, std::size_t node, std::size_t asset) const {
    return liabilities_[index(firm, node, asset)];
  }
  double endowment(std::size_t firm, std::size_t asset) const { return endowments_(firm, asset); }
  const Matrix& endowments() const { return endowments_; }
  const std::vector<double>& liabilities() const { return liabilities_; }

  /// True when every firm owes the societal node a positive amount in every asset.
  bool society_linked() const {
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t k = 0; k < m_; ++k)
        if (!(liability(i, kSociety, k) > 0.0)) return false;
    return true;
  }

  /// Largest endowment or liability entry; used to scale solver tolerances.
  double scale() const {
    double s = sup_norm(endowments_.data());
    return std::max(s, sup_norm(liabilities_));
  }

  friend bool operator==(const Network&, const Network&) = default;

 private:
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return (i * (n_ + 1) + j) * m_ + k;
  }

  void validate() const {
    if (m_ == 0) throw std::invalid_argument("network needs at least one asset");
    if (liabilities_.size() != n_ * (n_ + 1) * m_)
      throw std::invalid_argument("liability array has wrong size");
    if (endowments_.rows() != n_ || endowments_.cols() != m_)
      throw std::invalid_argument("endowment matrix has wrong shape");
    for (double v : liabilities_)
      if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("liabilities must be finite and nonnegative");
    for (double v : endowments_.data())
      if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("endowments must be finite and nonnegative");
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t k = 0; k < m_; ++k)
        if (liability(i, node_of(i), k) != 0.0)
          throw std::invalid_argument("firm " + std::to_string(i) + " has an obligation to itself");
  }

  std::size_t n_ = 0;
  std::size_t m_ = 0;
  std::vector<double> liabilities_;
  Matrix endowments_;
};

/// Mutable staging area for assembling a Network entry by entry.
class NetworkBuilder {
 public:
  NetworkBuilder(std::size_t firms, std::size_t assets)
      : n_(firms), m_(assets), liabilities_(firms * (firms + 1) * assets, 0.0), endowments_(firms, assets) {}

  NetworkBuilder& owe(std::size_t firm, std::size_t node, std::size_t asset, double amount) {
    liabilities_.at((firm * (n_ + 1) + node) * m_ + asset) = amount;
    return *this;
  }
  NetworkBuilder& owe_firm(std::size_t firm, std::size_t creditor, std::size_t asset, double amount) {
    return owe(firm, Network::node_of(creditor), asset, amount);
  }
  NetworkBuilder& owe_society(std::size_t firm, std::size_t asset, double amount) {
    return owe(firm, Network::kSociety, asset, amount);
  }
  NetworkBuilder& endow(std::size_t firm, std::size_t asset, double amount) {
    if (firm >= n_ || asset >= m_) throw std::out_of_range("endowment index");
    endowments_(firm, asset) = amount;
    return *this;
  }

  Network build() const { return Network(n_, m_, liabilities_, endowments_); }

 private:
  std::size_t n_, m_;
  std::vector<double> liabilities_;
  Matrix endowments_;
};

/// Relative liabilities a[i][j][k] and total obligations pbar[i][k].
class RelativeLiabilities {
 public:
  RelativeLiabilities() = default;
  RelativeLiabilities(std::size_t firms, std::size_t assets)
      : n_(firms), m_(assets), shares_(firms * (firms + 1) * assets, 0.0), totals_(firms, assets) {}

  double share(std::size_t firm, std::size_t node, std::size_t asset) const {
    return shares_[(firm * (n_ + 1) + node) * m_ + asset];
  }
  double& share(std::size_t firm, std::size_t node, std::size_t asset) {
    return shares_[(firm * (n_ + 1) + node) * m_ + asset];
  }
  const Matrix& totals() const { return totals_; }
  Matrix& totals() { return totals_; }
  std::size_t firms() const { return n_; }
  std::size_t assets() const { return m_; }

 private:
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  std::vector<double> shares_;
  Matrix totals_;
};

/// Zero-obligation rows are spread uniformly over all n + 1 nodes so that
/// every row stays stochastic including the societal node.
inline RelativeLiabilities build_relative_liabilities(const Network& net) {
  const std::size_t n = net.firms(), m = net.assets();
  RelativeLiabilities rel(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < m; ++k) {
      double total = 0.0;
      for (std::size_t j = 0; j <= n; ++j) total += net.liability(i, j, k);
      rel.totals()(i, k) = total;
      for (std::size_t j = 0; j <= n; ++j)
        rel.share(i, j, k) = total > 0.0 ? net.liability(i, j, k) / total : 1.0 / static_cast<double>(n + 1);
    }
  }
  return rel;
}

/// e[i][k] = x[i][k] + sum_j a[j][i][k] * min(pbar[j][k], y[j][k]).
inline Matrix realized_inflow(const Network& net, const RelativeLiabilities& rel, const Matrix& holdings) {
  const std::size_t n = net.firms(), m = net.assets();
  Matrix e = net.endowments();
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < m; ++k) {
      const double paid = std::min(rel.totals()(j, k), std::max(holdings(j, k), 0.0));
      if (paid == 0.0) continue;
      for (std::size_t i = 0; i < n; ++i) {
        const double a = rel.share(j, Network::node_of(i), k);
        if (a != 0.0) e(i, k) += a * paid;
      }
    }
  }
  return e;
}

/// Units of each asset received by the societal node.
inline Vector society_inflow(const Network& net, const RelativeLiabilities& rel, const Matrix& holdings) {
  Vector out(net.assets(), 0.0);
  for (std::size_t j = 0; j < net.firms(); ++j)
    for (std::size_t k = 0; k < net.assets(); ++k)
      out[k] += rel.share(j, Network::kSociety, k) * std::min(rel.totals()(j, k), std::max(holdings(j, k), 0.0));
  return out;
}

struct RandomNetworkSpec {
  std::size_t firms = 20;
  std::size_t assets = 2;
  std::uint64_t seed = 0;
  double link_prob = 0.25;
  double link_size = 1.0;
  double society_obligation = 1.0;
  double endowment_low = 0.0;
  double endowment_high = 20.0;
};

namespace detail {
/// Uniform double on [0, 1) from the top 53 bits; fixed across standard libraries.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}
}  // namespace detail

/// Draw order is fixed: for each asset layer, each ordered pair (i, j), i != j,
/// row-major; then one endowment draw per firm.
inline Network random_network(const RandomNetworkSpec& spec) {
  if (!(spec.link_prob >= 0.0 && spec.link_prob <= 1.0))
    throw std::invalid_argument("link probability must lie in [0, 1]");
  if (spec.link_size < 0.0 || spec.society_obligation < 0.0)
    throw std::invalid_argument("link and society obligations must be nonnegative");
  if (!(spec.endowment_low >= 0.0 && spec.endowment_high >= spec.endowment_low))
    throw std::invalid_argument("endowment range must be a nonnegative interval");
  if (spec.assets == 0) throw std::invalid_argument("need at least one asset");

  std::mt19937_64 rng(spec.seed);
  NetworkBuilder b(spec.firms, spec.assets);
  for (std::size_t k = 0; k < spec.assets; ++k)
    for (std::size_t i = 0; i < spec.firms; ++i)
      for (std::size_t j = 0; j < spec.firms; ++j) {
        if (i == j) continue;
        if (detail::unit_uniform(rng) < spec.link_prob) b.owe_firm(i, j, k, spec.link_size);
      }
  for (std::size_t i = 0; i < spec.firms; ++i) {
    for (std::size_t k = 0; k < spec.assets; ++k) b.owe_society(i, k, spec.society_obligation);
    const double total =
        spec.endowment_low + (spec.endowment_high - spec.endowment_low) * detail::unit_uniform(rng);
    for (std::size_t k = 0; k < spec.assets; ++k) b.endow(i, k, total / static_cast<double>(spec.assets));
  }
  return b.build();
}

/// Re-denominates a single-asset network into (asset 0 = common currency,
/// asset 1 = home currency).  Non-home firms keep `exposure[i]` of their
/// endowment in the home currency; home firms hold everything there.
/// Obligations from a home firm to another home firm or to society move to
/// the home currency, all others stay in the common currency.  Exposure
/// entries for home firms are ignored.
inline Network split_two_currency(const Network& base, std::span<const double> exposure,
                                  const std::set<std::size_t>& home) {
  const std::size_t n = base.firms();
  if (base.assets() != 1) throw std::invalid_argument("split_two_currency expects a single-asset network");
  if (exposure.size() != n) throw std::invalid_argument("exposure vector length must equal firm count");
  for (std::size_t h : home)
    if (h >= n) throw std::invalid_argument("home firm index out of range");

  NetworkBuilder b(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = base.endowment(i, 0);
    if (home.contains(i)) {
      b.endow(i, 0, 0.0).endow(i, 1, x);
    } else {
      const double ge = exposure[i];
      if (!(ge >= 0.0) || ge > x)
        throw std::invalid_argument("exposure of firm " + std::to_string(i) + " must lie in [0, endowment]");
      b.endow(i, 0, x - ge).endow(i, 1, ge);
    }
    for (std::size_t j = 0; j <= n; ++j) {
      const double l = base.liability(i, j, 0);
      const bool creditor_home = j == Network::kSociety || home.contains(j - 1);
      const std::size_t asset = (home.contains(i) && creditor_home) ? 1 : 0;
      b.owe(i, j, asset, l);
    }
  }
  return b.build();
}

/// Balance-sheet aggregates for one firm: total assets, capital, interbank liabilities.
struct FirmAggregates {
  double total_assets = 0.0;
  double capital = 0.0;
  double interbank_liabilities = 0.0;
};

/// Builds a single-asset network from aggregates and an n x n interbank
/// liabilities matrix (diagonal zero).  Endowment x_i = T_i - sum_j L_ij and
/// the external liability L_i0 = T_i - sum_j L_ij - c_i.
inline Network calibrate_from_aggregates(std::span<const FirmAggregates> firms, const Matrix& interbank) {
  const std::size_t n = firms.size();
  if (interbank.rows() != n || interbank.cols() != n)
    throw std::invalid_argument("interbank liabilities matrix must be n x n");
  NetworkBuilder b(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double l = interbank(i, j);
      if (!std::isfinite(l) || l < 0.0) throw std::invalid_argument("interbank liabilities must be nonnegative");
      if (i == j && l != 0.0) throw std::invalid_argument("interbank matrix diagonal must be zero");
      row += l;
      if (i != j) b.owe_firm(i, j, 0, l);
    }
    const auto& f = firms[i];
    const double tol = 1e-9 * std::max(1.0, std::abs(f.interbank_liabilities));
    if (std::abs(row - f.interbank_liabilities) > tol)
      throw std::invalid_argument("row " + std::to_string(i) + " of the liabilities matrix does not sum to the "
                                  "reported interbank liabilities");
    const double endowment = f.total_assets - row;
    const double external = f.total_assets - row - f.capital;
    if (endowment < 0.0) throw std::invalid_argument("firm " + std::to_string(i) + " has negative implied endowment");
    if (external < 0.0)
      throw std::invalid_argument("firm " + std::to_string(i) + " has negative implied external liability");
    b.endow(i, 0, endowment).owe_society(i, 0, external);
  }
  return b.build();
}

}  // namespace contagion
