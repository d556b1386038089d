#pragma once

// Scenario layer: JSON configuration, shock sweeps run on a worker pool, the
// two-currency exit pipeline and tidy CSV output for plotting.
//
// Config document (all indices 0-based, asset 0 is the numeraire):
//   { "schema_version": 1, "seed": 7,
//     "network": {"source": "inline" | "file" | "random" | "calibration", ...},
//     "inverse_demand": {"family": "capped_linear" | "arctan_symmetric" | "ratio_form" | "constant", ...},
//     "payment_rule": {"payment_rule": "surplus" | "priority", "mu", "delta_scale", "order", "overrides"},
//     "utility": {"utility": "min_trading" | "asset_max" | "value_max", "k_star", "tie_break", "overrides"},
//     "sweep": {"q0_2": [...]} | {"q0_2_range": {"from", "to", "count"}} | {"q0": [[...]]} | {"gamma0": [[...]]},
//     "solver": {...}, "grexit": {...}, "output": {...} }
// See README.md for every field and its default.

#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <thread>

#include "contagion/io.hpp"

namespace contagion::scenarios {

using io::FormatError;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration.

struct NetworkSpec {
  std::string source = "random";
  json inline_doc;          // source = inline
  std::string path;         // source = file
  RandomNetworkSpec random;  // source = random (seed comes from the top level)
  std::string aggregates;   // source = calibration
  std::string liabilities;
  Vector exposures;                // empty: no currency split
  std::vector<std::size_t> home_set;
  bool split = false;
};

struct DemandSpec {
  std::string family = "constant";
  Vector price, base, slope, lower, upper;  // constant, capped_linear
  double depth = 0.75, impact = 1.0;        // arctan_symmetric
  double rate = 1.0, g_lower = 0.5, g_upper = 2.0;  // ratio_form with g = clamp(exp(-rate z))
  std::size_t assets = 2;
};

struct SolverSpec {
  ClearingOptions clearing;
  PriceOptions price;
  bool scan = false;
  ScanOptions scan_options;
  std::size_t threads = 0;  // 0: hardware concurrency
};

struct GrexitSpec {
  double depth = 2.0 / 3.0;
  double impact = 1e-4;
  std::vector<double> impact_sweep;
};

struct OutputSpec {
  std::string directory;  // empty: nothing written
  std::string prefix = "run";
  bool traces = false;
};

enum class SweepKind { None, PriceOfAsset2, Price, Shock };

struct ScenarioConfig {
  int schema_version = io::kSchemaVersion;
  std::uint64_t seed = 0;
  NetworkSpec network;
  DemandSpec demand;
  PaymentRule payment;
  std::map<std::size_t, PaymentRule> payment_overrides;
  BehaviorRule behavior;
  std::map<std::size_t, BehaviorRule> behavior_overrides;
  SweepKind sweep_kind = SweepKind::None;
  std::vector<Vector> sweep;  // one entry per point; PriceOfAsset2 entries have length 1
  SolverSpec solver;
  GrexitSpec grexit;
  OutputSpec output;
  std::filesystem::path base_dir;  // relative file references resolve here

  json effective() const;
  std::string hash() const;
};

namespace detail {

/// Walks a JSON document, tracking the path for error messages and locating
/// the offending line in the source text.
class Reader {
 public:
  Reader(const json& root, const std::string& text, std::string source)
      : root_(root), text_(text), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& what) const {
    std::string p = "$";
    for (const auto& s : path) p += (s.front() == '[' ? "" : ".") + s;
    throw FormatError(source_ + ":" + std::to_string(line(path)) + " (" + p + ")", what);
  }

  /// Best-effort source line: finds each object key of the path in order.
  std::size_t line(const std::vector<std::string>& path) const {
    std::size_t pos = 0;
    for (const auto& s : path) {
      if (s.front() == '[') continue;
      const auto hit = text_.find("\"" + s + "\"", pos);
      if (hit == std::string::npos) break;
      pos = hit;
    }
    return static_cast<std::size_t>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(pos), '\n')) +
           1;
  }

  void keys(const json& j, const std::vector<std::string>& path, std::initializer_list<const char*> allowed) const {
    if (!j.is_object()) fail(path, "expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || it.key() == a;
      if (!ok) fail(with(path, it.key()), "unknown field");
    }
  }

  static std::vector<std::string> with(std::vector<std::string> path, const std::string& key) {
    path.push_back(key);
    return path;
  }
  static std::vector<std::string> at(std::vector<std::string> path, std::size_t i) {
    path.push_back("[" + std::to_string(i) + "]");
    return path;
  }

  double number(const json& j, const std::vector<std::string>& path) const {
    if (!j.is_number() || !std::isfinite(j.get<double>())) fail(path, "expected a finite number");
    return j.get<double>();
  }
  std::size_t index(const json& j, const std::vector<std::string>& path) const {
    if (!j.is_number_integer() || j.get<long long>() < 0) fail(path, "expected a nonnegative integer");
    return j.get<std::size_t>();
  }
  bool boolean(const json& j, const std::vector<std::string>& path) const {
    if (!j.is_boolean()) fail(path, "expected true or false");
    return j.get<bool>();
  }
  std::string string(const json& j, const std::vector<std::string>& path) const {
    if (!j.is_string()) fail(path, "expected a string");
    return j.get<std::string>();
  }
  Vector vector(const json& j, const std::vector<std::string>& path) const {
    if (!j.is_array()) fail(path, "expected an array of numbers");
    Vector v;
    for (std::size_t i = 0; i < j.size(); ++i) v.push_back(number(j[i], at(path, i)));
    return v;
  }
  std::vector<std::size_t> indices(const json& j, const std::vector<std::string>& path) const {
    if (!j.is_array()) fail(path, "expected an array of indices");
    std::vector<std::size_t> v;
    for (std::size_t i = 0; i < j.size(); ++i) v.push_back(index(j[i], at(path, i)));
    return v;
  }

  const std::string& source() const { return source_; }
  const json& root() const { return root_; }

 private:
  const json& root_;
  const std::string& text_;
  std::string source_;
};

inline PaymentRule parse_payment(const Reader& r, const json& j, const std::vector<std::string>& path,
                                 const PaymentRule& base, bool allow_overrides) {
  if (allow_overrides)
    r.keys(j, path, {"payment_rule", "mu", "delta_scale", "order", "overrides"});
  else
    r.keys(j, path, {"payment_rule", "mu", "delta_scale", "order"});
  PaymentRule p = base;
  if (j.contains("payment_rule")) {
    const auto name = r.string(j["payment_rule"], Reader::with(path, "payment_rule"));
    if (name == "surplus") p.scheme = PaymentScheme::Surplus;
    else if (name == "priority" || name == "proportional") p.scheme = PaymentScheme::PriorityProportional;
    else r.fail(Reader::with(path, "payment_rule"), "expected \"surplus\" or \"priority\"");
    if (name == "proportional") p.priority_count = 0;
  }
  if (j.contains("mu")) p.priority_count = r.index(j["mu"], Reader::with(path, "mu"));
  if (j.contains("delta_scale")) {
    p.delta_scale = r.number(j["delta_scale"], Reader::with(path, "delta_scale"));
    if (!(p.delta_scale > 0.0)) r.fail(Reader::with(path, "delta_scale"), "must be strictly positive");
  }
  if (j.contains("order")) p.order = r.indices(j["order"], Reader::with(path, "order"));
  return p;
}

inline BehaviorRule parse_behavior(const Reader& r, const json& j, const std::vector<std::string>& path,
                                   const BehaviorRule& base, bool allow_overrides) {
  if (allow_overrides)
    r.keys(j, path, {"utility", "k_star", "tie_break", "reference", "overrides"});
  else
    r.keys(j, path, {"utility", "k_star", "tie_break", "reference"});
  BehaviorRule b = base;
  if (j.contains("utility")) {
    const auto name = r.string(j["utility"], Reader::with(path, "utility"));
    if (name == "min_trading") b.utility = Utility::MinTrading;
    else if (name == "asset_max") b.utility = Utility::AssetMax;
    else if (name == "value_max") b.utility = Utility::ValueMax;
    else r.fail(Reader::with(path, "utility"), "expected \"min_trading\", \"asset_max\" or \"value_max\"");
  }
  if (j.contains("k_star")) b.target_asset = r.index(j["k_star"], Reader::with(path, "k_star"));
  if (j.contains("tie_break")) {
    const auto name = r.string(j["tie_break"], Reader::with(path, "tie_break"));
    if (name == "lowest_index") b.tie_break = TieBreak::LowestIndex;
    else if (name == "proportional_spread") b.tie_break = TieBreak::ProportionalSpread;
    else r.fail(Reader::with(path, "tie_break"), "expected \"lowest_index\" or \"proportional_spread\"");
  }
  // "unshocked" is what the effective echo writes for the default F(0).
  if (j.contains("reference") && !(j["reference"].is_string() && j["reference"] == "unshocked"))
    b.reference = r.vector(j["reference"], Reader::with(path, "reference"));
  return b;
}

template <class Rule, class Parse>
std::map<std::size_t, Rule> parse_overrides(const Reader& r, const json& j, const std::vector<std::string>& path,
                                            const Rule& base, Parse parse) {
  std::map<std::size_t, Rule> out;
  if (!j.is_object()) r.fail(path, "expected an object keyed by firm index");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto p = Reader::with(path, it.key());
    std::size_t used = 0;
    std::size_t firm = 0;
    try {
      firm = std::stoul(it.key(), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != it.key().size()) r.fail(p, "override keys must be firm indices");
    out[firm] = parse(r, it.value(), p, base, false);
  }
  return out;
}

inline const char* to_string(PaymentScheme s) { return s == PaymentScheme::Surplus ? "surplus" : "priority"; }
inline const char* to_string(Utility u) {
  switch (u) {
    case Utility::MinTrading: return "min_trading";
    case Utility::AssetMax: return "asset_max";
    case Utility::ValueMax: return "value_max";
  }
  return "min_trading";
}
inline const char* to_string(TieBreak t) {
  return t == TieBreak::LowestIndex ? "lowest_index" : "proportional_spread";
}

inline json payment_json(const PaymentRule& p) {
  return {{"payment_rule", to_string(p.scheme)},
          {"mu", p.priority_count},
          {"delta_scale", p.delta_scale},
          {"order", p.order}};
}

inline json behavior_json(const BehaviorRule& b) {
  json j = {{"utility", to_string(b.utility)}, {"k_star", b.target_asset}, {"tie_break", to_string(b.tie_break)}};
  j["reference"] = b.reference.empty() ? json("unshocked") : json(b.reference);
  return j;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

inline json ScenarioConfig::effective() const {
  json net = {{"source", network.source}};
  if (network.source == "inline") {
    net = network.inline_doc;
    net["source"] = "inline";
  } else if (network.source == "file") {
    net["path"] = network.path;
  } else if (network.source == "random") {
    const auto& s = network.random;
    net.update({{"firms", s.firms},
                {"assets", s.assets},
                {"link_prob", s.link_prob},
                {"link_size", s.link_size},
                {"society_obligation", s.society_obligation},
                {"endowment_range", {s.endowment_low, s.endowment_high}}});
  } else {
    net.update({{"aggregates", network.aggregates}, {"liabilities", network.liabilities}});
    if (network.split) net.update({{"exposures", network.exposures}, {"home_set", network.home_set}});
  }

  json demand = {{"family", this->demand.family}};
  const auto& d = this->demand;
  if (d.family == "constant") demand["price"] = d.price;
  if (d.family == "capped_linear")
    demand.update({{"base", d.base}, {"slope", d.slope}, {"lower", d.lower}, {"upper", d.upper}});
  if (d.family == "arctan_symmetric") demand.update({{"depth", d.depth}, {"impact", d.impact}});
  if (d.family == "ratio_form")
    demand.update({{"assets", d.assets}, {"g", {{"kind", "exponential"}, {"rate", d.rate},
                                                  {"lower", d.g_lower}, {"upper", d.g_upper}}}});

  json pay = detail::payment_json(payment);
  pay["overrides"] = json::object();
  for (const auto& [i, p] : payment_overrides) pay["overrides"][std::to_string(i)] = detail::payment_json(p);
  json util = detail::behavior_json(behavior);
  util["overrides"] = json::object();
  for (const auto& [i, b] : behavior_overrides) util["overrides"][std::to_string(i)] = detail::behavior_json(b);

  json sw = json::object();
  if (sweep_kind == SweepKind::PriceOfAsset2) {
    json v = json::array();
    for (const auto& p : sweep) v.push_back(p[0]);
    sw["q0_2"] = v;
  } else if (sweep_kind == SweepKind::Price) {
    sw["q0"] = sweep;
  } else if (sweep_kind == SweepKind::Shock) {
    sw["gamma0"] = sweep;
  }

  const auto& c = solver.clearing;
  const auto& p = solver.price;
  json solver_j = {{"tolerance", c.tolerance},
                   {"max_iterations", c.max_iterations},
                   {"default_tolerance", c.default_tolerance},
                   {"step", p.step},
                   {"max_steps", p.max_steps},
                   {"price_tolerance", p.tolerance},
                   {"trace_stride", p.trace_stride},
                   {"scan", solver.scan},
                   {"grid_points", solver.scan_options.grid_points},
                   {"threads", solver.threads}};

  return {{"schema_version", schema_version},
          {"seed", seed},
          {"network", net},
          {"inverse_demand", demand},
          {"payment_rule", pay},
          {"utility", util},
          {"sweep", sw},
          {"solver", solver_j},
          {"grexit", {{"depth", grexit.depth}, {"impact", grexit.impact}, {"impact_sweep", grexit.impact_sweep}}},
          {"output", {{"directory", output.directory}, {"prefix", output.prefix}, {"traces", output.traces}}}};
}

/// 64-bit FNV-1a of the effective config, as 16 hex digits.  The thread count
/// only affects scheduling, so it is left out.
inline std::string ScenarioConfig::hash() const {
  json j = effective();
  j["solver"].erase("threads");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(j.dump())));
  return buf;
}

inline ScenarioConfig parse_config(const std::string& text, const std::string& source = "<config>",
                                   const std::filesystem::path& base_dir = {}) {
  const json root = io::parse_json(text, source);
  const detail::Reader r(root, text, source);
  using detail::Reader;
  r.keys(root, {}, {"schema_version", "seed", "network", "inverse_demand", "payment_rule", "utility", "sweep",
                    "solver", "grexit", "output", "description"});
  ScenarioConfig cfg;
  cfg.base_dir = base_dir;
  if (!root.contains("schema_version")) r.fail({}, "missing field 'schema_version'");
  if (r.index(root["schema_version"], {"schema_version"}) != static_cast<std::size_t>(io::kSchemaVersion))
    r.fail({"schema_version"}, "unsupported schema version (expected 1)");
  if (root.contains("seed")) {
    if (!root["seed"].is_number_unsigned() && !(root["seed"].is_number_integer() && root["seed"].get<long long>() >= 0))
      r.fail({"seed"}, "expected a nonnegative integer");
    cfg.seed = root["seed"].get<std::uint64_t>();
  }

  // network
  if (!root.contains("network")) r.fail({}, "missing field 'network'");
  {
    const json& j = root["network"];
    const std::vector<std::string> P{"network"};
    if (!j.is_object() || !j.contains("source")) r.fail(P, "network needs a 'source' field");
    auto& ns = cfg.network;
    ns.source = r.string(j["source"], Reader::with(P, "source"));
    if (ns.source == "inline") {
      ns.inline_doc = j;
      ns.inline_doc.erase("source");
      try {
        (void)io::network_from_json(j, "$.network");
      } catch (const FormatError& e) {
        r.fail(P, e.what());
      } catch (const std::invalid_argument& e) {
        r.fail(P, e.what());
      }
    } else if (ns.source == "file") {
      r.keys(j, P, {"source", "path"});
      if (!j.contains("path")) r.fail(P, "file source needs 'path'");
      ns.path = r.string(j["path"], Reader::with(P, "path"));
    } else if (ns.source == "random") {
      r.keys(j, P, {"source", "firms", "assets", "link_prob", "link_size", "society_obligation", "endowment_range"});
      auto& s = ns.random;
      if (j.contains("firms")) s.firms = r.index(j["firms"], Reader::with(P, "firms"));
      if (j.contains("assets")) s.assets = r.index(j["assets"], Reader::with(P, "assets"));
      if (j.contains("link_prob")) s.link_prob = r.number(j["link_prob"], Reader::with(P, "link_prob"));
      if (j.contains("link_size")) s.link_size = r.number(j["link_size"], Reader::with(P, "link_size"));
      if (j.contains("society_obligation"))
        s.society_obligation = r.number(j["society_obligation"], Reader::with(P, "society_obligation"));
      if (j.contains("endowment_range")) {
        const Vector range = r.vector(j["endowment_range"], Reader::with(P, "endowment_range"));
        if (range.size() != 2) r.fail(Reader::with(P, "endowment_range"), "expected [low, high]");
        s.endowment_low = range[0];
        s.endowment_high = range[1];
      }
      if (!(s.link_prob >= 0.0 && s.link_prob <= 1.0)) r.fail(Reader::with(P, "link_prob"), "must lie in [0, 1]");
      if (s.firms == 0 || s.assets == 0) r.fail(P, "firms and assets must be positive");
      if (!(s.endowment_low >= 0.0 && s.endowment_high >= s.endowment_low))
        r.fail(Reader::with(P, "endowment_range"), "must be a nonnegative interval");
    } else if (ns.source == "calibration") {
      r.keys(j, P, {"source", "aggregates", "liabilities", "exposures", "home_set"});
      if (!j.contains("aggregates") || !j.contains("liabilities"))
        r.fail(P, "calibration source needs 'aggregates' and 'liabilities'");
      ns.aggregates = r.string(j["aggregates"], Reader::with(P, "aggregates"));
      ns.liabilities = r.string(j["liabilities"], Reader::with(P, "liabilities"));
      if (j.contains("exposures") != j.contains("home_set"))
        r.fail(P, "'exposures' and 'home_set' must be given together");
      if (j.contains("exposures")) {
        ns.split = true;
        ns.exposures = r.vector(j["exposures"], Reader::with(P, "exposures"));
        ns.home_set = r.indices(j["home_set"], Reader::with(P, "home_set"));
      }
    } else {
      r.fail(Reader::with(P, "source"), "expected \"inline\", \"file\", \"random\" or \"calibration\"");
    }
  }

  // inverse demand
  if (!root.contains("inverse_demand")) r.fail({}, "missing field 'inverse_demand'");
  {
    const json& j = root["inverse_demand"];
    const std::vector<std::string> P{"inverse_demand"};
    if (!j.is_object() || !j.contains("family")) r.fail(P, "inverse_demand needs a 'family' field");
    auto& d = cfg.demand;
    d.family = r.string(j["family"], Reader::with(P, "family"));
    if (d.family == "constant") {
      r.keys(j, P, {"family", "price"});
      if (!j.contains("price")) r.fail(P, "constant family needs 'price'");
      d.price = r.vector(j["price"], Reader::with(P, "price"));
    } else if (d.family == "capped_linear") {
      r.keys(j, P, {"family", "base", "slope", "lower", "upper"});
      for (const char* key : {"base", "slope", "lower", "upper"})
        if (!j.contains(key)) r.fail(P, std::string("capped_linear needs '") + key + "'");
      d.base = r.vector(j["base"], Reader::with(P, "base"));
      d.slope = r.vector(j["slope"], Reader::with(P, "slope"));
      d.lower = r.vector(j["lower"], Reader::with(P, "lower"));
      d.upper = r.vector(j["upper"], Reader::with(P, "upper"));
    } else if (d.family == "arctan_symmetric") {
      r.keys(j, P, {"family", "depth", "impact"});
      if (j.contains("depth")) d.depth = r.number(j["depth"], Reader::with(P, "depth"));
      if (j.contains("impact")) d.impact = r.number(j["impact"], Reader::with(P, "impact"));
    } else if (d.family == "ratio_form") {
      r.keys(j, P, {"family", "assets", "g"});
      if (j.contains("assets")) d.assets = r.index(j["assets"], Reader::with(P, "assets"));
      if (j.contains("g")) {
        const auto G = Reader::with(P, "g");
        r.keys(j["g"], G, {"kind", "rate", "lower", "upper"});
        if (j["g"].contains("kind") && r.string(j["g"]["kind"], Reader::with(G, "kind")) != "exponential")
          r.fail(Reader::with(G, "kind"), "only \"exponential\" ships");
        if (j["g"].contains("rate")) d.rate = r.number(j["g"]["rate"], Reader::with(G, "rate"));
        if (j["g"].contains("lower")) d.g_lower = r.number(j["g"]["lower"], Reader::with(G, "lower"));
        if (j["g"].contains("upper")) d.g_upper = r.number(j["g"]["upper"], Reader::with(G, "upper"));
      }
    } else {
      r.fail(Reader::with(P, "family"),
             "expected \"capped_linear\", \"arctan_symmetric\", \"ratio_form\" or \"constant\"");
    }
  }

  if (root.contains("payment_rule")) {
    const std::vector<std::string> P{"payment_rule"};
    cfg.payment = detail::parse_payment(r, root["payment_rule"], P, cfg.payment, true);
    if (root["payment_rule"].contains("overrides"))
      cfg.payment_overrides = detail::parse_overrides(r, root["payment_rule"]["overrides"],
                                                      Reader::with(P, "overrides"), cfg.payment, detail::parse_payment);
  }
  if (root.contains("utility")) {
    const std::vector<std::string> P{"utility"};
    cfg.behavior = detail::parse_behavior(r, root["utility"], P, cfg.behavior, true);
    if (root["utility"].contains("overrides"))
      cfg.behavior_overrides = detail::parse_overrides(r, root["utility"]["overrides"], Reader::with(P, "overrides"),
                                                       cfg.behavior, detail::parse_behavior);
  }

  if (root.contains("sweep")) {
    const json& j = root["sweep"];
    const std::vector<std::string> P{"sweep"};
    r.keys(j, P, {"q0_2", "q0_2_range", "q0", "gamma0"});
    if (j.size() > 1) r.fail(P, "give exactly one of q0_2, q0_2_range, q0, gamma0");
    if (j.contains("q0_2")) {
      cfg.sweep_kind = SweepKind::PriceOfAsset2;
      for (double v : r.vector(j["q0_2"], Reader::with(P, "q0_2"))) cfg.sweep.push_back({v});
    } else if (j.contains("q0_2_range")) {
      const auto R = Reader::with(P, "q0_2_range");
      r.keys(j["q0_2_range"], R, {"from", "to", "count"});
      for (const char* key : {"from", "to", "count"})
        if (!j["q0_2_range"].contains(key)) r.fail(R, std::string("missing field '") + key + "'");
      const double from = r.number(j["q0_2_range"]["from"], Reader::with(R, "from"));
      const double to = r.number(j["q0_2_range"]["to"], Reader::with(R, "to"));
      const std::size_t count = r.index(j["q0_2_range"]["count"], Reader::with(R, "count"));
      if (count == 0) r.fail(Reader::with(R, "count"), "sweep grid must be nonempty");
      cfg.sweep_kind = SweepKind::PriceOfAsset2;
      for (std::size_t s = 0; s < count; ++s)
        cfg.sweep.push_back({count == 1 ? from : from + (to - from) * static_cast<double>(s) / double(count - 1)});
    } else if (j.contains("q0") || j.contains("gamma0")) {
      const bool price = j.contains("q0");
      const auto key = price ? "q0" : "gamma0";
      const auto R = Reader::with(P, key);
      if (!j[key].is_array()) r.fail(R, "expected an array of vectors");
      cfg.sweep_kind = price ? SweepKind::Price : SweepKind::Shock;
      for (std::size_t s = 0; s < j[key].size(); ++s) cfg.sweep.push_back(r.vector(j[key][s], Reader::at(R, s)));
    }
    if (cfg.sweep_kind != SweepKind::None && cfg.sweep.empty()) r.fail(P, "sweep grid must be nonempty");
  }

  if (root.contains("solver")) {
    const json& j = root["solver"];
    const std::vector<std::string> P{"solver"};
    r.keys(j, P, {"tolerance", "max_iterations", "default_tolerance", "step", "max_steps", "price_tolerance",
                  "trace_stride", "scan", "grid_points", "threads"});
    auto& s = cfg.solver;
    auto positive = [&](const char* key, double& out) {
      if (!j.contains(key)) return;
      out = r.number(j[key], Reader::with(P, key));
      if (!(out > 0.0)) r.fail(Reader::with(P, key), "must be strictly positive");
    };
    positive("tolerance", s.clearing.tolerance);
    positive("default_tolerance", s.clearing.default_tolerance);
    positive("step", s.price.step);
    positive("price_tolerance", s.price.tolerance);
    if (s.price.step > 1.0) r.fail(Reader::with(P, "step"), "must lie in (0, 1]");
    if (j.contains("max_iterations")) s.clearing.max_iterations = r.index(j["max_iterations"], Reader::with(P, "max_iterations"));
    if (j.contains("max_steps")) s.price.max_steps = r.index(j["max_steps"], Reader::with(P, "max_steps"));
    if (j.contains("trace_stride")) s.price.trace_stride = r.index(j["trace_stride"], Reader::with(P, "trace_stride"));
    if (j.contains("scan")) s.scan = r.boolean(j["scan"], Reader::with(P, "scan"));
    if (j.contains("grid_points")) s.scan_options.grid_points = r.index(j["grid_points"], Reader::with(P, "grid_points"));
    if (j.contains("threads")) s.threads = r.index(j["threads"], Reader::with(P, "threads"));
    s.price.clearing = s.clearing;
    s.scan_options.clearing = s.clearing;
  }

  if (root.contains("grexit")) {
    const json& j = root["grexit"];
    const std::vector<std::string> P{"grexit"};
    r.keys(j, P, {"depth", "impact", "impact_sweep"});
    if (j.contains("depth")) cfg.grexit.depth = r.number(j["depth"], Reader::with(P, "depth"));
    if (j.contains("impact")) cfg.grexit.impact = r.number(j["impact"], Reader::with(P, "impact"));
    if (j.contains("impact_sweep")) cfg.grexit.impact_sweep = r.vector(j["impact_sweep"], Reader::with(P, "impact_sweep"));
    for (double b : cfg.grexit.impact_sweep)
      if (!(b >= 0.0)) r.fail(Reader::with(P, "impact_sweep"), "impacts must be nonnegative");
  }

  if (root.contains("output")) {
    const json& j = root["output"];
    const std::vector<std::string> P{"output"};
    r.keys(j, P, {"directory", "prefix", "traces"});
    if (j.contains("directory")) cfg.output.directory = r.string(j["directory"], Reader::with(P, "directory"));
    if (j.contains("prefix")) cfg.output.prefix = r.string(j["prefix"], Reader::with(P, "prefix"));
    if (j.contains("traces")) cfg.output.traces = r.boolean(j["traces"], Reader::with(P, "traces"));
  }
  return cfg;
}

inline ScenarioConfig load_config(const std::string& path) {
  const std::filesystem::path p(path);
  return parse_config(io::read_file(path), path, p.parent_path());
}

// ---------------------------------------------------------------------------
// Building the model.

struct Scenario {
  Network network;
  InverseDemand demand;
  RuleBook rules;
  std::vector<std::string> names;
};

inline InverseDemand build_demand(const DemandSpec& d) {
  if (d.family == "constant") return InverseDemand::constant(d.price);
  if (d.family == "capped_linear") return InverseDemand::capped_linear(d.base, d.slope, d.lower, d.upper);
  if (d.family == "arctan_symmetric") return InverseDemand::arctan_symmetric(d.depth, d.impact);
  if (d.family == "ratio_form") return InverseDemand::ratio_form(exponential_curve(d.rate, d.g_lower, d.g_upper), d.assets);
  throw std::invalid_argument("unknown inverse demand family '" + d.family + "'");
}

namespace detail {
inline std::string resolve(const ScenarioConfig& cfg, const std::string& path) {
  const std::filesystem::path p(path);
  return (p.is_absolute() || cfg.base_dir.empty() ? p : cfg.base_dir / p).string();
}
}  // namespace detail

inline Network build_network(const ScenarioConfig& cfg, std::vector<std::string>* names = nullptr) {
  const auto& ns = cfg.network;
  Network net;
  if (ns.source == "inline") {
    net = io::network_from_json(ns.inline_doc, "$.network");
  } else if (ns.source == "file") {
    net = io::load_network(detail::resolve(cfg, ns.path));
  } else if (ns.source == "random") {
    RandomNetworkSpec spec = ns.random;
    spec.seed = cfg.seed;
    net = random_network(spec);
  } else {
    const auto agg = io::load_aggregates(detail::resolve(cfg, ns.aggregates));
    const Matrix L = io::load_square_csv(detail::resolve(cfg, ns.liabilities));
    if (names) *names = agg.names;
    net = calibrate_from_aggregates(agg.firms, L);
    if (ns.split) net = split_two_currency(net, ns.exposures, {ns.home_set.begin(), ns.home_set.end()});
  }
  if (names && names->empty())
    for (std::size_t i = 0; i < net.firms(); ++i) names->push_back("firm" + std::to_string(i));
  return net;
}

/// Payment and behavior rules for every firm; value_max rules without an
/// explicit reference use the unshocked price F(0).
inline RuleBook build_rules(const ScenarioConfig& cfg, std::size_t firms, const InverseDemand& F) {
  RuleBook book = RuleBook::uniform(firms, cfg.payment, cfg.behavior);
  for (const auto& [i, p] : cfg.payment_overrides) {
    if (i >= firms) throw std::invalid_argument("payment override for firm " + std::to_string(i) + " out of range");
    book.payment[i] = p;
  }
  for (const auto& [i, b] : cfg.behavior_overrides) {
    if (i >= firms) throw std::invalid_argument("utility override for firm " + std::to_string(i) + " out of range");
    book.behavior[i] = b;
  }
  for (auto& b : book.behavior)
    if (b.utility == Utility::ValueMax && b.reference.empty()) b.reference = F.unshocked();
  return book;
}

inline Scenario build_scenario(const ScenarioConfig& cfg) {
  Scenario s;
  s.network = build_network(cfg, &s.names);
  s.demand = build_demand(cfg.demand);
  if (s.demand.assets() != s.network.assets())
    throw std::invalid_argument("inverse demand has " + std::to_string(s.demand.assets()) +
                                " assets but the network has " + std::to_string(s.network.assets()));
  s.rules = build_rules(cfg, s.network.firms(), s.demand);
  s.rules.validate(s.network);
  return s;
}

// ---------------------------------------------------------------------------
// Sweeps.

struct SweepPoint {
  Vector q0;
  Vector gamma0;
  Vector attained;
  bool converged = false;
  double residual = 0.0;
  std::size_t steps = 0;
  std::vector<std::size_t> defaults;
  bool scanned = false;
  std::vector<EquilibriumPoint> equilibria;
  std::optional<TatonnementTrace> trace;
  std::string error;

  bool ok() const { return error.empty() && converged; }
};

struct ImpactRow {
  double impact = 0.0;
  Vector attained;
  bool converged = false;
  std::vector<std::size_t> defaults;
  std::string error;
};

struct SweepResult {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<SweepPoint> points;
  std::vector<ImpactRow> impact;

  std::size_t failures() const {
    std::size_t f = 0;
    for (const auto& p : points) f += !p.ok();
    for (const auto& r : impact) f += !(r.error.empty() && r.converged);
    return f;
  }
};

namespace detail {

/// Runs job(i) for i in [0, count) on up to `threads` workers.  Jobs write
/// only to their own slot, so results are in index order regardless of
/// scheduling.
template <class Job>
void parallel_for(std::size_t count, std::size_t threads, Job job) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) job(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// The shock points of the config as (q0, gamma0) pairs.  Without a sweep
/// the single point gamma0 = 0 is used.
inline std::vector<std::pair<Vector, Vector>> sweep_points(const ScenarioConfig& cfg, const InverseDemand& F) {
  std::vector<std::pair<Vector, Vector>> out;
  const std::size_t m = F.assets();
  if (cfg.sweep_kind == SweepKind::None) {
    const Vector g(m, 0.0);
    out.emplace_back(F(g), g);
    return out;
  }
  for (const auto& raw : cfg.sweep) {
    if (cfg.sweep_kind == SweepKind::Shock) {
      if (raw.size() != m) throw std::invalid_argument("gamma0 sweep entry has wrong dimension");
      out.emplace_back(F(raw), raw);
      continue;
    }
    Vector q0 = raw;
    if (cfg.sweep_kind == SweepKind::PriceOfAsset2) {
      if (m < 2) throw std::invalid_argument("q0_2 sweeps need at least two assets");
      q0 = F.unshocked();
      q0[1] = raw[0];
    }
    if (q0.size() != m) throw std::invalid_argument("q0 sweep entry has wrong dimension");
    out.emplace_back(q0, F.shock_for_price(q0));
  }
  return out;
}

inline SweepPoint run_point(const ClearingProblem& pb, const InverseDemand& F, const Vector& q0, const Vector& gamma0,
                            const SolverSpec& solver, bool scan, bool keep_trace) {
  SweepPoint pt;
  pt.q0 = q0;
  pt.gamma0 = gamma0;
  try {
    PriceOptions opt = solver.price;
    if (!keep_trace) opt.trace_stride = std::numeric_limits<std::size_t>::max();
    TatonnementTrace tr = tatonnement(pb, F, gamma0, opt);
    pt.attained = tr.terminal;
    pt.converged = tr.converged;
    pt.residual = tr.residual;
    pt.steps = tr.steps;
    pt.defaults = tr.clearing.defaults;
    if (scan) {
      pt.equilibria = equilibrium_set_scan(pb, F, gamma0, solver.scan_options);
      pt.scanned = true;
    }
    if (keep_trace) pt.trace = std::move(tr);
  } catch (const std::exception& e) {
    pt.error = e.what();
  }
  return pt;
}

/// Attained equilibrium (and optionally the equilibrium set) at every sweep
/// point.  Solver failures are recorded per point; the run continues.
inline SweepResult run_scenario(const ScenarioConfig& cfg, const Scenario& sc) {
  const ClearingProblem pb(sc.network, sc.rules);
  const auto points = sweep_points(cfg, sc.demand);
  const bool scan = cfg.solver.scan && sc.network.assets() == 2;
  SweepResult res;
  res.seed = cfg.seed;
  res.config_hash = cfg.hash();
  res.points.resize(points.size());
  detail::parallel_for(points.size(), cfg.solver.threads, [&](std::size_t i) {
    res.points[i] = run_point(pb, sc.demand, points[i].first, points[i].second, cfg.solver, scan, cfg.output.traces);
  });
  return res;
}

inline SweepResult run_scenario(const ScenarioConfig& cfg) { return run_scenario(cfg, build_scenario(cfg)); }

// ---------------------------------------------------------------------------
// Two-currency exit pipeline.

struct GrexitInputs {
  std::vector<FirmAggregates> firms;
  std::vector<std::string> names;
  Matrix interbank;
  Vector exposures;
  std::set<std::size_t> home;
  double depth = 2.0 / 3.0;
  double impact = 1e-4;
  std::vector<double> impact_sweep;
  PriceOptions options;
  std::size_t threads = 0;
};

struct GrexitReport {
  Network single_currency;
  Network two_currency;
  RuleBook rules;
  std::vector<std::string> names;
  double exchange_rate = 1.0;  // attained q*_2
  bool converged = false;
  double residual = 0.0;
  std::vector<std::size_t> defaults;
  std::vector<std::size_t> baseline_defaults;  // single-currency clearing at unit price
  std::vector<ImpactRow> impact;
};

/// Home firms pay the home currency (asset 1) first, everyone else the common
/// currency (asset 0); all firms trade minimally.
inline RuleBook grexit_rules(std::size_t firms, const std::set<std::size_t>& home, double delta_scale = 1e-3) {
  RuleBook book;
  for (std::size_t i = 0; i < firms; ++i) {
    const std::vector<std::size_t> order = home.contains(i) ? std::vector<std::size_t>{1, 0} : std::vector<std::size_t>{0, 1};
    book.payment.push_back(PaymentRule::priority(2, order, delta_scale));
    book.behavior.push_back(BehaviorRule::min_trading());
  }
  return book;
}

inline ImpactRow grexit_at(const ClearingProblem& pb, double depth, double impact, const PriceOptions& opt) {
  ImpactRow row;
  row.impact = impact;
  try {
    const auto F = InverseDemand::arctan_symmetric(depth, impact);
    PriceOptions local = opt;
    local.trace_stride = std::numeric_limits<std::size_t>::max();
    const Vector gamma0(2, 0.0);
    const auto tr = tatonnement(pb, F, gamma0, local);
    row.attained = tr.terminal;
    row.converged = tr.converged;
    row.defaults = tr.clearing.defaults;
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

inline GrexitReport run_grexit(const GrexitInputs& in) {
  GrexitReport rep;
  rep.names = in.names;
  rep.single_currency = calibrate_from_aggregates(in.firms, in.interbank);
  rep.two_currency = split_two_currency(rep.single_currency, in.exposures, in.home);
  const std::size_t n = rep.two_currency.firms();
  if (rep.names.empty())
    for (std::size_t i = 0; i < n; ++i) rep.names.push_back("firm" + std::to_string(i));

  {
    const ClearingProblem base(rep.single_currency,
                               RuleBook::uniform(n, PaymentRule::proportional(), BehaviorRule::min_trading()));
    const Vector unit{1.0};
    rep.baseline_defaults = clearing_holdings(base, unit, Selector::Greatest, in.options.clearing).defaults;
  }

  rep.rules = grexit_rules(n, in.home);
  const ClearingProblem pb(rep.two_currency, rep.rules);
  const ImpactRow main = grexit_at(pb, in.depth, in.impact, in.options);
  if (!main.error.empty()) throw std::runtime_error("exit scenario failed: " + main.error);
  rep.exchange_rate = main.attained[1];
  rep.converged = main.converged;
  rep.defaults = main.defaults;
  {
    const auto F = InverseDemand::arctan_symmetric(in.depth, in.impact);
    const Vector gamma0(2, 0.0);
    rep.residual = sup_norm_diff(evaluate_price_map(pb, F, gamma0, main.attained, in.options.clearing).target,
                                 main.attained);
  }

  rep.impact.resize(in.impact_sweep.size());
  detail::parallel_for(in.impact_sweep.size(), in.threads, [&](std::size_t i) {
    rep.impact[i] = grexit_at(pb, in.depth, in.impact_sweep[i], in.options);
  });
  return rep;
}

/// Grexit inputs from a calibration-source config with a currency split.
inline GrexitInputs grexit_inputs(const ScenarioConfig& cfg) {
  const auto& ns = cfg.network;
  if (ns.source != "calibration" || !ns.split)
    throw std::invalid_argument("grexit needs a calibration network source with exposures and home_set");
  GrexitInputs in;
  const auto agg = io::load_aggregates(detail::resolve(cfg, ns.aggregates));
  in.firms = agg.firms;
  in.names = agg.names;
  in.interbank = io::load_square_csv(detail::resolve(cfg, ns.liabilities));
  in.exposures = ns.exposures;
  in.home = {ns.home_set.begin(), ns.home_set.end()};
  in.depth = cfg.grexit.depth;
  in.impact = cfg.grexit.impact;
  in.impact_sweep = cfg.grexit.impact_sweep;
  in.options = cfg.solver.price;
  in.threads = cfg.solver.threads;
  return in;
}

inline SweepResult to_sweep_result(const ScenarioConfig& cfg, const GrexitReport& rep) {
  SweepResult res;
  res.seed = cfg.seed;
  res.config_hash = cfg.hash();
  SweepPoint pt;
  pt.q0 = {1.0, 1.0};
  pt.gamma0 = {0.0, 0.0};
  pt.attained = {1.0, rep.exchange_rate};
  pt.converged = rep.converged;
  pt.residual = rep.residual;
  pt.defaults = rep.defaults;
  res.points.push_back(std::move(pt));
  res.impact = rep.impact;
  return res;
}

// ---------------------------------------------------------------------------
// Output.

namespace detail {

inline std::string join_ids(const std::vector<std::size_t>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? ";" : "") + std::to_string(ids[i]);
  return s;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c == '\n' ? ' ' : c);
  return out + "\"";
}

inline void csv_preamble(std::ostream& out, const SweepResult& res) {
  out << "# schema_version: " << io::kSchemaVersion << "\n";
  out << "# seed: " << res.seed << "\n";
  out << "# config_hash: " << res.config_hash << "\n";
}

}  // namespace detail

/// One row per sweep point: shock, attained price, defaults and status.
inline void write_sweep_csv(std::ostream& out, const SweepResult& res) {
  detail::csv_preamble(out, res);
  const std::size_t m = res.points.empty() ? 0 : res.points.front().q0.size();
  out << "point";
  for (std::size_t k = 0; k < m; ++k) out << ",q0_" << k + 1;
  for (std::size_t k = 0; k < m; ++k) out << ",gamma0_" << k + 1;
  for (std::size_t k = 0; k < m; ++k) out << ",q_star_" << k + 1;
  out << ",converged,residual,steps,n_defaults,defaults,n_equilibria,error\n";
  for (std::size_t i = 0; i < res.points.size(); ++i) {
    const auto& p = res.points[i];
    out << i;
    for (double v : p.q0) out << "," << io::fmt(v);
    for (double v : p.gamma0) out << "," << io::fmt(v);
    for (std::size_t k = 0; k < m; ++k) out << "," << (p.attained.empty() ? "" : io::fmt(p.attained[k]));
    out << "," << (p.converged ? 1 : 0) << "," << io::fmt(p.residual) << "," << p.steps << "," << p.defaults.size()
        << "," << detail::join_ids(p.defaults) << "," << (p.scanned ? std::to_string(p.equilibria.size()) : "")
        << "," << detail::csv_escape(p.error) << "\n";
  }
}

inline json sweep_summary(const ScenarioConfig& cfg, const SweepResult& res) {
  json pts = json::array();
  for (const auto& p : res.points) {
    json e = {{"q0", p.q0},           {"gamma0", p.gamma0}, {"attained", p.attained},
              {"converged", p.converged}, {"residual", p.residual}, {"steps", p.steps},
              {"defaults", p.defaults}};
    if (p.scanned) {
      json eq = json::array();
      for (const auto& r : p.equilibria)
        eq.push_back({{"prices", r.prices}, {"residual", r.residual}, {"continuous", r.continuous}});
      e["equilibria"] = eq;
    }
    if (!p.error.empty()) e["error"] = p.error;
    pts.push_back(std::move(e));
  }
  json imp = json::array();
  for (const auto& r : res.impact) {
    json e = {{"b", r.impact}, {"attained", r.attained}, {"converged", r.converged}, {"defaults", r.defaults}};
    if (!r.error.empty()) e["error"] = r.error;
    imp.push_back(std::move(e));
  }
  json out = {{"schema_version", io::kSchemaVersion},
              {"seed", res.seed},
              {"config_hash", res.config_hash},
              {"effective_config", cfg.effective()},
              {"failures", res.failures()},
              {"points", pts}};
  if (!res.impact.empty()) out["impact_sweep"] = imp;
  return out;
}

enum class PlotKind { PriceCurve, EquilibriumSet, Trace, ImpactSweep };

inline PlotKind parse_plot_kind(std::string_view kind) {
  if (kind == "price_curve") return PlotKind::PriceCurve;
  if (kind == "equilibrium_set") return PlotKind::EquilibriumSet;
  if (kind == "trace") return PlotKind::Trace;
  if (kind == "impact_sweep") return PlotKind::ImpactSweep;
  throw std::invalid_argument("unknown plot kind '" + std::string(kind) + "'");
}

/// Tidy CSV for plotting.  Columns by kind:
///   price_curve:     q0_2, q_star_2, branch_count
///   equilibrium_set: q0_2, q_2, residual, continuous, attained
///   trace:           point, t, q_1 .. q_m
///   impact_sweep:    b, q_star_2, n_defaults
/// branch_count is empty for points that were not scanned; `attained` marks
/// the equilibrium the price dynamic selected.
inline void emit_plot_data(std::ostream& out, const SweepResult& res, PlotKind kind) {
  out << "# schema_version: " << io::kSchemaVersion << "\n";
  auto q2 = [](const Vector& v) { return v.size() > 1 ? io::fmt(v[1]) : std::string(); };
  switch (kind) {
    case PlotKind::PriceCurve:
      out << "q0_2,q_star_2,branch_count\n";
      for (const auto& p : res.points)
        out << q2(p.q0) << "," << q2(p.attained) << "," << (p.scanned ? std::to_string(p.equilibria.size()) : "")
            << "\n";
      break;
    case PlotKind::EquilibriumSet:
      out << "q0_2,q_2,residual,continuous,attained\n";
      for (const auto& p : res.points)
        for (const auto& r : p.equilibria) {
          const bool hit = p.attained.size() > 1 && std::abs(r.prices[1] - p.attained[1]) <= 1e-6;
          out << q2(p.q0) << "," << io::fmt(r.prices[1]) << "," << io::fmt(r.residual) << ","
              << (r.continuous ? 1 : 0) << "," << (hit ? 1 : 0) << "\n";
        }
      break;
    case PlotKind::Trace: {
      std::size_t m = 0;
      for (const auto& p : res.points)
        if (p.trace && !p.trace->prices.empty()) m = p.trace->prices.front().size();
      out << "point,t";
      for (std::size_t k = 0; k < m; ++k) out << ",q_" << k + 1;
      out << "\n";
      for (std::size_t i = 0; i < res.points.size(); ++i) {
        const auto& tr = res.points[i].trace;
        if (!tr) continue;
        for (std::size_t s = 0; s < tr->prices.size(); ++s) {
          out << i << "," << io::fmt(tr->times[s]);
          for (double v : tr->prices[s]) out << "," << io::fmt(v);
          out << "\n";
        }
      }
      break;
    }
    case PlotKind::ImpactSweep:
      out << "b,q_star_2,n_defaults\n";
      for (const auto& r : res.impact)
        out << io::fmt(r.impact) << "," << q2(r.attained) << "," << (r.error.empty() ? std::to_string(r.defaults.size()) : "")
            << "\n";
      break;
  }
}

inline void emit_plot_data(std::ostream& out, const SweepResult& res, std::string_view kind) {
  emit_plot_data(out, res, parse_plot_kind(kind));
}

}  // namespace contagion::scenarios
