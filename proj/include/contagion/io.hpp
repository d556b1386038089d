#pragma once

// File formats: network JSON, aggregate/liabilities CSV, result records and
// price-trajectory CSV.  All documents carry schema_version = 1.

#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "contagion/clearing.hpp"

namespace contagion::io {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Raised for malformed input documents; `where` is a JSON path or file:line.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(where) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

namespace detail {

inline std::string line_of(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return std::to_string(line) + ":" + std::to_string(col);
}

inline double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw FormatError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw FormatError(path, "expected a finite number");
  return v;
}

inline std::size_t count(const json& j, const std::string& path) {
  if (!j.is_number_integer() || j.get<long long>() < 0) throw FormatError(path, "expected a nonnegative integer");
  return j.get<std::size_t>();
}

inline const json& array_of(const json& j, std::size_t size, const std::string& path) {
  if (!j.is_array()) throw FormatError(path, "expected an array");
  if (j.size() != size)
    throw FormatError(path, "expected " + std::to_string(size) + " entries, found " + std::to_string(j.size()));
  return j;
}

inline void expect_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& path) {
  if (!j.is_object()) throw FormatError(path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw FormatError(path + "." + it.key(), "unknown field");
  }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_decimal(const std::string& cell, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    throw FormatError(where, "'" + cell + "' is not a number");
  }
  if (used != cell.size() || !std::isfinite(v)) throw FormatError(where, "'" + cell + "' is not a finite number");
  return v;
}

/// Non-empty lines that are not '#' comments, with their 1-based line numbers.
inline std::vector<std::pair<std::size_t, std::string>> data_lines(std::istream& in) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    out.emplace_back(no, line);
  }
  return out;
}

}  // namespace detail

/// Parses JSON text, reporting syntax errors with line and column.
inline json parse_json(const std::string& text, const std::string& source = "<input>") {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(source + ":" + detail::line_of(text, e.byte == 0 ? 0 : e.byte - 1), "invalid JSON");
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path, "cannot open file");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------------------
// Network JSON: {schema_version, n, m, L[n][n+1][m], x[n][m]}; L column 0 is
// the societal node.

inline Network network_from_json(const json& j, const std::string& path = "$") {
  detail::expect_keys(j, {"schema_version", "n", "m", "L", "x", "source"}, path);
  if (j.contains("schema_version") && detail::count(j["schema_version"], path + ".schema_version") != kSchemaVersion)
    throw FormatError(path + ".schema_version", "unsupported schema version");
  for (const char* key : {"n", "m", "L", "x"})
    if (!j.contains(key)) throw FormatError(path, std::string("missing field '") + key + "'");
  const std::size_t n = detail::count(j["n"], path + ".n");
  const std::size_t m = detail::count(j["m"], path + ".m");
  if (m == 0) throw FormatError(path + ".m", "need at least one asset");

  std::vector<double> L(n * (n + 1) * m);
  const json& Lj = detail::array_of(j["L"], n, path + ".L");
  for (std::size_t i = 0; i < n; ++i) {
    const std::string pi = path + ".L[" + std::to_string(i) + "]";
    const json& row = detail::array_of(Lj[i], n + 1, pi);
    for (std::size_t node = 0; node <= n; ++node) {
      const std::string pj = pi + "[" + std::to_string(node) + "]";
      const json& cell = detail::array_of(row[node], m, pj);
      for (std::size_t k = 0; k < m; ++k) {
        const double v = detail::number(cell[k], pj + "[" + std::to_string(k) + "]");
        if (v < 0.0) throw FormatError(pj + "[" + std::to_string(k) + "]", "liabilities must be nonnegative");
        if (node == Network::node_of(i) && v != 0.0)
          throw FormatError(pj + "[" + std::to_string(k) + "]", "a firm cannot owe itself");
        L[(i * (n + 1) + node) * m + k] = v;
      }
    }
  }
  Matrix x(n, m);
  const json& xj = detail::array_of(j["x"], n, path + ".x");
  for (std::size_t i = 0; i < n; ++i) {
    const std::string pi = path + ".x[" + std::to_string(i) + "]";
    const json& row = detail::array_of(xj[i], m, pi);
    for (std::size_t k = 0; k < m; ++k) {
      x(i, k) = detail::number(row[k], pi + "[" + std::to_string(k) + "]");
      if (x(i, k) < 0.0) throw FormatError(pi + "[" + std::to_string(k) + "]", "endowments must be nonnegative");
    }
  }
  return Network(n, m, std::move(L), std::move(x));
}

inline json network_to_json(const Network& net) {
  const std::size_t n = net.firms(), m = net.assets();
  json L = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    json row = json::array();
    for (std::size_t j = 0; j <= n; ++j) {
      json cell = json::array();
      for (std::size_t k = 0; k < m; ++k) cell.push_back(net.liability(i, j, k));
      row.push_back(std::move(cell));
    }
    L.push_back(std::move(row));
  }
  json x = json::array();
  for (std::size_t i = 0; i < n; ++i) x.push_back(net.endowments().row_vector(i));
  return {{"schema_version", kSchemaVersion}, {"n", n}, {"m", m}, {"L", std::move(L)}, {"x", std::move(x)}};
}

inline Network load_network(const std::string& path) {
  return network_from_json(parse_json(read_file(path), path), path);
}

// ---------------------------------------------------------------------------
// Calibration CSVs.  Aggregates: header with total_assets, capital,
// interbank_liabilities (any order, optional extra columns such as name).
// Liabilities: n rows of n numbers, optional header row of names and
// optional leading name column.

struct AggregateTable {
  std::vector<std::string> names;
  std::vector<FirmAggregates> firms;
};

inline AggregateTable read_aggregates_csv(std::istream& in, const std::string& source = "<aggregates>") {
  auto lines = detail::data_lines(in);
  if (lines.empty()) throw FormatError(source, "empty aggregates file");
  const auto header = detail::split_csv_line(lines.front().second);
  int col_t = -1, col_c = -1, col_l = -1, col_name = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "total_assets") col_t = static_cast<int>(c);
    else if (header[c] == "capital") col_c = static_cast<int>(c);
    else if (header[c] == "interbank_liabilities") col_l = static_cast<int>(c);
    else if (header[c] == "name") col_name = static_cast<int>(c);
  }
  const std::string hdr = source + ":" + std::to_string(lines.front().first);
  if (col_t < 0 || col_c < 0 || col_l < 0)
    throw FormatError(hdr, "header must name total_assets, capital and interbank_liabilities");
  AggregateTable out;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::string where = source + ":" + std::to_string(lines[r].first);
    const auto cells = detail::split_csv_line(lines[r].second);
    if (cells.size() != header.size())
      throw FormatError(where, "expected " + std::to_string(header.size()) + " cells, found " +
                                   std::to_string(cells.size()));
    FirmAggregates f;
    f.total_assets = detail::parse_decimal(cells[col_t], where);
    f.capital = detail::parse_decimal(cells[col_c], where);
    f.interbank_liabilities = detail::parse_decimal(cells[col_l], where);
    out.firms.push_back(f);
    out.names.push_back(col_name >= 0 ? cells[col_name] : "firm" + std::to_string(r - 1));
  }
  return out;
}

inline Matrix read_square_csv(std::istream& in, const std::string& source = "<liabilities>") {
  auto lines = detail::data_lines(in);
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> line_no;
  for (std::size_t r = 0; r < lines.size(); ++r) {
    auto cells = detail::split_csv_line(lines[r].second);
    const std::string where = source + ":" + std::to_string(lines[r].first);
    // Header row of names: first cell non-numeric on the first data line.
    auto numeric = [](const std::string& s) {
      char* end = nullptr;
      std::strtod(s.c_str(), &end);
      return !s.empty() && end == s.c_str() + s.size();
    };
    if (r == 0 && std::none_of(cells.begin() + (cells.size() > 1 ? 1 : 0), cells.end(), numeric)) continue;
    std::size_t first = 0;
    if (!cells.empty() && !numeric(cells[0])) first = 1;
    std::vector<double> row;
    for (std::size_t c = first; c < cells.size(); ++c) row.push_back(detail::parse_decimal(cells[c], where));
    rows.push_back(std::move(row));
    line_no.push_back(lines[r].first);
  }
  const std::size_t n = rows.size();
  Matrix M(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != n)
      throw FormatError(source + ":" + std::to_string(line_no[i]),
                        "liabilities matrix must be square (" + std::to_string(n) + " columns expected)");
    M.set_row(i, rows[i]);
  }
  return M;
}

inline AggregateTable load_aggregates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path, "cannot open file");
  return read_aggregates_csv(in, path);
}

inline Matrix load_square_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path, "cannot open file");
  return read_square_csv(in, path);
}

// ---------------------------------------------------------------------------
// Results.

inline json matrix_to_json(const Matrix& M) {
  json out = json::array();
  for (std::size_t i = 0; i < M.rows(); ++i) out.push_back(M.row_vector(i));
  return out;
}

inline json result_to_json(const ClearingResult& r) {
  return {{"schema_version", kSchemaVersion},
          {"selector", to_string(r.selector)},
          {"prices", r.prices},
          {"holdings", matrix_to_json(r.holdings)},
          {"payments", matrix_to_json(r.payments)},
          {"society_holdings", r.society_holdings},
          {"defaults", r.defaults},
          {"iterations", r.iterations},
          {"residual", r.residual},
          {"converged", r.converged},
          {"unique", r.unique}};
}

inline json diagnostics_to_json(const DiagnosticsReport& d) {
  return {{"equity", d.equity},
          {"defaults", d.defaults},
          {"positive_equity_value", d.positive_equity_value},
          {"society_value", d.society_value},
          {"endowment_value", d.endowment_value},
          {"wealth_gap", d.wealth_gap}};
}

/// 17 significant digits: round-trips every double, so CSV output is bit-stable.
inline std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

/// CSV with columns t, q_1 .. q_m (asset labels 1-based).
inline void write_trace_csv(std::ostream& out, const TatonnementTrace& tr) {
  out << "# schema_version: " << kSchemaVersion << "\n";
  const std::size_t m = tr.prices.empty() ? 0 : tr.prices.front().size();
  out << "t";
  for (std::size_t k = 0; k < m; ++k) out << ",q_" << k + 1;
  out << "\n";
  for (std::size_t s = 0; s < tr.prices.size(); ++s) {
    out << fmt(tr.times[s]);
    for (double v : tr.prices[s]) out << "," << fmt(v);
    out << "\n";
  }
}

}  // namespace contagion::io
