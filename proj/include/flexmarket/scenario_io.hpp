#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flexmarket/scenario.hpp"

// Scenario persistence: a flat key = value config for the market parameters,
// plus two CSV files for the load/generation profiles and the request
// signal. Numeric fields round-trip exactly (shortest form); run outputs are
// serialized elsewhere with 12 significant digits.

namespace flexmarket {

namespace ioutil {

inline std::string fmt12(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline std::string fmt_exact(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& s, const std::string& path, int line, int col) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (...) {
    throw ParseError(path, line, col, "expected a number, got '" + s + "'");
  }
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace ioutil

namespace detail {

struct ConfigEntry {
  std::string value;
  int line;
};

inline std::map<std::string, ConfigEntry> read_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::map<std::string, ConfigEntry> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (ioutil::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(path, lineno, 1, "expected 'key = value'");
    const std::string key = ioutil::trim(line.substr(0, eq));
    const std::string val = ioutil::trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(path, lineno, 1, "empty key");
    if (kv.count(key)) throw ParseError(path, lineno, 1, "duplicate key '" + key + "'");
    kv[key] = {val, lineno};
  }
  return kv;
}

inline VectorXd parse_vector(const std::string& raw, int T, const std::string& path, int line) {
  std::vector<std::string> parts = ioutil::split(raw, ',');
  std::vector<double> vals;
  for (size_t k = 0; k < parts.size(); ++k) {
    const std::string t = ioutil::trim(parts[k]);
    if (t.empty()) throw ParseError(path, line, static_cast<int>(k + 1), "empty vector entry");
    vals.push_back(ioutil::parse_double(t, path, line, static_cast<int>(k + 1)));
  }
  if (vals.size() == 1) return VectorXd::Constant(T, vals[0]);
  if (static_cast<int>(vals.size()) != T)
    throw ParseError(path, line, 1,
                     "expected 1 or " + std::to_string(T) + " values, got " +
                         std::to_string(vals.size()));
  return Eigen::Map<VectorXd>(vals.data(), T);
}

struct CsvReader {
  std::string path;
  std::ifstream is;
  int lineno = 0;

  explicit CsvReader(const std::string& p) : path(p), is(p) {
    if (!is) throw IoError("cannot open " + p);
  }
  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (ioutil::trim(line).empty()) continue;
      fields = ioutil::split(line, ',');
      for (auto& f : fields) f = ioutil::trim(f);
      return true;
    }
    return false;
  }
  [[noreturn]] void fail(int col, const std::string& msg) const {
    throw ParseError(path, lineno, col, msg);
  }
};

}  // namespace detail

/// Parses and validates a scenario from its three files. Hard invariant
/// violations raise ValidationError listing every offence; warnings are
/// reported through `report` when given.
inline Scenario load_scenario(const std::string& scenario_path, const std::string& profiles_path,
                              const std::string& request_path,
                              ValidationReport* report = nullptr) {
  auto kv = detail::read_config(scenario_path);
  auto need = [&](const std::string& key) -> detail::ConfigEntry {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError(scenario_path + ": missing required key '" + key + "'");
    return it->second;
  };
  auto need_scalar = [&](const std::string& key) {
    const auto e = need(key);
    return ioutil::parse_double(e.value, scenario_path, e.line, 1);
  };

  {
    const auto e = need("format_version");
    if (ioutil::trim(e.value) != "1")
      throw ParseError(scenario_path, e.line, 1, "unsupported format_version '" + e.value + "'");
  }

  Scenario sc;
  sc.T = static_cast<int>(need_scalar("T"));
  sc.dt = need_scalar("dt");
  sc.N = static_cast<int>(need_scalar("N"));
  if (sc.T < 1 || sc.N < 1) throw IoError(scenario_path + ": T and N must be >= 1");
  sc.p_bar = need_scalar("p_bar");
  sc.p_tilde = need_scalar("p_tilde");
  sc.beta = need_scalar("beta");
  sc.mu = need_scalar("mu");
  sc.delta = need_scalar("delta");
  for (auto* field : {"c1", "c0_lo", "c0_hi", "g"}) {
    const auto e = need(field);
    const VectorXd v = detail::parse_vector(e.value, sc.T, scenario_path, e.line);
    if (std::string(field) == "c1") sc.c1 = v;
    else if (std::string(field) == "c0_lo") sc.c0_lo = v;
    else if (std::string(field) == "c0_hi") sc.c0_hi = v;
    else sc.g = v;
  }
  sc.prosumers.resize(sc.N);
  for (int i = 0; i < sc.N; ++i) {
    const std::string prefix = "prosumer." + std::to_string(i + 1) + ".";
    ProsumerSpec& pr = sc.prosumers[i];
    pr.e_max = need_scalar(prefix + "e_max");
    pr.p_max = need_scalar(prefix + "p_max");
    pr.eta_c = need_scalar(prefix + "eta_c");
    pr.eta_dc = need_scalar(prefix + "eta_dc");
    pr.e0 = need_scalar(prefix + "e0");
    pr.d = VectorXd::Constant(sc.T, std::numeric_limits<double>::quiet_NaN());
    pr.s = VectorXd::Constant(sc.T, std::numeric_limits<double>::quiet_NaN());
  }
  // reject unknown keys so typos do not silently fall back to defaults
  {
    std::set<std::string> known = {"format_version", "T", "dt", "N", "p_bar", "p_tilde",
                                   "beta", "mu", "delta", "c1", "c0_lo", "c0_hi", "g"};
    for (int i = 1; i <= sc.N; ++i)
      for (auto* f : {"e_max", "p_max", "eta_c", "eta_dc", "e0"})
        known.insert("prosumer." + std::to_string(i) + "." + f);
    for (const auto& [key, entry] : kv)
      if (!known.count(key))
        throw ParseError(scenario_path, entry.line, 1, "unknown key '" + key + "'");
  }

  // profiles: tau,prosumer_id,demand_kw,solar_kw
  {
    detail::CsvReader csv(profiles_path);
    std::vector<std::string> f;
    if (!csv.next(f) || f.size() != 4 || f[0] != "tau" || f[1] != "prosumer_id" ||
        f[2] != "demand_kw" || f[3] != "solar_kw")
      csv.fail(1, "expected header 'tau,prosumer_id,demand_kw,solar_kw'");
    std::set<std::pair<int, int>> seen;
    while (csv.next(f)) {
      if (f.size() != 4) csv.fail(1, "expected 4 fields");
      const int tau = static_cast<int>(ioutil::parse_double(f[0], profiles_path, csv.lineno, 1));
      const int id = static_cast<int>(ioutil::parse_double(f[1], profiles_path, csv.lineno, 2));
      if (tau < 1 || tau > sc.T) csv.fail(1, "tau out of range 1.." + std::to_string(sc.T));
      if (id < 1 || id > sc.N) csv.fail(2, "prosumer_id out of range 1.." + std::to_string(sc.N));
      if (!seen.insert({tau, id}).second) csv.fail(1, "duplicate (tau, prosumer_id) row");
      sc.prosumers[id - 1].d(tau - 1) = ioutil::parse_double(f[2], profiles_path, csv.lineno, 3);
      sc.prosumers[id - 1].s(tau - 1) = ioutil::parse_double(f[3], profiles_path, csv.lineno, 4);
    }
    if (static_cast<int>(seen.size()) != sc.T * sc.N)
      throw IoError(profiles_path + ": expected " + std::to_string(sc.T * sc.N) +
                    " profile rows, got " + std::to_string(seen.size()));
  }
  // request: tau,r_kw
  {
    detail::CsvReader csv(request_path);
    std::vector<std::string> f;
    if (!csv.next(f) || f.size() != 2 || f[0] != "tau" || f[1] != "r_kw")
      csv.fail(1, "expected header 'tau,r_kw'");
    sc.r = VectorXd::Constant(sc.T, std::numeric_limits<double>::quiet_NaN());
    std::set<int> seen;
    while (csv.next(f)) {
      if (f.size() != 2) csv.fail(1, "expected 2 fields");
      const int tau = static_cast<int>(ioutil::parse_double(f[0], request_path, csv.lineno, 1));
      if (tau < 1 || tau > sc.T) csv.fail(1, "tau out of range 1.." + std::to_string(sc.T));
      if (!seen.insert(tau).second) csv.fail(1, "duplicate tau row");
      sc.r(tau - 1) = ioutil::parse_double(f[1], request_path, csv.lineno, 2);
    }
    if (static_cast<int>(seen.size()) != sc.T)
      throw IoError(request_path + ": expected " + std::to_string(sc.T) + " request rows, got " +
                    std::to_string(seen.size()));
  }

  ValidationReport rep = validate(sc);
  if (report) *report = rep;
  if (!rep.ok()) throw ValidationError(rep.errors);
  return sc;
}

/// Writes the three scenario files; loading them back reproduces the exact
/// in-memory values.
inline void write_scenario(const Scenario& sc, const std::string& scenario_path,
                           const std::string& profiles_path, const std::string& request_path) {
  namespace io = ioutil;
  auto vec = [&](const VectorXd& v) {
    std::string s;
    for (int i = 0; i < v.size(); ++i) {
      if (i) s += ",";
      s += io::fmt_exact(v(i));
    }
    return s;
  };
  {
    std::ofstream os(scenario_path);
    if (!os) throw IoError("cannot open " + scenario_path + " for writing");
    os << "# flexmarket scenario\n";
    os << "format_version = 1\n";
    os << "T = " << sc.T << "\n";
    os << "dt = " << io::fmt_exact(sc.dt) << "\n";
    os << "N = " << sc.N << "\n";
    os << "p_bar = " << io::fmt_exact(sc.p_bar) << "\n";
    os << "p_tilde = " << io::fmt_exact(sc.p_tilde) << "\n";
    os << "beta = " << io::fmt_exact(sc.beta) << "\n";
    os << "mu = " << io::fmt_exact(sc.mu) << "\n";
    os << "delta = " << io::fmt_exact(sc.delta) << "\n";
    os << "c1 = " << vec(sc.c1) << "\n";
    os << "c0_lo = " << vec(sc.c0_lo) << "\n";
    os << "c0_hi = " << vec(sc.c0_hi) << "\n";
    os << "g = " << vec(sc.g) << "\n";
    for (int i = 0; i < sc.N; ++i) {
      const std::string p = "prosumer." + std::to_string(i + 1) + ".";
      const ProsumerSpec& pr = sc.prosumers[i];
      os << p << "e_max = " << io::fmt_exact(pr.e_max) << "\n";
      os << p << "p_max = " << io::fmt_exact(pr.p_max) << "\n";
      os << p << "eta_c = " << io::fmt_exact(pr.eta_c) << "\n";
      os << p << "eta_dc = " << io::fmt_exact(pr.eta_dc) << "\n";
      os << p << "e0 = " << io::fmt_exact(pr.e0) << "\n";
    }
  }
  {
    std::ofstream os(profiles_path);
    if (!os) throw IoError("cannot open " + profiles_path + " for writing");
    os << "tau,prosumer_id,demand_kw,solar_kw\n";
    for (int tau = 1; tau <= sc.T; ++tau)
      for (int i = 1; i <= sc.N; ++i)
        os << tau << "," << i << "," << io::fmt_exact(sc.prosumers[i - 1].d(tau - 1)) << ","
           << io::fmt_exact(sc.prosumers[i - 1].s(tau - 1)) << "\n";
  }
  {
    std::ofstream os(request_path);
    if (!os) throw IoError("cannot open " + request_path + " for writing");
    os << "tau,r_kw\n";
    for (int tau = 1; tau <= sc.T; ++tau)
      os << tau << "," << io::fmt_exact(sc.r(tau - 1)) << "\n";
  }
}

}  // namespace flexmarket
