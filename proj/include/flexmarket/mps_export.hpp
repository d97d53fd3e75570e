#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "flexmarket/assemble.hpp"

// Single-level big-M reformulation of the bilevel program and its exchange
// format. Each complementarity pair 0 <= u ⟂ v >= 0 becomes
//   u <= M_dual * z,   v <= M_primal * (1 - z),   z binary,
// over the stationarity equalities, the primal constraints and the leader
// box. The file is MPS-style fixed-field: named sections, objective sense
// MIN, binaries declared with integrality markers plus BV bounds, values
// printed in shortest round-trip form. The quadratic objective follows the
// QUADOBJ convention (contributes 1/2 x'Qx, one entry per symmetric pair).

namespace flexmarket {

struct BigMOptions {
  double M_primal = 1e3;  // bound on constraint slacks
  double M_dual = 1e4;    // bound on multipliers
  VectorXd per_row_primal;  // optional, one per complementarity row
  VectorXd per_row_dual;
};

struct BigMModel {
  std::string name = "FLEXMKT";
  char objsense = 'm';  // 'm' MIN, 'x' MAX

  std::vector<std::string> col_names;
  std::vector<char> col_bound;  // 'd' default [0,inf), 'f' free, 'b' binary, 'r' ranged
  std::vector<double> lb, ub;   // meaningful when col_bound == 'r'

  std::vector<std::string> row_names;  // objective row excluded
  std::vector<char> row_types;         // 'L' or 'E'
  std::vector<double> rhs;

  std::map<std::pair<int, int>, double> entries;  // (row, col) -> coef
  std::map<int, double> obj_linear;               // col -> coef
  std::map<std::pair<int, int>, double> quad;     // (col_i <= col_j) -> QUADOBJ value

  std::unordered_map<std::string, int> col_index, row_index;

  int add_col(const std::string& n, char bound, double l = 0, double u = 0) {
    col_index[n] = static_cast<int>(col_names.size());
    col_names.push_back(n);
    col_bound.push_back(bound);
    lb.push_back(l);
    ub.push_back(u);
    return static_cast<int>(col_names.size()) - 1;
  }
  int add_row(const std::string& n, char type, double r) {
    row_index[n] = static_cast<int>(row_names.size());
    row_names.push_back(n);
    row_types.push_back(type);
    rhs.push_back(r);
    return static_cast<int>(row_names.size()) - 1;
  }
  void set(int row, int col, double v) {
    if (v != 0.0) entries[{row, col}] = v;
  }
  int num_binaries() const {
    int n = 0;
    for (char b : col_bound) n += (b == 'b');
    return n;
  }
};

inline bool model_equal(const BigMModel& a, const BigMModel& b) {
  return a.objsense == b.objsense && a.col_names == b.col_names &&
         a.col_bound == b.col_bound && a.lb == b.lb && a.ub == b.ub &&
         a.row_names == b.row_names && a.row_types == b.row_types && a.rhs == b.rhs &&
         a.entries == b.entries && a.obj_linear == b.obj_linear && a.quad == b.quad;
}

namespace detail {

inline std::string var_col_name(int i, Var b, int tau) {
  static const char* kBlock[] = {"P", "Y", "E", "PC", "PDC", "K", "T"};
  return std::string(kBlock[static_cast<int>(b)]) + std::to_string(i) + "_" + std::to_string(tau);
}

inline std::string fmt_shortest(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace detail

/// Assembles the mixed-integer model of the single-level program. Raw KKT
/// system (no Tikhonov term); one binary per complementarity row.
inline BigMModel build_bigm_model(const AssembledGame& gm, const BigMOptions& opt = {}) {
  const int T = gm.T, N = gm.N;
  const int mA = gm.mA(), mF = gm.mF();
  auto mp = [&](int row) {
    return opt.per_row_primal.size() > 0 ? opt.per_row_primal(row) : opt.M_primal;
  };
  auto md = [&](int row) {
    return opt.per_row_dual.size() > 0 ? opt.per_row_dual(row) : opt.M_dual;
  };
  {
    const int n_comp = gm.num_complementarity_rows();
    if (opt.per_row_primal.size() > 0 && opt.per_row_primal.size() != n_comp)
      throw std::invalid_argument("big-M: per_row_primal size mismatch");
    if (opt.per_row_dual.size() > 0 && opt.per_row_dual.size() != n_comp)
      throw std::invalid_argument("big-M: per_row_dual size mismatch");
    for (int r = 0; r < n_comp; ++r)
      if (!(mp(r) > 0) || !(md(r) > 0))
        throw std::invalid_argument("big-M constants must be positive");
  }

  BigMModel m;
  std::vector<int> c0_col(T), al_col(T);
  for (int tau = 0; tau < T; ++tau)
    c0_col[tau] =
        m.add_col("C0_" + std::to_string(tau), 'r', gm.scen.c0_lo(tau), gm.scen.c0_hi(tau));
  for (int tau = 0; tau < T; ++tau)
    al_col[tau] = m.add_col("AL_" + std::to_string(tau), 'r', 0.0, 1.0);
  // Follower variables are free; their signs are model rows with duals.
  std::vector<int> xcol(gm.nx);
  for (int i = 0; i < N; ++i)
    for (int b = 0; b < kVarBlocks; ++b)
      for (int tau = 0; tau < T; ++tau)
        xcol[var_index(T, i, static_cast<Var>(b), tau)] =
            m.add_col(detail::var_col_name(i, static_cast<Var>(b), tau), 'f');
  std::vector<int> lamA(mA), lamF(mF);
  for (int r = 0; r < mA; ++r) lamA[r] = m.add_col("LC_" + std::to_string(r), 'd');
  for (int r = 0; r < mF; ++r)
    lamF[r] = gm.local_rows[r].equality ? m.add_col("NU_" + std::to_string(r), 'f')
                                        : m.add_col("LF_" + std::to_string(r), 'd');
  // Binaries, contiguous at the end so one marker pair covers them.
  std::vector<int> zA(mA), zF(mF, -1);
  for (int r = 0; r < mA; ++r) zA[r] = m.add_col("ZC_" + std::to_string(r), 'b');
  for (int r = 0; r < mF; ++r)
    if (!gm.local_rows[r].equality) zF[r] = m.add_col("ZF_" + std::to_string(r), 'b');

  // Stationarity: bigQ x + C z0 + A'lam + F'lamF = -q.
  for (int v = 0; v < gm.nx; ++v) {
    const int row = m.add_row("ST_" + std::to_string(v), 'E', -gm.qlin(v));
    for (int u = 0; u < gm.nx; ++u) m.set(row, xcol[u], gm.bigQ(v, u));
    for (int j = 0; j < 2 * T; ++j)
      m.set(row, j < T ? c0_col[j] : al_col[j - T], gm.Cmap(v, j));
    for (int r = 0; r < mA; ++r) m.set(row, lamA[r], gm.Acoup(r, v));
    for (int r = 0; r < mF; ++r) m.set(row, lamF[r], gm.Flocal(r, v));
  }
  // Primal feasibility.
  for (int r = 0; r < mA; ++r) {
    const int row = m.add_row("CP_" + std::to_string(r), 'L', gm.bcoup(r));
    for (int v = 0; v < gm.nx; ++v) m.set(row, xcol[v], gm.Acoup(r, v));
  }
  for (int r = 0; r < mF; ++r) {
    const int row = m.add_row(
        std::string(gm.local_rows[r].equality ? "FE_" : "FP_") + std::to_string(r),
        gm.local_rows[r].equality ? 'E' : 'L', gm.flocal(r));
    for (int v = 0; v < gm.nx; ++v) m.set(row, xcol[v], gm.Flocal(r, v));
  }
  // Complementarity big-M rows, in binary order.
  int comp = 0;
  auto add_comp = [&](const std::string& tag, int lam_col, int z_col,
                      const Eigen::Ref<const Eigen::RowVectorXd>& arow, double brhs) {
    const double Mdual = md(comp), Mprim = mp(comp);
    ++comp;
    const int rd = m.add_row("MD_" + tag, 'L', 0.0);  // lam <= M z
    m.set(rd, lam_col, 1.0);
    m.set(rd, z_col, -Mdual);
    const int rp = m.add_row("MP_" + tag, 'L', Mprim - brhs);  // b - a'x <= M (1-z)
    for (int v = 0; v < gm.nx; ++v) m.set(rp, xcol[v], -arow(v));
    m.set(rp, z_col, Mprim);
  };
  for (int r = 0; r < mA; ++r)
    add_comp("A" + std::to_string(r), lamA[r], zA[r], gm.Acoup.row(r), gm.bcoup(r));
  for (int r = 0; r < mF; ++r)
    if (!gm.local_rows[r].equality)
      add_comp("F" + std::to_string(r), lamF[r], zF[r], gm.Flocal.row(r), gm.flocal(r));

  // Objective: -(sum p)' C1 (sum p) - c0' sum p + (1 - alpha)' sum t
  //            + p_tilde * 1' sum k over rebound intervals.
  auto qkey = [](int a, int b) { return std::make_pair(std::min(a, b), std::max(a, b)); };
  for (int tau = 0; tau < T; ++tau) {
    for (int i = 0; i < N; ++i) {
      const int pi = xcol[var_index(T, i, Var::P, tau)];
      const int ti = xcol[var_index(T, i, Var::TT, tau)];
      m.obj_linear[ti] += 1.0;
      if (gm.scen.is_rebound(tau))
        m.obj_linear[xcol[var_index(T, i, Var::K, tau)]] += gm.scen.p_tilde;
      m.quad[qkey(c0_col[tau], pi)] += -1.0;
      m.quad[qkey(al_col[tau], ti)] += -1.0;
      for (int j = i; j < N; ++j)
        m.quad[qkey(pi, xcol[var_index(T, j, Var::P, tau)])] += -2.0 * gm.scen.c1(tau);
    }
  }
  for (auto it = m.quad.begin(); it != m.quad.end();)
    it = (it->second == 0.0) ? m.quad.erase(it) : std::next(it);
  for (auto it = m.obj_linear.begin(); it != m.obj_linear.end();)
    it = (it->second == 0.0) ? m.obj_linear.erase(it) : std::next(it);
  return m;
}

inline void write_mps(const BigMModel& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  const auto val = detail::fmt_shortest;

  os << "NAME          " << m.name << "\n";
  os << "OBJSENSE\n    " << (m.objsense == 'x' ? "MAX" : "MIN") << "\n";
  os << "ROWS\n N  COST\n";
  for (size_t r = 0; r < m.row_names.size(); ++r)
    os << " " << m.row_types[r] << "  " << m.row_names[r] << "\n";

  // column-major view of the row entries
  std::vector<std::vector<std::pair<int, double>>> by_col(m.col_names.size());
  for (const auto& [key, v] : m.entries) by_col[key.second].push_back({key.first, v});

  os << "COLUMNS\n";
  bool in_int = false;
  int marker = 0;
  for (size_t c = 0; c < m.col_names.size(); ++c) {
    const bool want_int = m.col_bound[c] == 'b';
    if (want_int != in_int) {
      os << "    MK" << marker++ << "  'MARKER'  " << (want_int ? "'INTORG'" : "'INTEND'") << "\n";
      in_int = want_int;
    }
    const std::string& cn = m.col_names[c];
    auto itl = m.obj_linear.find(static_cast<int>(c));
    if (itl != m.obj_linear.end()) os << "    " << cn << "  COST  " << val(itl->second) << "\n";
    for (const auto& [row, v] : by_col[c])
      os << "    " << cn << "  " << m.row_names[row] << "  " << val(v) << "\n";
  }
  if (in_int) os << "    MK" << marker++ << "  'MARKER'  'INTEND'\n";

  os << "RHS\n";
  for (size_t r = 0; r < m.rhs.size(); ++r)
    if (m.rhs[r] != 0.0) os << "    RHS  " << m.row_names[r] << "  " << val(m.rhs[r]) << "\n";

  os << "BOUNDS\n";
  for (size_t c = 0; c < m.col_names.size(); ++c) {
    switch (m.col_bound[c]) {
      case 'f': os << " FR BND  " << m.col_names[c] << "\n"; break;
      case 'b': os << " BV BND  " << m.col_names[c] << "\n"; break;
      case 'r':
        os << " LO BND  " << m.col_names[c] << "  " << val(m.lb[c]) << "\n";
        os << " UP BND  " << m.col_names[c] << "  " << val(m.ub[c]) << "\n";
        break;
      default: break;
    }
  }

  if (!m.quad.empty()) {
    os << "QUADOBJ\n";
    for (const auto& [key, v] : m.quad)
      os << "    " << m.col_names[key.first] << "  " << m.col_names[key.second] << "  " << val(v)
         << "\n";
  }
  os << "ENDATA\n";
  if (!os) throw IoError("write failure on " + path);
}

inline BigMModel parse_mps(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  BigMModel m;
  m.name.clear();

  enum class Sec { None, Objsense, Rows, Columns, Rhs, Bounds, Quadobj, Done };
  Sec sec = Sec::None;
  bool in_int = false;
  std::vector<char> pend_lb(0), pend_ub(0);  // per column flags for 'r'
  std::string line;
  int lineno = 0;
  auto to_d = [&](const std::string& s) {
    try {
      size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (...) {
      throw ParseError(path, lineno, 1, "bad numeric field '" + s + "'");
    }
  };

  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '*') continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;

    if (line[0] != ' ') {  // section header
      const std::string& s = tok[0];
      if (s == "NAME") {
        if (tok.size() > 1) m.name = tok[1];
        sec = Sec::None;
      } else if (s == "OBJSENSE")
        sec = Sec::Objsense;
      else if (s == "ROWS")
        sec = Sec::Rows;
      else if (s == "COLUMNS")
        sec = Sec::Columns;
      else if (s == "RHS")
        sec = Sec::Rhs;
      else if (s == "BOUNDS")
        sec = Sec::Bounds;
      else if (s == "QUADOBJ")
        sec = Sec::Quadobj;
      else if (s == "ENDATA") {
        sec = Sec::Done;
        break;
      } else
        throw ParseError(path, lineno, 1, "unknown section '" + s + "'");
      continue;
    }

    switch (sec) {
      case Sec::Objsense:
        m.objsense = (tok[0] == "MAX") ? 'x' : 'm';
        break;
      case Sec::Rows: {
        if (tok.size() < 2) throw ParseError(path, lineno, 1, "short ROWS line");
        if (tok[0] == "N") break;  // objective row
        m.add_row(tok[1], tok[0][0], 0.0);
        break;
      }
      case Sec::Columns: {
        if (tok.size() >= 3 && tok[1] == "'MARKER'") {
          in_int = tok[2] == "'INTORG'";
          break;
        }
        if (tok.size() < 3) throw ParseError(path, lineno, 1, "short COLUMNS line");
        auto itc = m.col_index.find(tok[0]);
        int col;
        if (itc == m.col_index.end()) {
          col = m.add_col(tok[0], in_int ? 'b' : 'd');
          pend_lb.push_back(0);
          pend_ub.push_back(0);
        } else {
          col = itc->second;
        }
        for (size_t k = 1; k + 1 < tok.size(); k += 2) {
          const double v = to_d(tok[k + 1]);
          if (tok[k] == "COST") {
            m.obj_linear[col] = v;
          } else {
            auto itr = m.row_index.find(tok[k]);
            if (itr == m.row_index.end())
              throw ParseError(path, lineno, 1, "unknown row '" + tok[k] + "'");
            m.entries[{itr->second, col}] = v;
          }
        }
        break;
      }
      case Sec::Rhs: {
        for (size_t k = 1; k + 1 < tok.size(); k += 2) {
          auto itr = m.row_index.find(tok[k]);
          if (itr == m.row_index.end())
            throw ParseError(path, lineno, 1, "unknown row '" + tok[k] + "'");
          m.rhs[itr->second] = to_d(tok[k + 1]);
        }
        break;
      }
      case Sec::Bounds: {
        if (tok.size() < 3) throw ParseError(path, lineno, 1, "short BOUNDS line");
        auto itc = m.col_index.find(tok[2]);
        if (itc == m.col_index.end())
          throw ParseError(path, lineno, 1, "unknown column '" + tok[2] + "'");
        const int col = itc->second;
        if (tok[0] == "FR")
          m.col_bound[col] = 'f';
        else if (tok[0] == "BV")
          m.col_bound[col] = 'b';
        else if (tok[0] == "LO" && tok.size() >= 4) {
          m.lb[col] = to_d(tok[3]);
          pend_lb[col] = 1;
        } else if (tok[0] == "UP" && tok.size() >= 4) {
          m.ub[col] = to_d(tok[3]);
          pend_ub[col] = 1;
        } else
          throw ParseError(path, lineno, 1, "unsupported bound kind '" + tok[0] + "'");
        break;
      }
      case Sec::Quadobj: {
        if (tok.size() < 3) throw ParseError(path, lineno, 1, "short QUADOBJ line");
        auto a = m.col_index.find(tok[0]);
        auto b = m.col_index.find(tok[1]);
        if (a == m.col_index.end() || b == m.col_index.end())
          throw ParseError(path, lineno, 1, "unknown column in QUADOBJ");
        m.quad[{std::min(a->second, b->second), std::max(a->second, b->second)}] = to_d(tok[2]);
        break;
      }
      default:
        throw ParseError(path, lineno, 1, "data line outside any section");
    }
  }
  if (sec != Sec::Done) throw ParseError(path, lineno, 1, "missing ENDATA");
  for (size_t c = 0; c < m.col_names.size(); ++c)
    if (pend_lb[c] || pend_ub[c]) m.col_bound[c] = 'r';
  return m;
}

/// Builds and writes the big-M model; returns the in-memory form for checks.
inline BigMModel export_bigm(const AssembledGame& gm, const std::string& path,
                             const BigMOptions& opt = {}) {
  BigMModel m = build_bigm_model(gm, opt);
  write_mps(m, path);
  return m;
}

}  // namespace flexmarket
