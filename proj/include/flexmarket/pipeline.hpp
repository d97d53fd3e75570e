#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "flexmarket/mpec.hpp"
#include "flexmarket/mps_export.hpp"
#include "flexmarket/scenario_io.hpp"

// The operational shell: loads a scenario, runs the day-ahead equilibrium
// pipeline (with a no-request baseline for comparison), and emits the result
// bundle plus CSV reports. Every numeric output is serialized with 12
// significant digits and all computation is seed-deterministic, so identical
// runs produce byte-identical files.

namespace flexmarket {

enum class RunMode { Validate, Solve, Baseline, Oracle, Export, Report };

struct RunConfig {
  RunMode mode = RunMode::Solve;
  std::string scenario_path, profiles_path, request_path;
  std::string out_dir;

  uint64_t seed = 0;
  int starts = 8;
  bool tikhonov = true;
  int grid_res = 3;
  double tol_stat = 1e-6, tol_feas = 1e-6, tol_comp = 1e-8, tol_improve = 1e-6;
  double bigm_primal = 1e3, bigm_dual = 1e4;

  LseOptions lse_options() const {
    LseOptions o;
    o.starts = starts;
    o.seed = seed;
    o.tol_improve = tol_improve;
    o.follower.tikhonov = tikhonov;
    o.follower.tol_stat = tol_stat;
    o.follower.tol_feas = tol_feas;
    o.follower.tol_comp = tol_comp;
    return o;
  }
};

struct RunMetrics {
  double valley_filling = 0.0;   // mean rebound-interval draw increase vs baseline
  double antiphase_corr = 0.0;   // corr(alpha, h) over response intervals
  bool antiphase_defined = false;
};

struct ResultBundle {
  std::string mode = "solve";
  int T = 0, N = 0;
  double dt = 1.0;
  VectorXd r, c1;

  LeaderDecision z0;
  std::vector<FollowerDecision> schedules;
  RewardLedger ledger;
  double J_dso = 0.0;
  VectorXd J_followers;
  KktResidual kkt;
  double eps = 0.0;
  Certificate certificate;
  VectorXd draw_dr, draw_baseline;
  RunMetrics metrics;
  long evaluations = 0;
  uint64_t seed = 0;
  int starts = 0;
  bool tikhonov = true;

  VectorXd price() const {  // h at the DR solution
    VectorXd sum_p = VectorXd::Zero(T);
    for (const auto& x : schedules) sum_p += x.p;
    return c1.cwiseProduct(sum_p) + z0.c0;
  }
};

inline RunMetrics compute_metrics(const ResultBundle& b) {
  RunMetrics m;
  int nreb = 0;
  double acc = 0.0;
  for (int tau = 0; tau < b.T; ++tau) {
    if (b.r(tau) < 0.0) {
      acc += b.draw_dr(tau) - b.draw_baseline(tau);
      ++nreb;
    }
  }
  m.valley_filling = nreb > 0 ? acc / nreb : 0.0;

  std::vector<int> resp;
  for (int tau = 0; tau < b.T; ++tau)
    if (b.r(tau) > 0.0) resp.push_back(tau);
  if (resp.size() >= 2) {
    const VectorXd h = b.price();
    double ma = 0, mh = 0;
    for (int tau : resp) {
      ma += b.z0.alpha(tau);
      mh += h(tau);
    }
    ma /= resp.size();
    mh /= resp.size();
    double sa = 0, sh = 0, sah = 0;
    for (int tau : resp) {
      sa += (b.z0.alpha(tau) - ma) * (b.z0.alpha(tau) - ma);
      sh += (h(tau) - mh) * (h(tau) - mh);
      sah += (b.z0.alpha(tau) - ma) * (h(tau) - mh);
    }
    if (sa > 1e-16 && sh > 1e-16) {
      m.antiphase_corr = sah / std::sqrt(sa * sh);
      m.antiphase_defined = true;
    }
  }
  return m;
}

namespace detail {

inline std::string json_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string jnum(double v) { return ioutil::fmt12(v); }

inline std::string jarr(const VectorXd& v) {
  std::string s = "[";
  for (int i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += jnum(v(i));
  }
  return s + "]";
}

}  // namespace detail

/// Writes <out_dir>/result.json with fixed key order and 12-digit numbers.
inline void write_bundle(const ResultBundle& b, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream os(fs::path(out_dir) / "result.json");
  if (!os) throw IoError("cannot write result.json under " + out_dir);
  using detail::jarr;
  using detail::jnum;

  os << "{\n";
  os << "  \"format_version\": 1,\n";
  os << "  \"mode\": \"" << detail::json_escape(b.mode) << "\",\n";
  os << "  \"T\": " << b.T << ",\n";
  os << "  \"dt\": " << jnum(b.dt) << ",\n";
  os << "  \"N\": " << b.N << ",\n";
  os << "  \"r\": " << jarr(b.r) << ",\n";
  os << "  \"c1\": " << jarr(b.c1) << ",\n";
  os << "  \"leader\": {\"c0\": " << jarr(b.z0.c0) << ", \"alpha\": " << jarr(b.z0.alpha)
     << "},\n";
  os << "  \"schedules\": [\n";
  for (size_t i = 0; i < b.schedules.size(); ++i) {
    const FollowerDecision& x = b.schedules[i];
    os << "    {\"p\": " << jarr(x.p) << ", \"y\": " << jarr(x.y) << ", \"e\": " << jarr(x.e)
       << ", \"pc\": " << jarr(x.pc) << ", \"pdc\": " << jarr(x.pdc) << ", \"k\": " << jarr(x.k)
       << ", \"t\": " << jarr(x.t) << "}" << (i + 1 < b.schedules.size() ? "," : "") << "\n";
  }
  os << "  ],\n";
  os << "  \"costs\": {\"dso\": " << jnum(b.J_dso) << ", \"followers\": " << jarr(b.J_followers)
     << "},\n";
  os << "  \"residuals\": {\"stat\": " << jnum(b.kkt.stat) << ", \"feas\": " << jnum(b.kkt.feas)
     << ", \"comp\": " << jnum(b.kkt.comp) << ", \"eps\": " << jnum(b.eps) << "},\n";
  os << "  \"certificate\": {\"radius\": " << jnum(b.certificate.radius)
     << ", \"samples\": " << b.certificate.samples
     << ", \"worst_improvement\": " << jnum(b.certificate.worst_improvement)
     << ", \"pass\": " << (b.certificate.pass ? "true" : "false") << "},\n";
  os << "  \"ledger\": {\n";
  os << "    \"pi_R\": " << jarr(b.ledger.pi_R) << ",\n";
  os << "    \"pi_B\": " << jarr(b.ledger.pi_B) << ",\n";
  os << "    \"dso_net\": " << jarr(b.ledger.dso_net) << ",\n";
  os << "    \"energy_revenue\": " << jarr(b.ledger.energy_revenue) << ",\n";
  os << "    \"phi\": [";
  for (int i = 0; i < b.ledger.phi.rows(); ++i)
    os << (i ? "," : "") << jarr(b.ledger.phi.row(i).transpose());
  os << "]\n  },\n";
  os << "  \"baseline\": {\"draw_dr\": " << jarr(b.draw_dr)
     << ", \"draw_baseline\": " << jarr(b.draw_baseline) << "},\n";
  os << "  \"metrics\": {\"valley_filling\": " << jnum(b.metrics.valley_filling)
     << ", \"antiphase_corr\": "
     << (b.metrics.antiphase_defined ? jnum(b.metrics.antiphase_corr) : std::string("null"))
     << "},\n";
  os << "  \"solver\": {\"seed\": " << b.seed << ", \"starts\": " << b.starts
     << ", \"tikhonov\": " << (b.tikhonov ? "true" : "false")
     << ", \"evaluations\": " << b.evaluations << "}\n";
  os << "}\n";
}

inline ResultBundle read_bundle(const std::string& out_dir) {
  namespace fs = std::filesystem;
  const auto path = fs::path(out_dir) / "result.json";
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  auto vec = [](const nlohmann::json& a) {
    VectorXd v(a.size());
    for (size_t i = 0; i < a.size(); ++i) v(i) = a[i].get<double>();
    return v;
  };
  ResultBundle b;
  b.mode = j.at("mode").get<std::string>();
  b.T = j.at("T").get<int>();
  b.dt = j.at("dt").get<double>();
  b.N = j.at("N").get<int>();
  b.r = vec(j.at("r"));
  b.c1 = vec(j.at("c1"));
  b.z0.c0 = vec(j.at("leader").at("c0"));
  b.z0.alpha = vec(j.at("leader").at("alpha"));
  for (const auto& s : j.at("schedules")) {
    FollowerDecision x;
    x.p = vec(s.at("p"));
    x.y = vec(s.at("y"));
    x.e = vec(s.at("e"));
    x.pc = vec(s.at("pc"));
    x.pdc = vec(s.at("pdc"));
    x.k = vec(s.at("k"));
    x.t = vec(s.at("t"));
    b.schedules.push_back(std::move(x));
  }
  b.J_dso = j.at("costs").at("dso").get<double>();
  b.J_followers = vec(j.at("costs").at("followers"));
  b.kkt.stat = j.at("residuals").at("stat").get<double>();
  b.kkt.feas = j.at("residuals").at("feas").get<double>();
  b.kkt.comp = j.at("residuals").at("comp").get<double>();
  b.eps = j.at("residuals").at("eps").get<double>();
  b.certificate.radius = j.at("certificate").at("radius").get<double>();
  b.certificate.samples = j.at("certificate").at("samples").get<int>();
  b.certificate.worst_improvement = j.at("certificate").at("worst_improvement").get<double>();
  b.certificate.pass = j.at("certificate").at("pass").get<bool>();
  b.ledger.pi_R = vec(j.at("ledger").at("pi_R"));
  b.ledger.pi_B = vec(j.at("ledger").at("pi_B"));
  b.ledger.dso_net = vec(j.at("ledger").at("dso_net"));
  b.ledger.energy_revenue = vec(j.at("ledger").at("energy_revenue"));
  {
    const auto& phi = j.at("ledger").at("phi");
    b.ledger.phi.resize(phi.size(), b.T);
    for (size_t i = 0; i < phi.size(); ++i) b.ledger.phi.row(i) = vec(phi[i]).transpose();
  }
  b.draw_dr = vec(j.at("baseline").at("draw_dr"));
  b.draw_baseline = vec(j.at("baseline").at("draw_baseline"));
  b.metrics.valley_filling = j.at("metrics").at("valley_filling").get<double>();
  if (!j.at("metrics").at("antiphase_corr").is_null()) {
    b.metrics.antiphase_corr = j.at("metrics").at("antiphase_corr").get<double>();
    b.metrics.antiphase_defined = true;
  }
  b.seed = j.at("solver").at("seed").get<uint64_t>();
  b.starts = j.at("solver").at("starts").get<int>();
  b.tikhonov = j.at("solver").at("tikhonov").get<bool>();
  b.evaluations = j.at("solver").at("evaluations").get<long>();
  return b;
}

/// CSV reports and the plain-text summary, regenerable from a stored bundle.
inline void emit_report(const ResultBundle& b, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  using ioutil::fmt12;
  auto open = [&](const std::string& name) {
    std::ofstream os(fs::path(out_dir) / name);
    if (!os) throw IoError("cannot write " + name + " under " + out_dir);
    return os;
  };

  for (int i = 0; i < b.N; ++i) {
    auto os = open("schedule_prosumer_" + std::to_string(i + 1) + ".csv");
    os << "tau,p_kw,y_kw,e_kwh,pc_kw,pdc_kw,k_kw,t\n";
    const FollowerDecision& x = b.schedules[i];
    for (int tau = 0; tau < b.T; ++tau)
      os << tau + 1 << "," << fmt12(x.p(tau)) << "," << fmt12(x.y(tau)) << "," << fmt12(x.e(tau))
         << "," << fmt12(x.pc(tau)) << "," << fmt12(x.pdc(tau)) << "," << fmt12(x.k(tau)) << ","
         << fmt12(x.t(tau)) << "\n";
  }
  {
    auto os = open("flexibility.csv");
    os << "tau,r_kw,sum_y_kw,sum_k_kw\n";
    for (int tau = 0; tau < b.T; ++tau) {
      double sy = 0, sk = 0;
      for (const auto& x : b.schedules) {
        sy += x.y(tau);
        sk += x.k(tau);
      }
      os << tau + 1 << "," << fmt12(b.r(tau)) << "," << fmt12(sy) << "," << fmt12(sk) << "\n";
    }
  }
  {
    auto os = open("grid_draw.csv");
    os << "tau,draw_dr_kw,draw_baseline_kw\n";
    for (int tau = 0; tau < b.T; ++tau)
      os << tau + 1 << "," << fmt12(b.draw_dr(tau)) << "," << fmt12(b.draw_baseline(tau)) << "\n";
  }
  {
    auto os = open("pricing.csv");
    const VectorXd h = b.price();
    os << "tau,h,c0,alpha\n";
    for (int tau = 0; tau < b.T; ++tau)
      os << tau + 1 << "," << fmt12(h(tau)) << "," << fmt12(b.z0.c0(tau)) << ","
         << fmt12(b.z0.alpha(tau)) << "\n";
  }
  {
    auto os = open("ledger.csv");
    os << "tau,pi_R,pi_B,dso_net,energy_revenue";
    for (int i = 0; i < b.N; ++i) os << ",phi_" << i + 1;
    os << "\n";
    for (int tau = 0; tau < b.T; ++tau) {
      os << tau + 1 << "," << fmt12(b.ledger.pi_R(tau)) << "," << fmt12(b.ledger.pi_B(tau)) << ","
         << fmt12(b.ledger.dso_net(tau)) << "," << fmt12(b.ledger.energy_revenue(tau));
      for (int i = 0; i < b.N; ++i) os << "," << fmt12(b.ledger.phi(i, tau));
      os << "\n";
    }
  }
  {
    auto os = open("summary.txt");
    os << "mode: " << b.mode << "\n";
    os << "horizon: T=" << b.T << " dt=" << fmt12(b.dt) << "h N=" << b.N << "\n";
    os << "dso_cost: " << fmt12(b.J_dso) << "\n";
    os << "follower_costs:";
    for (int i = 0; i < b.J_followers.size(); ++i) os << " " << fmt12(b.J_followers(i));
    os << "\n";
    os << "kkt_residuals: stat=" << fmt12(b.kkt.stat) << " feas=" << fmt12(b.kkt.feas)
       << " comp=" << fmt12(b.kkt.comp) << "\n";
    os << "certificate: " << (b.certificate.pass ? "PASS" : "FAIL")
       << " worst_improvement=" << fmt12(b.certificate.worst_improvement)
       << " radius=" << fmt12(b.certificate.radius) << " samples=" << b.certificate.samples
       << "\n";
    os << "valley_filling_kw: " << fmt12(b.metrics.valley_filling) << "\n";
    if (b.metrics.antiphase_defined) {
      os << "antiphase_corr: " << fmt12(b.metrics.antiphase_corr) << "\n";
      if (b.metrics.antiphase_corr >= 0)
        os << "warning: alpha-price correlation is not negative on this instance\n";
    } else {
      os << "antiphase_corr: undefined (fewer than two response intervals)\n";
    }
  }
}

/// Full day-ahead pipeline: load, assemble, search, certify, ledger, write.
/// `mode` Baseline forces r = 0. Throws on validation/solve failures; the
/// bundle (including a failed certificate) is always written on success.
inline ResultBundle run_dayahead(const RunConfig& cfg) {
  if (cfg.mode != RunMode::Solve && cfg.mode != RunMode::Baseline)
    throw Error("run_dayahead handles solve/baseline modes only");

  ValidationReport vrep;
  const Scenario sc = load_scenario(cfg.scenario_path, cfg.profiles_path, cfg.request_path, &vrep);

  Scenario run_sc = sc;
  if (cfg.mode == RunMode::Baseline) run_sc.r.setZero();

  const AssembledGame gm = assemble(run_sc);
  const LseOptions opts = cfg.lse_options();
  const EquilibriumResult eq = solve_lse(gm, opts);

  ResultBundle b;
  b.mode = cfg.mode == RunMode::Baseline ? "baseline" : "solve";
  b.T = sc.T;
  b.N = sc.N;
  b.dt = sc.dt;
  b.r = run_sc.r;
  b.c1 = sc.c1;
  b.z0 = eq.z0_star;
  b.schedules = unstack_followers(eq.x_star, sc.N);
  b.ledger = build_reward_ledger(eq.z0_star, b.schedules, run_sc);
  b.J_dso = eq.J_dso;
  b.J_followers = eq.J_followers;
  b.kkt = eq.kkt;
  b.eps = eq.eps;
  b.certificate = eq.certificate;
  b.evaluations = eq.evaluations;
  b.seed = cfg.seed;
  b.starts = cfg.starts;
  b.tikhonov = cfg.tikhonov;

  b.draw_dr = VectorXd::Zero(sc.T);
  for (const auto& x : b.schedules) b.draw_dr += x.p - x.k;
  if (cfg.mode == RunMode::Solve) {
    Scenario base = sc;
    base.r.setZero();
    const AssembledGame gb = assemble(base);
    const EquilibriumResult eb = solve_lse(gb, opts);
    b.draw_baseline = VectorXd::Zero(sc.T);
    const auto bxs = unstack_followers(eb.x_star, sc.N);
    for (const auto& x : bxs) b.draw_baseline += x.p;
  } else {
    b.draw_baseline = VectorXd::Zero(sc.T);
    for (const auto& x : b.schedules) b.draw_baseline += x.p;
  }
  b.metrics = compute_metrics(b);

  if (!cfg.out_dir.empty()) {
    write_bundle(b, cfg.out_dir);
    emit_report(b, cfg.out_dir);
  }
  return b;
}

/// Machine-readable failure report, written next to where results would go.
inline void write_error_file(const std::string& out_dir, const std::string& kind,
                             const std::string& message) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::ofstream os(fs::path(out_dir.empty() ? "." : out_dir) / "error.json");
  os << "{\"kind\": \"" << detail::json_escape(kind) << "\", \"error\": \""
     << detail::json_escape(message) << "\"}\n";
}

}  // namespace flexmarket
