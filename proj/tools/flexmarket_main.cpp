// Command-line front end for the day-ahead demand-response market pipeline.
//
// Subcommands: validate, solve, baseline, oracle, export-bigm, report.
// Exit codes: 0 success (and certificate passed), 2 validation/parse failure,
// 3 solver failure, 4 certificate failure.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>

#include "flexmarket/pipeline.hpp"

using namespace flexmarket;

namespace {

template <typename F>
int run_protected(const std::string& out_dir, F&& body) {
  try {
    return body();
  } catch (const ValidationError& e) {
    write_error_file(out_dir, "validation", e.what());
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    write_error_file(out_dir, "parse", e.what());
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    write_error_file(out_dir, "io", e.what());
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const SolveError& e) {
    write_error_file(out_dir, "solver", e.what());
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    write_error_file(out_dir, "internal", e.what());
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}

void print_bundle_summary(const ResultBundle& b, double seconds) {
  std::cout << "mode=" << b.mode << " J_dso=" << ioutil::fmt12(b.J_dso)
            << " certificate=" << (b.certificate.pass ? "PASS" : "FAIL")
            << " worst_improvement=" << ioutil::fmt12(b.certificate.worst_improvement)
            << " evaluations=" << b.evaluations << " (" << ioutil::fmt12(seconds) << " s)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flexmarket: hierarchical demand-response day-ahead scheduling"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string out_file;

  auto add_inputs = [&](CLI::App* c) {
    c->add_option("--scenario", cfg.scenario_path, "scenario config file")
        ->required()
        ->check(CLI::ExistingFile);
    c->add_option("--profiles", cfg.profiles_path, "profiles CSV (tau,prosumer_id,demand_kw,solar_kw)")
        ->required()
        ->check(CLI::ExistingFile);
    c->add_option("--request", cfg.request_path, "request CSV (tau,r_kw)")
        ->required()
        ->check(CLI::ExistingFile);
  };
  auto add_solver = [&](CLI::App* c) {
    c->add_option("--seed", cfg.seed, "deterministic search seed");
    c->add_option("--starts", cfg.starts, "pattern-search starts");
    c->add_option("--tikhonov", cfg.tikhonov, "Tikhonov equilibrium selection (0/1)");
    c->add_option("--tol-stat", cfg.tol_stat, "stationarity tolerance");
    c->add_option("--tol-feas", cfg.tol_feas, "feasibility tolerance");
    c->add_option("--tol-comp", cfg.tol_comp, "complementarity tolerance");
    c->add_option("--tol-improve", cfg.tol_improve, "certificate improvement tolerance");
  };

  CLI::App* validate = app.add_subcommand("validate", "check a scenario and report every issue");
  add_inputs(validate);

  CLI::App* solve = app.add_subcommand("solve", "full day-ahead run with certificate and reports");
  add_inputs(solve);
  solve->add_option("--out", cfg.out_dir, "output directory")->required();
  add_solver(solve);

  CLI::App* baseline = app.add_subcommand("baseline", "run with the request forced to zero");
  add_inputs(baseline);
  baseline->add_option("--out", cfg.out_dir, "output directory")->required();
  add_solver(baseline);

  CLI::App* oracle = app.add_subcommand("oracle", "exhaustive leader grid search (small horizons)");
  add_inputs(oracle);
  oracle->add_option("--out", cfg.out_dir, "output directory")->required();
  oracle->add_option("--grid-res", cfg.grid_res, "grid points per leader coordinate");
  add_solver(oracle);

  CLI::App* exportc = app.add_subcommand("export-bigm", "write the single-level big-M model (MPS)");
  add_inputs(exportc);
  exportc->add_option("--out", out_file, "output .mps file")->required();
  exportc->add_option("--bigm-primal", cfg.bigm_primal, "big-M on primal slacks");
  exportc->add_option("--bigm-dual", cfg.bigm_dual, "big-M on multipliers");

  CLI::App* report = app.add_subcommand("report", "regenerate CSV reports from result.json");
  report->add_option("--out", cfg.out_dir, "directory holding result.json")->required();

  CLI11_PARSE(app, argc, argv);
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  if (validate->parsed()) {
    return run_protected("", [&] {
      ValidationReport rep;
      const Scenario sc = load_scenario(cfg.scenario_path, cfg.profiles_path, cfg.request_path, &rep);
      for (const auto& w : rep.warnings) std::cout << "warning: " << w << "\n";
      const ProbeResult probe = feasibility_probe(sc);
      std::cout << "scenario ok: N=" << sc.N << " T=" << sc.T << " dt=" << sc.dt
                << " response_intervals=" << sc.response_count()
                << " rebound_intervals=" << sc.rebound_count() << "\n";
      std::cout << "interior-point probe: " << (probe.strict ? "strict" : "FAILED")
                << " margin=" << ioutil::fmt12(probe.margin) << "\n";
      return probe.strict ? 0 : 2;
    });
  }
  if (solve->parsed() || baseline->parsed()) {
    cfg.mode = solve->parsed() ? RunMode::Solve : RunMode::Baseline;
    return run_protected(cfg.out_dir, [&] {
      const ResultBundle b = run_dayahead(cfg);
      print_bundle_summary(b, elapsed());
      return b.certificate.pass ? 0 : 4;
    });
  }
  if (oracle->parsed()) {
    cfg.mode = RunMode::Oracle;
    return run_protected(cfg.out_dir, [&] {
      const Scenario sc = load_scenario(cfg.scenario_path, cfg.profiles_path, cfg.request_path);
      const AssembledGame gm = assemble(sc);
      SolveOptions fopts;
      fopts.tikhonov = cfg.tikhonov;
      fopts.tol_stat = cfg.tol_stat;
      fopts.tol_feas = cfg.tol_feas;
      fopts.tol_comp = cfg.tol_comp;
      const GridResult gr = grid_oracle(gm, cfg.grid_res, fopts);

      namespace fs = std::filesystem;
      fs::create_directories(cfg.out_dir);
      std::ofstream os(fs::path(cfg.out_dir) / "oracle.csv");
      os << "index";
      for (int tau = 0; tau < sc.T; ++tau) os << ",c0_" << tau + 1;
      for (int tau = 0; tau < sc.T; ++tau) os << ",alpha_" << tau + 1;
      os << ",cost\n";
      for (long i = 0; i < gr.points; ++i) {
        const LeaderDecision z = gr.point_at(i, gm);
        os << i;
        for (int tau = 0; tau < sc.T; ++tau) os << "," << ioutil::fmt12(z.c0(tau));
        for (int tau = 0; tau < sc.T; ++tau) os << "," << ioutil::fmt12(z.alpha(tau));
        os << "," << ioutil::fmt12(gr.costs(i)) << "\n";
      }
      std::cout << "grid points=" << gr.points << " best_index=" << gr.best_index
                << " best_cost=" << ioutil::fmt12(gr.best_cost) << " (" << ioutil::fmt12(elapsed())
                << " s)\n";
      return 0;
    });
  }
  if (exportc->parsed()) {
    return run_protected(".", [&] {
      const Scenario sc = load_scenario(cfg.scenario_path, cfg.profiles_path, cfg.request_path);
      const AssembledGame gm = assemble(sc);
      BigMOptions opt;
      opt.M_primal = cfg.bigm_primal;
      opt.M_dual = cfg.bigm_dual;
      const BigMModel m = export_bigm(gm, out_file, opt);
      std::cout << "wrote " << out_file << ": " << m.col_names.size() << " columns, "
                << m.row_names.size() << " rows, " << m.num_binaries() << " binaries\n";
      return 0;
    });
  }
  if (report->parsed()) {
    return run_protected(cfg.out_dir, [&] {
      const ResultBundle b = read_bundle(cfg.out_dir);
      emit_report(b, cfg.out_dir);
      std::cout << "reports regenerated under " << cfg.out_dir << "\n";
      return 0;
    });
  }
  return 1;
}
