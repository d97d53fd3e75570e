#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <fstream>

#include "flexmarket/mps_export.hpp"
#include "flexmarket/vgne.hpp"
#include "support/test_instances.hpp"

using namespace flexmarket;
namespace fmt = flexmarket::testing;

namespace {

Scenario pick(int N, int T, uint64_t seed) {
  std::mt19937_64 rng(seed);
  Scenario sc = fmt::random_scenario(rng, N, T);
  while (sc.N != N || sc.T != T) sc = fmt::random_scenario(rng, N, T);
  return sc;
}

std::string tmp_path(const char* stem) {
  return std::string("./") + stem + ".mps";
}

// Objective value of the exchange model at an assignment of its columns.
double model_objective(const BigMModel& m, const std::vector<double>& v) {
  double obj = 0.0;
  for (const auto& [c, coef] : m.obj_linear) obj += coef * v[c];
  for (const auto& [key, coef] : m.quad) {
    if (key.first == key.second)
      obj += 0.5 * coef * v[key.first] * v[key.first];
    else
      obj += coef * v[key.first] * v[key.second];
  }
  return obj;
}

}  // namespace

TEST_CASE("binary count equals the number of complementarity rows") {
  AssembledGame gm = assemble(pick(1, 1, 7));
  BigMModel m = build_bigm_model(gm);
  CHECK(m.num_binaries() == gm.num_complementarity_rows());
  CHECK(m.num_binaries() == gm.mA() + gm.num_local_ineq());
}

TEST_CASE("export then parse reproduces identical matrices") {
  AssembledGame gm = assemble(pick(2, 2, 11));
  const std::string path = tmp_path("roundtrip");
  BigMModel written = export_bigm(gm, path);
  BigMModel parsed = parse_mps(path);
  CHECK(model_equal(written, parsed));
  std::remove(path.c_str());
}

TEST_CASE("file structure") {
  AssembledGame gm = assemble(pick(1, 2, 13));
  const std::string path = tmp_path("structure");
  export_bigm(gm, path);
  std::ifstream is(path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  for (const char* sec : {"NAME", "OBJSENSE", "MIN", "ROWS", "COLUMNS", "RHS", "BOUNDS",
                          "QUADOBJ", "ENDATA", "'INTORG'", "'INTEND'", " BV BND"})
    CHECK(text.find(sec) != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("nonpositive big-M constants are rejected") {
  AssembledGame gm = assemble(pick(1, 1, 17));
  BigMOptions opt;
  opt.M_primal = 0.0;
  CHECK_THROWS_AS(build_bigm_model(gm, opt), std::invalid_argument);
  opt.M_primal = 1e3;
  opt.per_row_dual = VectorXd::Constant(3, 1.0);  // wrong length
  CHECK_THROWS_AS(build_bigm_model(gm, opt), std::invalid_argument);
  opt.per_row_dual = VectorXd::Constant(gm.num_complementarity_rows(), -1.0);
  CHECK_THROWS_AS(build_bigm_model(gm, opt), std::invalid_argument);
}

TEST_CASE("model objective matches the leader cost form") {
  std::mt19937_64 rng(23);
  Scenario sc = pick(2, 3, 29);
  AssembledGame gm = assemble(sc);
  BigMModel m = build_bigm_model(gm);
  for (int rep = 0; rep < 20; ++rep) {
    LeaderDecision z0 = fmt::random_z0(rng, sc);
    auto xs = fmt::random_decisions_t_pinned(rng, sc);
    const VectorXd x = stack_followers(xs);
    std::vector<double> v(m.col_names.size(), 0.0);
    for (int tau = 0; tau < sc.T; ++tau) {
      v[m.col_index.at("C0_" + std::to_string(tau))] = z0.c0(tau);
      v[m.col_index.at("AL_" + std::to_string(tau))] = z0.alpha(tau);
    }
    for (int i = 0; i < sc.N; ++i)
      for (int b = 0; b < kVarBlocks; ++b)
        for (int tau = 0; tau < sc.T; ++tau) {
          const int fv = var_index(sc.T, i, static_cast<Var>(b), tau);
          v[m.col_index.at(detail::var_col_name(i, static_cast<Var>(b), tau))] = x(fv);
        }
    const double expect = gm.leader_cost(z0, x);
    CHECK(model_objective(m, v) ==
          Catch::Approx(expect).margin(1e-9 * std::max(1.0, std::abs(expect))));
  }
}

TEST_CASE("a KKT point satisfies the big-M rows with the induced binaries") {
  Scenario sc = pick(2, 2, 31);
  AssembledGame gm = assemble(sc);
  SolveOptions opts;
  opts.tikhonov = false;  // the exported system is the raw KKT
  opts.method = SolveMethod::Pivoting;
  LeaderDecision z0 = gm.gamma_midpoint();
  VgneSolution sol = solve_vgne(gm, z0, opts);

  BigMModel m = build_bigm_model(gm);
  std::vector<double> v(m.col_names.size(), 0.0);
  for (int tau = 0; tau < sc.T; ++tau) {
    v[m.col_index.at("C0_" + std::to_string(tau))] = z0.c0(tau);
    v[m.col_index.at("AL_" + std::to_string(tau))] = z0.alpha(tau);
  }
  for (int i = 0; i < sc.N; ++i)
    for (int b = 0; b < kVarBlocks; ++b)
      for (int tau = 0; tau < sc.T; ++tau)
        v[m.col_index.at(detail::var_col_name(i, static_cast<Var>(b), tau))] =
            sol.x(var_index(sc.T, i, static_cast<Var>(b), tau));
  for (int r = 0; r < gm.mA(); ++r) {
    v[m.col_index.at("LC_" + std::to_string(r))] = sol.lambda(r);
    v[m.col_index.at("ZC_" + std::to_string(r))] = sol.lambda(r) > 1e-7 ? 1.0 : 0.0;
  }
  for (int r = 0; r < gm.mF(); ++r) {
    const std::string lname =
        (gm.local_rows[r].equality ? "NU_" : "LF_") + std::to_string(r);
    v[m.col_index.at(lname)] = sol.lambda_local(r);
    if (!gm.local_rows[r].equality)
      v[m.col_index.at("ZF_" + std::to_string(r))] = sol.lambda_local(r) > 1e-7 ? 1.0 : 0.0;
  }

  // every row of the exchange model holds at the point
  std::vector<double> act(m.row_names.size(), 0.0);
  for (const auto& [key, coef] : m.entries) act[key.first] += coef * v[key.second];
  for (size_t r = 0; r < m.row_names.size(); ++r) {
    if (m.row_types[r] == 'E')
      CHECK(act[r] == Catch::Approx(m.rhs[r]).margin(2e-6));
    else
      CHECK(act[r] <= m.rhs[r] + 2e-6);
  }
}
