#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace flexmarket {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Scenario failed the hard invariant checks. `issues` lists every violated
/// invariant, one human-readable line each.
struct ValidationError : Error {
  std::vector<std::string> issues;

  explicit ValidationError(std::vector<std::string> issues_)
      : Error(join(issues_)), issues(std::move(issues_)) {}

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::ostringstream os;
    os << "scenario validation failed (" << v.size() << " issue(s)):";
    for (const auto& s : v) os << "\n  - " << s;
    return os.str();
  }
};

/// Parse failure in a config/CSV file, with 1-based location.
struct ParseError : Error {
  std::string path;
  int line = 0;
  int column = 0;

  ParseError(std::string path_, int line_, int column_, const std::string& msg)
      : Error(path_ + ":" + std::to_string(line_) + ":" +
              std::to_string(column_) + ": " + msg),
        path(std::move(path_)),
        line(line_),
        column(column_) {}
};

/// Equilibrium solve failed. `kind` names the certificate (ray termination,
/// iteration limit, ...); residuals carry the best point found so far.
struct SolveError : Error {
  enum class Kind { RayTermination, IterationLimit, LeaderOutsideGamma, AllStartsFailed, Internal };
  Kind kind;
  double stat_residual = -1, comp_residual = -1, feas_residual = -1;

  SolveError(Kind kind_, const std::string& msg) : Error(msg), kind(kind_) {}
  SolveError(Kind kind_, const std::string& msg, double stat, double comp, double feas)
      : Error(msg), kind(kind_), stat_residual(stat), comp_residual(comp), feas_residual(feas) {}
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace flexmarket
