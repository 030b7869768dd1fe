#pragma once

#include <string>
#include <vector>

#include "hsifuse/grad_check.hpp"

// Named gradient-verification cases grouped by scope, shared by the CLI and
// the test suites. Every case runs in f64 on seeded inputs.
namespace hsifuse::gradsuite {

struct CaseResult {
    std::string scope;
    std::string name;
    GradCheckReport report;
    double seconds = 0.0;
};

/// primitives, ast, asse, hpsc, full
const std::vector<std::string>& scopes();

/// Runs every case of `scope` ("all" runs every scope). Unknown scopes throw
/// ConfigError.
std::vector<CaseResult> run(const std::string& scope, double tol, uint64_t seed = 0);

/// Names of the cases in one scope.
std::vector<std::string> case_names(const std::string& scope);
/// Runs a single named case. Unknown names throw ConfigError.
CaseResult run_case(const std::string& scope, const std::string& name, double tol, uint64_t seed = 0);

}  // namespace hsifuse::gradsuite
