#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace aslora::verify {

struct CheckResult {
  std::string id;    // "AC4"
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  double budget_seconds = 0.0;
};

struct Check {
  std::string id;
  std::string name;
  double budget_seconds;
  /// Returns (passed, detail) for the numeric part of the check.
  std::function<std::pair<bool, std::string>()> body;
};

/// Suites: gradients, dp, scoring, selection, floor, convergence, flatness, all.
const std::vector<std::string>& suite_names();
bool is_suite(const std::string& name);

/// Checks of one suite, in criterion order. Throws std::invalid_argument for an unknown name.
std::vector<Check> suite(const std::string& name);

/// Runs a check and applies its runtime budget.
CheckResult run_check(const Check& check);

/// Runs every check of a suite, printing one "PASS|FAIL id name ..." line each.
std::vector<CheckResult> run_suite(const std::string& name, std::ostream& out);

}  // namespace aslora::verify
