// One line per acceptance criterion; non-zero exit if any fails.
#include <iostream>

#include "aslora/verify.hpp"

int main() {
  const auto results = aslora::verify::run_suite("all", std::cout);
  int failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  std::cout << results.size() - failed << "/" << results.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
