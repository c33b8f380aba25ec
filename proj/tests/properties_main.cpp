// SPDX-License-Identifier: Apache-2.0
// Runs the randomized property suites. Usage: properties [cases] [seed]
#include <cstdlib>
#include <iostream>
#include <string>

#include "properties.hpp"

int main(int argc, char** argv) {
  const int cases = argc > 1 ? std::stoi(argv[1]) : 500;
  const std::uint64_t seed = argc > 2 ? std::stoull(argv[2]) : 20240601;
  int failed = 0;
  for (const auto& o : knnkd::properties::run_all(seed, cases)) {
    std::cout << (o.passed() ? "PASS " : "FAIL ") << o.name << " (" << o.cases << " cases, " << o.failures
              << " failures)";
    if (!o.first_failure.empty()) std::cout << ": " << o.first_failure;
    std::cout << "\n";
    failed += !o.passed();
  }
  return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
