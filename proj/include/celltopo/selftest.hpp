#pragma once

// Build self-checks: convolution kernels against direct loops, network
// gradients against finite differences, the hypergeometric tail against
// subset enumeration, and the architecture shape contract.

#include <cstdint>
#include <string>
#include <vector>

namespace celltopo {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<CheckResult> run_selftest(std::uint64_t seed = 1);

}  // namespace celltopo
