#pragma once

#include <cstdint>

namespace subgrad {

/// Unit-cost operation counter: one unit per multiplication, addition and
/// branch test. A degree-e power is charged e-1 multiplications.
struct CostMeter {
  std::int64_t multiplications = 0;
  std::int64_t additions = 0;
  std::int64_t branch_tests = 0;

  std::int64_t total() const { return multiplications + additions + branch_tests; }

  void reset() { *this = CostMeter{}; }

  CostMeter& operator+=(const CostMeter& o) {
    multiplications += o.multiplications;
    additions += o.additions;
    branch_tests += o.branch_tests;
    return *this;
  }

  friend CostMeter operator+(CostMeter a, const CostMeter& b) { return a += b; }

  friend bool operator==(const CostMeter&, const CostMeter&) = default;
};

}  // namespace subgrad
