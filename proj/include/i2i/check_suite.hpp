#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "i2i/grad_check.hpp"

namespace i2i {

/// One finite-difference check: a scalar function and the seeded leaves it is
/// differentiated against.
struct GradCheckCase {
  std::string group;  // primitive / divergence / network / objective
  std::string name;
  ScalarFn fn;
  std::vector<Tensor> inputs;
};

/// One case per op kind, each contracted against a fixed random weighting so
/// the whole Jacobian is exercised.
std::vector<GradCheckCase> primitive_cases(std::uint64_t seed);
std::vector<GradCheckCase> divergence_cases(std::uint64_t seed);
/// Composite paths through every network on a tiny architecture.
std::vector<GradCheckCase> network_cases(std::uint64_t seed);
/// Every loss term of the training objective on a tiny architecture.
std::vector<GradCheckCase> objective_cases(std::uint64_t seed);

std::vector<GradCheckCase> full_suite(std::uint64_t seed);

struct SuiteRow {
  std::string group;
  std::string name;
  GradCheckResult result;
  bool passed = false;
};

std::vector<SuiteRow> run_suite(const std::vector<GradCheckCase>& cases, double tolerance,
                                const GradCheckOptions& options = {});

}  // namespace i2i
