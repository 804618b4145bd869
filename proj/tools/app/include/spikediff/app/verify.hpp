#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace spikediff::app {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Finite-difference check of every smooth operation, `instances` random
/// draws each, tolerance 1e-3 relative.
SuiteResult verify_gradients(std::uint64_t seed, int instances);

/// Autodiff against the explicit STBP recursion, tolerance 1e-6 absolute.
SuiteResult verify_stbp(std::uint64_t seed, int instances);

/// The three solvers with the exact Gaussian noise predictor: |mean| <= 0.05
/// and |var - 1| <= 0.1 per coordinate.
SuiteResult verify_samplers(std::uint64_t seed, int samples);

/// First-layer rate/quantizer identity for b = 1..4.
SuiteResult verify_conversion(std::uint64_t seed, int inputs);

/// Runs every suite, printing one line each to `log`.
std::vector<SuiteResult> run_verify(std::uint64_t seed, std::ostream& log);

}  // namespace spikediff::app
