#pragma once

/**
 * @file gradsuite.hpp
 * @brief Seeded gradient checks over random programs, the crop simulator,
 * the LSTM and every hybrid training loss.
 */

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "agridiff/autodiff.hpp"

namespace agridiff::gradsuite {

/// A random straight-line program over scalar inputs. Every instruction reads
/// earlier slots (inputs first) and appends one slot.
struct Recipe {
  enum class Kind {
    add, sub, mul, div, exp, ln, tanh, sigmoid, relu, pow_const, min_const, max_const, softplus,
    sum, dot
  };
  struct Instr {
    Kind kind = Kind::add;
    std::vector<std::size_t> args;
    double constant = 0.0;
  };
  std::size_t inputs = 0;
  std::vector<Instr> code;
};

/// Builds a program of `ops` instructions and a point in [-2, 2]^inputs.
/// Arguments of domain-restricted or kinked operations are kept at least 0.1
/// away from the boundary at that point.
Recipe random_program(std::mt19937_64& rng, std::size_t inputs, std::size_t ops,
                      std::vector<double>& point);

template <class Real>
Real evaluate(const Recipe& r, std::span<const Real> x);

struct SuiteCase {
  std::string name;
  ad::GradCheckReport report;
};

struct SuiteOptions {
  std::size_t random_programs = 100;
  bool pbm = true;
  bool lstm = true;
  bool hybrids = true;
  /// h = 1e-6 max(1, |x|); small enough not to straddle the simulator's kinks.
  ad::GradCheckOptions check{1e-6, 1e-5, true};
  /// The mass-balance loss is smooth but carries a large constant penalty, so
  /// at h = 1e-6 rounding (ulp(f) / h) swamps its smallest weight gradients.
  ad::GradCheckOptions smooth_check{1e-4, 1e-5, true};
};

std::vector<SuiteCase> run_gradient_suite(std::uint64_t seed, const SuiteOptions& options = {});

}  // namespace agridiff::gradsuite
