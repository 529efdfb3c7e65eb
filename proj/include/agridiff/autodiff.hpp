#pragma once

/**
 * @file autodiff.hpp
 * @brief Scalar reverse-mode automatic differentiation.
 *
 * A Tape records every scalar operation as a node holding its value, the ids
 * of its parents and the local partial derivative with respect to each
 * parent. Tape::backward performs one reverse sweep and returns the adjoint
 * of every node.
 *
 * Var is an active scalar: either a node on a tape, or a passive constant
 * (no tape). Arithmetic between a constant and an active Var records a node
 * with a single parent; arithmetic between constants records nothing. This
 * lets numerical code be written once as a template over `Real` and
 * instantiated for `double` (fast forward evaluation) or `Var` (recorded).
 *
 * Kinks (relu, min_const, max_const) use the subgradient 0 at the kink.
 */

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "agridiff/error.hpp"

namespace agridiff::ad {

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  exp,
  ln,
  tanh,
  sigmoid,
  relu,
  pow_const,
  min_const,
  max_const,
  softplus,
  sum,  // n-ary sum
  dot,  // n-ary affine form: sum_i a_i*b_i (+ bias)
};

std::string_view op_name(Op op);

class Tape;

class Var {
 public:
  Var() = default;
  // Passive constant. Implicit so that generic code can write `Real x = 0.5;`.
  Var(double value) : value_(value) {}  // NOLINT(google-explicit-constructor)

  double value() const { return value_; }
  bool is_active() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id, double value) : tape_(tape), id_(id), value_(value) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
  double value_ = 0.0;
};

class Gradient {
 public:
  Gradient() = default;
  explicit Gradient(const Tape* tape, std::vector<double> adjoints)
      : tape_(tape), adjoints_(std::move(adjoints)) {}

  /// Adjoint of `v`; 0 for passive constants.
  double operator[](const Var& v) const;
  double at(std::uint32_t node_id) const { return adjoints_.at(node_id); }
  std::span<const double> adjoints() const { return adjoints_; }

 private:
  const Tape* tape_ = nullptr;
  std::vector<double> adjoints_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Fresh independent variable. Rejects non-finite values.
  Var leaf(double value);

  /// Record one primitive. `constant` is the exponent for pow_const, the
  /// threshold for min_const/max_const and the sharpness for softplus.
  Var elementary(Op kind, std::span<const Var> parents, double constant = 0.0);

  Gradient backward(const Var& output) const;

  std::size_t size() const { return values_.size(); }
  double value(std::uint32_t id) const { return values_.at(id); }
  Op kind(std::uint32_t id) const { return kinds_.at(id); }
  std::span<const std::uint32_t> parents(std::uint32_t id) const;
  std::span<const double> partials(std::uint32_t id) const;
  bool owns(const Var& v) const { return v.tape_ == this && v.id_ < values_.size(); }

  void clear();
  void reserve(std::size_t nodes, std::size_t edges);

  // Low-level recording used by the operator overloads. Passive entries in
  // `parents` are skipped.
  Var push(Op kind, double value, std::span<const Var> parents, std::span<const double> partials);
  Var push1(Op kind, double value, const Var& a, double da);
  Var push2(Op kind, double value, const Var& a, double da, const Var& b, double db);

 private:
  void add_edge(const Var& parent, double partial);
  Var finish(Op kind, double value);

  std::vector<double> values_;
  std::vector<Op> kinds_;
  std::vector<std::uint32_t> edge_begin_{0};
  std::vector<std::uint32_t> edge_parent_;
  std::vector<double> edge_partial_;
};

// ---------------------------------------------------------------------------
// Operations on Var. Every overload also exists for double so that templated
// model code can call `ad::f(x)` for either scalar type.
// ---------------------------------------------------------------------------

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

Var exp(const Var& x);
Var log(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var pow(const Var& x, double exponent);
Var min_const(const Var& x, double c);
Var max_const(const Var& x, double c);
/// log(1 + exp(beta*x)) / beta, evaluated stably.
Var softplus(const Var& x, double beta = 1.0);
Var sum(std::span<const Var> terms);
/// sum_i a_i*b_i + bias as one node.
Var dot(std::span<const Var> a, std::span<const Var> b, const Var& bias = Var(0.0));

inline double value_of(const Var& x) { return x.value(); }
inline double value_of(double x) { return x; }

inline double exp(double x) { return std::exp(x); }
inline double log(double x) {
  if (!(x > 0.0)) throw DomainError("ln: non-positive argument " + std::to_string(x));
  return std::log(x);
}
inline double tanh(double x) { return std::tanh(x); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double pow(double x, double exponent) { return std::pow(x, exponent); }
inline double min_const(double x, double c) { return x < c ? x : c; }
inline double max_const(double x, double c) { return x > c ? x : c; }
inline double softplus(double x, double beta = 1.0) {
  const double z = beta * x;
  return (std::log1p(std::exp(-std::abs(z))) + (z > 0.0 ? z : 0.0)) / beta;
}
inline double sum(std::span<const double> terms) {
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}
inline double dot(std::span<const double> a, std::span<const double> b, double bias = 0.0) {
  double s = bias;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// max(a, b) by selection, so the result is exactly one operand; the kink at
/// a == b takes b.
template <class Real>
Real maximum(const Real& a, const Real& b) {
  return value_of(a) > value_of(b) ? a : b;
}

/// min(a, b) by selection; the kink at a == b takes b.
template <class Real>
Real minimum(const Real& a, const Real& b) {
  return value_of(a) < value_of(b) ? a : b;
}

template <class Real>
Real clamp_const(const Real& x, double lo, double hi) {
  return min_const(max_const(x, lo), hi);
}

// ---------------------------------------------------------------------------
// Gradient checking against central finite differences.
// ---------------------------------------------------------------------------

using Program = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckEntry {
  std::string input_name;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool pass = false;
  std::string message;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool pass = false;

  double max_error() const;
};

struct GradCheckOptions {
  double step = 1e-6;
  double tolerance = 1e-5;
  // When set the step for input i is step * max(1, |x_i|).
  bool scale_step = false;
};

GradCheckReport grad_check(const Program& program, std::span<const double> point,
                           std::span<const std::string> names, const GradCheckOptions& options);

/// Relative error with the absolute fallback used by grad_check.
double gradient_error(double analytic, double numeric);

void to_json(nlohmann::json& j, const GradCheckEntry& e);
void to_json(nlohmann::json& j, const GradCheckReport& r);

}  // namespace agridiff::ad
