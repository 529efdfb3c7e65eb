#include "agridiff/autodiff.hpp"

#include <algorithm>
#include <array>
#include <sstream>

namespace agridiff::ad {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::exp: return "exp";
    case Op::ln: return "ln";
    case Op::tanh: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::relu: return "relu";
    case Op::pow_const: return "pow_const";
    case Op::min_const: return "min_const";
    case Op::max_const: return "max_const";
    case Op::softplus: return "softplus";
    case Op::sum: return "sum";
    case Op::dot: return "dot";
  }
  return "unknown";
}

namespace {

[[noreturn]] void throw_domain(Op op, const Tape* tape, const std::string& what) {
  std::ostringstream os;
  os << op_name(op) << " at node " << (tape ? tape->size() : 0) << ": " << what;
  throw DomainError(os.str());
}

void check_finite(Op op, const Tape* tape, double value) {
  if (!std::isfinite(value)) {
    std::ostringstream os;
    os << op_name(op) << " at node " << (tape ? tape->size() : 0) << " produced non-finite value "
       << value;
    throw NonFiniteError(os.str());
  }
}

Tape* common_tape(const Var& a, const Var& b) {
  Tape* ta = a.tape();
  Tape* tb = b.tape();
  if (ta && tb && ta != tb) throw ValidationError("operands recorded on different tapes");
  return ta ? ta : tb;
}

Var unary(Op op, const Var& x, double value, double dx) {
  Tape* t = x.tape();
  check_finite(op, t, value);
  if (!t) return Var(value);
  return t->push1(op, value, x, dx);
}

Var binary(Op op, const Var& a, const Var& b, double value, double da, double db) {
  Tape* t = common_tape(a, b);
  check_finite(op, t, value);
  if (!t) return Var(value);
  return t->push2(op, value, a, da, b, db);
}

}  // namespace

// ---------------------------------------------------------------------------
// Gradient
// ---------------------------------------------------------------------------

double Gradient::operator[](const Var& v) const {
  if (!v.is_active()) return 0.0;
  if (v.tape() != tape_) throw ValidationError("gradient queried for a variable on another tape");
  return adjoints_.at(v.id());
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

void Tape::clear() {
  values_.clear();
  kinds_.clear();
  edge_begin_.assign(1, 0);
  edge_parent_.clear();
  edge_partial_.clear();
}

void Tape::reserve(std::size_t nodes, std::size_t edges) {
  values_.reserve(nodes);
  kinds_.reserve(nodes);
  edge_begin_.reserve(nodes + 1);
  edge_parent_.reserve(edges);
  edge_partial_.reserve(edges);
}

std::span<const std::uint32_t> Tape::parents(std::uint32_t id) const {
  return std::span<const std::uint32_t>(edge_parent_).subspan(
      edge_begin_.at(id), edge_begin_.at(id + 1) - edge_begin_.at(id));
}

std::span<const double> Tape::partials(std::uint32_t id) const {
  return std::span<const double>(edge_partial_)
      .subspan(edge_begin_.at(id), edge_begin_.at(id + 1) - edge_begin_.at(id));
}

void Tape::add_edge(const Var& parent, double partial) {
  if (!parent.is_active()) return;
  if (parent.tape_ != this) throw ValidationError("parent recorded on a different tape");
  edge_parent_.push_back(parent.id_);
  edge_partial_.push_back(partial);
}

Var Tape::finish(Op kind, double value) {
  const auto id = static_cast<std::uint32_t>(values_.size());
  values_.push_back(value);
  kinds_.push_back(kind);
  edge_begin_.push_back(static_cast<std::uint32_t>(edge_parent_.size()));
  return Var(this, id, value);
}

Var Tape::leaf(double value) {
  check_finite(Op::leaf, this, value);
  return finish(Op::leaf, value);
}

Var Tape::push(Op kind, double value, std::span<const Var> parents,
               std::span<const double> partials) {
  for (std::size_t i = 0; i < parents.size(); ++i) add_edge(parents[i], partials[i]);
  return finish(kind, value);
}

Var Tape::push1(Op kind, double value, const Var& a, double da) {
  add_edge(a, da);
  return finish(kind, value);
}

Var Tape::push2(Op kind, double value, const Var& a, double da, const Var& b, double db) {
  add_edge(a, da);
  add_edge(b, db);
  return finish(kind, value);
}

Var Tape::elementary(Op kind, std::span<const Var> parents, double constant) {
  for (const Var& p : parents) {
    if (p.is_active() && !owns(p)) {
      throw ValidationError(std::string(op_name(kind)) + ": parent is not a node of this tape");
    }
  }
  auto need = [&](std::size_t n) {
    if (parents.size() != n) {
      throw ValidationError(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                            " parents, got " + std::to_string(parents.size()));
    }
  };
  // Promote passive operands so that the result lives on this tape.
  auto bind = [&](const Var& p) { return p.is_active() ? p : leaf(p.value()); };
  switch (kind) {
    case Op::leaf: need(0); return leaf(constant);
    case Op::add: need(2); return bind(parents[0]) + parents[1];
    case Op::sub: need(2); return bind(parents[0]) - parents[1];
    case Op::mul: need(2); return bind(parents[0]) * parents[1];
    case Op::div: need(2); return bind(parents[0]) / parents[1];
    case Op::exp: need(1); return ad::exp(bind(parents[0]));
    case Op::ln: need(1); return ad::log(bind(parents[0]));
    case Op::tanh: need(1); return ad::tanh(bind(parents[0]));
    case Op::sigmoid: need(1); return ad::sigmoid(bind(parents[0]));
    case Op::relu: need(1); return ad::relu(bind(parents[0]));
    case Op::pow_const: need(1); return ad::pow(bind(parents[0]), constant);
    case Op::min_const: need(1); return ad::min_const(bind(parents[0]), constant);
    case Op::max_const: need(1); return ad::max_const(bind(parents[0]), constant);
    case Op::softplus: need(1); return ad::softplus(bind(parents[0]), constant == 0.0 ? 1.0 : constant);
    case Op::sum: {
      if (parents.empty()) return leaf(0.0);
      std::vector<Var> bound(parents.begin(), parents.end());
      bound[0] = bind(bound[0]);
      return ad::sum(bound);
    }
    case Op::dot: {
      if (parents.size() % 2 != 0) throw ValidationError("dot: expects an even number of parents");
      const std::size_t n = parents.size() / 2;
      std::vector<Var> a(parents.begin(), parents.begin() + static_cast<std::ptrdiff_t>(n));
      if (!a.empty()) a[0] = bind(a[0]);
      return ad::dot(a, parents.subspan(n));
    }
  }
  throw ValidationError("unknown op");
}

Gradient Tape::backward(const Var& output) const {
  if (!owns(output)) throw ValidationError("backward: output is not a node of this tape");
  std::vector<double> adj(values_.size(), 0.0);
  adj[output.id()] = 1.0;
  for (std::int64_t i = output.id(); i >= 0; --i) {
    const double a = adj[static_cast<std::size_t>(i)];
    if (a == 0.0) continue;
    const std::uint32_t begin = edge_begin_[static_cast<std::size_t>(i)];
    const std::uint32_t end = edge_begin_[static_cast<std::size_t>(i) + 1];
    for (std::uint32_t k = begin; k < end; ++k) adj[edge_parent_[k]] += a * edge_partial_[k];
  }
  return Gradient(this, std::move(adj));
}

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

Var operator+(const Var& a, const Var& b) {
  return binary(Op::add, a, b, a.value() + b.value(), 1.0, 1.0);
}

Var operator-(const Var& a, const Var& b) {
  return binary(Op::sub, a, b, a.value() - b.value(), 1.0, -1.0);
}

Var operator*(const Var& a, const Var& b) {
  return binary(Op::mul, a, b, a.value() * b.value(), b.value(), a.value());
}

Var operator/(const Var& a, const Var& b) {
  if (b.value() == 0.0) throw_domain(Op::div, common_tape(a, b), "zero denominator");
  const double v = a.value() / b.value();
  return binary(Op::div, a, b, v, 1.0 / b.value(), -v / b.value());
}

Var operator-(const Var& a) { return unary(Op::sub, a, -a.value(), -1.0); }

Var exp(const Var& x) {
  const double v = std::exp(x.value());
  return unary(Op::exp, x, v, v);
}

Var log(const Var& x) {
  if (!(x.value() > 0.0)) {
    throw_domain(Op::ln, x.tape(), "non-positive argument " + std::to_string(x.value()));
  }
  return unary(Op::ln, x, std::log(x.value()), 1.0 / x.value());
}

Var tanh(const Var& x) {
  const double v = std::tanh(x.value());
  return unary(Op::tanh, x, v, 1.0 - v * v);
}

Var sigmoid(const Var& x) {
  const double v = sigmoid(x.value());
  return unary(Op::sigmoid, x, v, v * (1.0 - v));
}

Var relu(const Var& x) {
  const bool on = x.value() > 0.0;
  return unary(Op::relu, x, on ? x.value() : 0.0, on ? 1.0 : 0.0);
}

Var pow(const Var& x, double exponent) {
  const double base = x.value();
  if (base < 0.0 && exponent != std::floor(exponent)) {
    throw_domain(Op::pow_const, x.tape(), "negative base with non-integer exponent");
  }
  if (base == 0.0 && exponent < 1.0 && exponent != 0.0) {
    throw_domain(Op::pow_const, x.tape(), "derivative undefined at zero");
  }
  const double v = std::pow(base, exponent);
  const double d = exponent == 0.0 ? 0.0 : exponent * std::pow(base, exponent - 1.0);
  return unary(Op::pow_const, x, v, d);
}

Var min_const(const Var& x, double c) {
  const bool below = x.value() < c;
  return unary(Op::min_const, x, below ? x.value() : c, below ? 1.0 : 0.0);
}

Var max_const(const Var& x, double c) {
  const bool above = x.value() > c;
  return unary(Op::max_const, x, above ? x.value() : c, above ? 1.0 : 0.0);
}

Var softplus(const Var& x, double beta) {
  if (!(beta > 0.0)) throw_domain(Op::softplus, x.tape(), "sharpness must be positive");
  return unary(Op::softplus, x, softplus(x.value(), beta), sigmoid(beta * x.value()));
}

Var sum(std::span<const Var> terms) {
  Tape* t = nullptr;
  double v = 0.0;
  for (const Var& x : terms) {
    v += x.value();
    if (x.is_active()) {
      if (t && t != x.tape()) throw ValidationError("sum: operands on different tapes");
      t = x.tape();
    }
  }
  check_finite(Op::sum, t, v);
  if (!t) return Var(v);
  thread_local std::vector<double> ones;
  ones.assign(terms.size(), 1.0);
  return t->push(Op::sum, v, terms, ones);
}

Var dot(std::span<const Var> a, std::span<const Var> b, const Var& bias) {
  if (a.size() != b.size()) {
    throw ValidationError("dot: length mismatch " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
  }
  Tape* t = bias.tape();
  double v = bias.value();
  for (std::size_t i = 0; i < a.size(); ++i) {
    v += a[i].value() * b[i].value();
    for (const Var* x : {&a[i], &b[i]}) {
      if (x->is_active()) {
        if (t && t != x->tape()) throw ValidationError("dot: operands on different tapes");
        t = x->tape();
      }
    }
  }
  check_finite(Op::dot, t, v);
  if (!t) return Var(v);
  thread_local std::vector<Var> parents;
  thread_local std::vector<double> partials;
  parents.clear();
  partials.clear();
  for (std::size_t i = 0; i < a.size(); ++i) {
    parents.push_back(a[i]);
    partials.push_back(b[i].value());
    parents.push_back(b[i]);
    partials.push_back(a[i].value());
  }
  parents.push_back(bias);
  partials.push_back(1.0);
  return t->push(Op::dot, v, parents, partials);
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

double gradient_error(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  const double scale = std::abs(analytic);
  return scale < 1e-8 ? diff : diff / scale;
}

double GradCheckReport::max_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.rel_error);
  return m;
}

GradCheckReport grad_check(const Program& program, std::span<const double> point,
                           std::span<const std::string> names, const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ValidationError("grad_check: step must be positive");
  GradCheckReport report;
  report.entries.resize(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    report.entries[i].input_name = i < names.size() ? names[i] : "x" + std::to_string(i);
  }

  auto evaluate = [&](std::span<const double> x) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(x.size());
    for (double v : x) leaves.push_back(tape.leaf(v));
    return program(tape, leaves).value();
  };

  std::vector<double> analytic(point.size(), 0.0);
  try {
    Tape tape;
    std::vector<Var> leaves;
    for (double v : point) leaves.push_back(tape.leaf(v));
    const Var out = program(tape, leaves);
    if (out.is_active()) {
      const Gradient g = tape.backward(out);
      for (std::size_t i = 0; i < leaves.size(); ++i) analytic[i] = g[leaves[i]];
    }
  } catch (const std::exception& e) {
    for (auto& entry : report.entries) entry.message = std::string("forward failed: ") + e.what();
    report.pass = false;
    return report;
  }

  report.pass = true;
  std::vector<double> x(point.begin(), point.end());
  for (std::size_t i = 0; i < point.size(); ++i) {
    auto& entry = report.entries[i];
    entry.analytic = analytic[i];
    const double h = options.scale_step ? options.step * std::max(1.0, std::abs(point[i]))
                                        : options.step;
    try {
      x[i] = point[i] + h;
      const double fp = evaluate(x);
      x[i] = point[i] - h;
      const double fm = evaluate(x);
      x[i] = point[i];
      entry.numeric = (fp - fm) / (2.0 * h);
      if (!std::isfinite(entry.numeric)) throw NonFiniteError("finite difference is not finite");
      entry.rel_error = gradient_error(entry.analytic, entry.numeric);
      entry.pass = entry.rel_error <= options.tolerance;
    } catch (const std::exception& e) {
      x[i] = point[i];
      entry.pass = false;
      entry.rel_error = std::numeric_limits<double>::infinity();
      entry.message = "non-finite or invalid evaluation perturbing " + entry.input_name + ": " +
                      e.what();
    }
    report.pass = report.pass && entry.pass;
  }
  return report;
}

void to_json(nlohmann::json& j, const GradCheckEntry& e) {
  j = nlohmann::json{{"input_name", e.input_name},
                     {"analytic", e.analytic},
                     {"numeric", e.numeric},
                     {"rel_error", std::isfinite(e.rel_error) ? nlohmann::json(e.rel_error)
                                                              : nlohmann::json(nullptr)},
                     {"pass", e.pass}};
  if (!e.message.empty()) j["message"] = e.message;
}

void to_json(nlohmann::json& j, const GradCheckReport& r) {
  j = nlohmann::json{{"pass", r.pass}, {"entries", r.entries}};
}

}  // namespace agridiff::ad
