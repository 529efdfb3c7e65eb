#include "agridiff/gradsuite.hpp"

#include <cmath>

#include "agridiff/data.hpp"
#include "agridiff/hybrid.hpp"
#include "agridiff/neural.hpp"
#include "agridiff/pbm.hpp"
#include "agridiff/training.hpp"

namespace agridiff::gradsuite {

using Kind = Recipe::Kind;

namespace {

double apply_instr(const Recipe::Instr& in, const std::vector<double>& v) {
  // evaluate the instruction alone, over its own arguments as inputs
  Recipe single;
  std::vector<double> a;
  Recipe::Instr local = in;
  for (std::size_t i = 0; i < in.args.size(); ++i) {
    a.push_back(v[in.args[i]]);
    local.args[i] = i;
  }
  single.inputs = a.size();
  single.code.push_back(std::move(local));
  return evaluate<double>(single, std::span<const double>(a));
}

}  // namespace

template <class Real>
Real evaluate(const Recipe& r, std::span<const Real> x) {
  std::vector<Real> v(x.begin(), x.end());
  v.reserve(r.inputs + r.code.size());
  for (const auto& in : r.code) {
    const auto& a = in.args;
    Real out = 0.0;
    switch (in.kind) {
      case Kind::add: out = v[a[0]] + v[a[1]]; break;
      case Kind::sub: out = v[a[0]] - v[a[1]]; break;
      case Kind::mul: out = v[a[0]] * v[a[1]]; break;
      case Kind::div: out = v[a[0]] / v[a[1]]; break;
      case Kind::exp: out = ad::exp(v[a[0]]); break;
      case Kind::ln: out = ad::log(v[a[0]]); break;
      case Kind::tanh: out = ad::tanh(v[a[0]]); break;
      case Kind::sigmoid: out = ad::sigmoid(v[a[0]]); break;
      case Kind::relu: out = ad::relu(v[a[0]]); break;
      case Kind::pow_const: out = ad::pow(v[a[0]], in.constant); break;
      case Kind::min_const: out = ad::min_const(v[a[0]], in.constant); break;
      case Kind::max_const: out = ad::max_const(v[a[0]], in.constant); break;
      case Kind::softplus: out = ad::softplus(v[a[0]], in.constant); break;
      case Kind::sum: {
        std::vector<Real> t;
        for (auto i : a) t.push_back(v[i]);
        out = ad::sum(std::span<const Real>(t));
        break;
      }
      case Kind::dot: {
        const std::size_t k = a.size() / 2;
        std::vector<Real> p, q;
        for (std::size_t i = 0; i < k; ++i) {
          p.push_back(v[a[i]]);
          q.push_back(v[a[k + i]]);
        }
        out = ad::dot(std::span<const Real>(p), std::span<const Real>(q), Real(in.constant));
        break;
      }
    }
    v.push_back(out);
  }
  return v.back();
}

template double evaluate<double>(const Recipe&, std::span<const double>);
template ad::Var evaluate<ad::Var>(const Recipe&, std::span<const ad::Var>);

Recipe random_program(std::mt19937_64& rng, std::size_t inputs, std::size_t ops,
                      std::vector<double>& point) {
  std::uniform_real_distribution<double> unit(-2.0, 2.0);
  point.clear();
  for (std::size_t i = 0; i < inputs; ++i) point.push_back(unit(rng));

  Recipe r;
  r.inputs = inputs;
  std::vector<double> vals = point;
  std::uniform_int_distribution<int> pick_kind(0, 14);
  auto pick_slot = [&]() {
    // favour recent slots so programs grow deep rather than wide
    const std::size_t n = vals.size();
    const std::size_t window = std::min<std::size_t>(n, 6);
    std::uniform_int_distribution<std::size_t> recent(n - window, n - 1);
    std::uniform_int_distribution<std::size_t> any(0, n - 1);
    return std::bernoulli_distribution(0.7)(rng) ? recent(rng) : any(rng);
  };

  const std::size_t body = ops > 1 ? ops - 1 : 1;
  while (r.code.size() < body) {
    Recipe::Instr in;
    in.kind = static_cast<Kind>(pick_kind(rng));
    const std::size_t a = pick_slot();
    const double x = vals[a];
    switch (in.kind) {
      case Kind::add:
      case Kind::sub:
      case Kind::mul:
        in.args = {a, pick_slot()};
        break;
      case Kind::div: {
        const std::size_t b = pick_slot();
        if (std::abs(vals[b]) < 0.1) continue;
        in.args = {a, b};
        break;
      }
      case Kind::exp:
        if (x > 5.0 || x < -6.0) continue;
        in.args = {a};
        break;
      case Kind::ln:
        if (x < 0.1) continue;
        in.args = {a};
        break;
      case Kind::tanh:
        // saturated tails have derivatives below what central differences
        // resolve at h = 1e-6, so keep out of them like the domain edges
        if (std::abs(x) > 3.0) continue;
        in.args = {a};
        break;
      case Kind::sigmoid:
        if (std::abs(x) > 6.0) continue;
        in.args = {a};
        break;
      case Kind::relu:
        if (std::abs(x) < 0.1) continue;
        in.args = {a};
        break;
      case Kind::pow_const: {
        if (x < 0.1) continue;
        const double exps[] = {2.0, 3.0, 0.5, 1.5, -1.0};
        in.constant = exps[std::uniform_int_distribution<int>(0, 4)(rng)];
        in.args = {a};
        break;
      }
      case Kind::min_const:
      case Kind::max_const:
        in.constant = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
        if (std::abs(x - in.constant) < 0.1) continue;
        in.args = {a};
        break;
      case Kind::softplus:
        in.constant = std::bernoulli_distribution(0.5)(rng) ? 1.0 : 3.0;
        if (in.constant * x < -6.0) continue;
        in.args = {a};
        break;
      case Kind::sum: {
        const int n = std::uniform_int_distribution<int>(2, 4)(rng);
        in.args = {a};
        for (int i = 1; i < n; ++i) in.args.push_back(pick_slot());
        break;
      }
      case Kind::dot: {
        const int k = std::uniform_int_distribution<int>(1, 3)(rng);
        in.args = {a};
        for (int i = 1; i < 2 * k; ++i) in.args.push_back(pick_slot());
        in.constant = unit(rng);
        break;
      }
    }
    const double value = apply_instr(in, vals);
    if (!std::isfinite(value) || std::abs(value) > 1e3) continue;
    vals.push_back(value);
    r.code.push_back(std::move(in));
  }
  Recipe::Instr out;
  out.kind = Kind::sum;
  for (std::size_t i = vals.size() >= 4 ? vals.size() - 4 : 0; i < vals.size(); ++i) {
    out.args.push_back(i);
  }
  if (out.args.size() == 1) out.args.push_back(out.args[0]);
  r.code.push_back(std::move(out));
  return r;
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

namespace {

using ad::Var;

std::vector<std::string> indexed(const std::string& prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + "[" + std::to_string(i) + "]");
  return out;
}

std::vector<double> season_weather_features(std::span<const pbm::DailyWeather> days,
                                            std::size_t& steps) {
  steps = days.size();
  std::vector<double> f;
  for (const auto& w : days) {
    f.push_back((w.t_min - 5.0) / 5.0);
    f.push_back((w.t_max - 15.0) / 5.0);
    f.push_back((w.radiation - 15.0) / 5.0);
    f.push_back(w.precip / 5.0);
  }
  return f;
}

template <class Real>
nn::Sequence<Real> as_sequence(const std::vector<double>& f, std::size_t steps, std::size_t width) {
  nn::Sequence<Real> s(steps, width);
  for (std::size_t i = 0; i < f.size(); ++i) s.data[i] = f[i];
  return s;
}

}  // namespace

std::vector<SuiteCase> run_gradient_suite(std::uint64_t seed, const SuiteOptions& options) {
  std::vector<SuiteCase> out;
  std::mt19937_64 rng(data::derive_seed(seed, "gradsuite"));

  for (std::size_t c = 0; c < options.random_programs; ++c) {
    std::vector<double> point;
    const auto n_inputs = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
    const auto n_ops = std::uniform_int_distribution<std::size_t>(5, 50)(rng);
    const Recipe recipe = random_program(rng, n_inputs, n_ops, point);
    const ad::Program prog = [&recipe](ad::Tape&, std::span<const Var> x) {
      return evaluate<Var>(recipe, x);
    };
    out.push_back({"random_program_" + std::to_string(c),
                   ad::grad_check(prog, point, indexed("x", point.size()), options.check)});
  }

  const auto site = data::default_sites().front();
  const auto weather = data::generate_weather(site, 1, data::derive_seed(seed, "gradsuite/weather"));
  const auto year = weather.year(0);

  if (options.pbm) {
    std::vector<double> point;
    std::vector<std::string> names;
    const pbm::CropParams defaults;
    for (std::size_t i = 0; i < pbm::kParamCount; ++i) {
      point.push_back(defaults[static_cast<pbm::ParamId>(i)]);
      names.emplace_back(pbm::param_name(static_cast<pbm::ParamId>(i)));
    }
    const ad::Program season = [year](ad::Tape&, std::span<const Var> x) {
      pbm::BasicCropParams<Var> p;
      for (std::size_t i = 0; i < pbm::kParamCount; ++i) p[static_cast<pbm::ParamId>(i)] = x[i];
      const auto traj = pbm::simulate<Var>(pbm::initial_state(p), year, p);
      const auto& last = traj.back();
      return last.w_total * 1e-3 + last.soil_water * 1e-2 + last.lai + last.tt_cum * 1e-3;
    };
    out.push_back({"pbm_365_day_season", ad::grad_check(season, point, names, options.check)});

    const ad::Program harvest = [year](ad::Tape&, std::span<const Var> x) {
      pbm::BasicCropParams<Var> p;
      for (std::size_t i = 0; i < pbm::kParamCount; ++i) p[static_cast<pbm::ParamId>(i)] = x[i];
      return pbm::simulate_season<Var>(year, p).yield * 1e-3;
    };
    out.push_back({"pbm_harvest_yield", ad::grad_check(harvest, point, names, options.check)});
  }

  if (options.lstm) {
    const auto spec = nn::LstmSpec::make(3, 4, 1);
    const auto w = nn::init_weights(spec, data::derive_seed(seed, "gradsuite/lstm"));
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> xs;
    for (int i = 0; i < 30; ++i) xs.push_back(n01(rng));
    const ad::Program lstm = [spec, xs](ad::Tape&, std::span<const Var> params) {
      const auto seq = as_sequence<Var>(xs, 10, 3);
      const auto y = nn::lstm_forward<Var>(spec, params, seq, nn::OutputMode::per_step);
      std::vector<Var> sq;
      for (const auto& v : y.data) sq.push_back(v * v);
      return ad::sum(std::span<const Var>(sq));
    };
    out.push_back({"lstm_T10", ad::grad_check(lstm, w.params, indexed("w", w.params.size()),
                                              options.check)});
  }

  if (options.hybrids) {
    const std::span<const pbm::DailyWeather> toy = year.subspan(119, 30);
    const pbm::CropParams base;
    const auto bounds = training::default_param_bounds();
    // targets from a perturbed simulator run
    pbm::CropParams truth = base;
    truth.rue = 3.3;
    std::vector<double> observed;
    for (const auto& s : pbm::simulate<double>(pbm::initial_state(truth), toy, truth)) {
      observed.push_back(s.w_total * 1e-2);
    }

    {
      const auto spec = hybrid::embedded_stress_spec(4);
      auto w = nn::init_weights(spec, data::derive_seed(seed, "gradsuite/embedded"));
      std::vector<double> point = training::raw_from_params(base, bounds);
      const std::size_t nb = point.size();
      point.insert(point.end(), w.params.begin(), w.params.end());
      auto names = indexed("theta_raw", nb);
      for (const auto& n : indexed("mlp", w.params.size())) names.push_back(n);
      const ad::Program prog = [=](ad::Tape&, std::span<const Var> x) {
        const auto p = training::apply_bounds<Var>(base, bounds, x.subspan(0, nb));
        const auto traj = hybrid::embedded_forward<Var>(spec, x.subspan(nb), pbm::initial_state(p), toy, p);
        std::vector<Var> pred;
        for (const auto& s : traj) pred.push_back(s.w_total * 1e-2);
        return training::mse_loss<Var, double>(pred, observed);
      };
      out.push_back({"hybrid_EmbeddedNnPbm", ad::grad_check(prog, point, names, options.check)});
    }

    std::size_t steps = 0;
    const auto features = season_weather_features(toy, steps);
    {
      const auto spec = nn::LstmSpec::make(4, 4, 2);
      const auto w = nn::init_weights(spec, data::derive_seed(seed, "gradsuite/mass"));
      const ad::Program prog = [=](ad::Tape&, std::span<const Var> x) {
        const auto out = hybrid::mass_balance_forward<Var>(spec, x, as_sequence<Var>(features, steps, 4));
        const Var data = training::mse_loss<Var, double>(out.biomass, observed);
        return hybrid::mass_balance_loss<Var>(data, out.penalty, 0.1);
      };
      out.push_back({"hybrid_MassBalanceDl",
                     ad::grad_check(prog, w.params, indexed("lstm", w.params.size()), options.smooth_check)});
    }
    {
      const auto spec = hybrid::dpl_spec(3, bounds.size(), {4});
      const auto w = nn::init_weights(spec, data::derive_seed(seed, "gradsuite/dpl"));
      const auto sites = data::default_sites();
      const ad::Program prog = [=](ad::Tape&, std::span<const Var> x) {
        std::vector<Var> sq;
        for (const auto& s : sites) {
          const auto p = hybrid::dpl_parameterize<Var>(spec, x, hybrid::normalize_attributes(s), base, bounds);
          const auto traj = pbm::simulate<Var>(pbm::initial_state(p), toy, p);
          for (std::size_t t = 0; t < traj.size(); ++t) {
            const Var d = traj[t].w_total * 1e-2 - observed[t];
            sq.push_back(d * d);
          }
        }
        return ad::sum(std::span<const Var>(sq)) * (1.0 / static_cast<double>(sq.size()));
      };
      out.push_back({"hybrid_SurrogateDpl",
                     ad::grad_check(prog, w.params, indexed("mlp", w.params.size()), options.check)});
    }
    {
      const auto spec = nn::LstmSpec::make(4, 4, 1);
      const auto w = nn::init_weights(spec, data::derive_seed(seed, "gradsuite/physics"));
      hybrid::HybridModel model;
      model.kind = hybrid::HybridKind::PhysicsResidualDl;
      model.lambda_physics = 0.1;
      std::vector<double> obs_raw;
      for (double o : observed) obs_raw.push_back(o * 100.0);
      const ad::Program prog = [=](ad::Tape&, std::span<const Var> x) {
        const auto y = nn::lstm_forward<Var>(spec, x, as_sequence<Var>(features, steps, 4),
                                             nn::OutputMode::per_step);
        // predictions centred on the observations keep the loss near the
        // size of its gradients
        std::vector<Var> pred;
        for (std::size_t t = 0; t < y.data.size(); ++t) pred.push_back(obs_raw[t] + y.data[t] * 100.0);
        const auto loss = hybrid::physics_residual_loss<Var>(model, pred, obs_raw, toy, base);
        return loss.total * 1e-4;
      };
      out.push_back({"hybrid_PhysicsResidualDl",
                     ad::grad_check(prog, w.params, indexed("lstm", w.params.size()), options.check)});
    }
  }
  return out;
}

}  // namespace agridiff::gradsuite
