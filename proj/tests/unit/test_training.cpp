#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "agridiff/data.hpp"
#include "agridiff/training.hpp"

using namespace agridiff;
using ad::Var;
using training::AdamConfig;
using training::EarlyStopConfig;

namespace {

// (x - target)^2 summed over coordinates; the test loss can be scripted.
class Quadratic final : public training::Objective {
 public:
  explicit Quadratic(std::vector<double> target) : target_(std::move(target)) {}
  std::vector<double> scripted_test;  // used in order when non-empty
  Var train_loss(ad::Tape&, std::span<const Var> p) override {
    std::vector<Var> sq;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Var d = p[i] - target_[i];
      sq.push_back(d * d);
    }
    return ad::sum(sq);
  }
  double test_loss(std::span<const double> p) override {
    if (!scripted_test.empty()) {
      const double v = scripted_test[std::min(calls_, scripted_test.size() - 1)];
      ++calls_;
      return v;
    }
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - target_[i]) * (p[i] - target_[i]);
    return s;
  }

 private:
  std::vector<double> target_;
  std::size_t calls_ = 0;
};

class Exploding final : public training::Objective {
 public:
  Var train_loss(ad::Tape&, std::span<const Var> p) override {
    return p[0] * p[0] * (++calls_ >= 3 ? INFINITY : 1.0);
  }
  double test_loss(std::span<const double> p) override { return p[0] * p[0]; }
  int calls_ = 0;
};

}  // namespace

TEST_CASE("mse loss") {
  const std::vector<double> a{1.0, 2.0};
  const std::vector<double> z{0.0, 0.0};
  CHECK(training::mse_loss<double, double>(a, a) == 0.0);
  CHECK(training::mse_loss<double, double>(a, z) == 2.5);
  CHECK_THROWS_AS((training::mse_loss<double, double>(a, std::vector<double>{1.0})), ValidationError);
  CHECK_THROWS_AS((training::mse_loss<double, double>({}, {})), ValidationError);
}

TEST_CASE("adam: first step against a hand computation") {
  auto s = training::OptimizerState::init(2, AdamConfig{0.1});
  std::vector<double> p{1.0, -1.0};
  const std::vector<double> g{2.0, -0.5};
  training::adam_step(s, p, g);
  // bias-corrected moments equal g and g^2 after one step
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(-1.0 + 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(s.step_count == 1);
  CHECK(s.first_moment[0] == doctest::Approx(0.2));
  CHECK(s.second_moment[0] == doctest::Approx(0.004));

  // a second step, written out
  const std::vector<double> g2{1.0, 0.0};
  const double m = 0.9 * 0.2 + 0.1 * 1.0;
  const double v = 0.999 * 0.004 + 0.001 * 1.0;
  const double mh = m / (1.0 - 0.81);
  const double vh = v / (1.0 - 0.999 * 0.999);
  const double before = p[0];
  training::adam_step(s, p, g2);
  CHECK(p[0] == doctest::Approx(before - 0.1 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-13));
}

TEST_CASE("adam: zero gradients keep parameters and decay moments") {
  auto s = training::OptimizerState::init(1, AdamConfig{0.1});
  std::vector<double> p{3.0};
  training::adam_step(s, p, std::vector<double>{1.0});
  const double after_first = p[0];
  const double m = s.first_moment[0];
  auto fresh = training::OptimizerState::init(1, AdamConfig{0.1});
  std::vector<double> q{3.0};
  training::adam_step(fresh, q, std::vector<double>{0.0});
  CHECK(q[0] == 3.0);
  training::adam_step(s, p, std::vector<double>{0.0});
  CHECK(s.first_moment[0] == doctest::Approx(0.9 * m));
  CHECK(p[0] < after_first);  // momentum still moves it
}

TEST_CASE("adam: determinism and non-finite gradients") {
  auto a = training::OptimizerState::init(3, {});
  auto b = training::OptimizerState::init(3, {});
  std::vector<double> pa{1, 2, 3};
  std::vector<double> pb{1, 2, 3};
  const std::vector<double> g{0.3, -0.1, 7.0};
  training::adam_step(a, pa, g);
  training::adam_step(b, pb, g);
  CHECK(pa == pb);

  const std::vector<std::string> names{"rue", "k_ext", "t_base"};
  try {
    training::adam_step(a, pa, std::vector<double>{0.0, NAN, 0.0}, names);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("k_ext") != std::string::npos);
  }
}

TEST_CASE("train: converges on a quadratic") {
  Quadratic q({1.5, -0.5});
  const auto r = training::train(q, {0.0, 0.0}, AdamConfig{0.02}, EarlyStopConfig{100, 0.0, 3000});
  CHECK_FALSE(r.aborted);
  CHECK(r.best_weights[0] == doctest::Approx(1.5).epsilon(1e-3));
  CHECK(r.best_weights[1] == doctest::Approx(-0.5).epsilon(1e-3));
  CHECK(r.train_loss_curve.size() == r.stopped_epoch);
  CHECK(r.test_loss_curve.size() == r.stopped_epoch);
  CHECK(r.best_test_loss() == *std::min_element(r.test_loss_curve.begin(), r.test_loss_curve.end()));
}

TEST_CASE("train: early stopping rules") {
  {
    Quadratic q({1.0});
    q.scripted_test = {5.0, 4.0, 4.5, 3.0};
    const auto r = training::train(q, {0.0}, AdamConfig{0.01}, EarlyStopConfig{0, 0.0, 100});
    CHECK(r.stopped_epoch == 3);
    CHECK(r.best_epoch == 2);
  }
  {
    Quadratic q({1.0});
    q.scripted_test = {5.0, 4.0, 4.5, 4.2, 4.1, 3.0};
    const auto r = training::train(q, {0.0}, AdamConfig{0.01}, EarlyStopConfig{2, 0.0, 100});
    CHECK(r.stopped_epoch == 5);
    CHECK(r.best_epoch == 2);
  }
  {
    // improvements smaller than min_delta do not reset patience
    Quadratic q({1.0});
    q.scripted_test = {5.0, 4.99, 4.98, 4.97};
    const auto r = training::train(q, {0.0}, AdamConfig{0.01}, EarlyStopConfig{1, 0.1, 100});
    CHECK(r.stopped_epoch == 3);
    CHECK(r.best_epoch == 3);
  }
  {
    Quadratic q({1.0});
    const auto r = training::train(q, {0.0}, AdamConfig{0.01}, EarlyStopConfig{5, 0.0, 1});
    CHECK(r.stopped_epoch == 1);
    CHECK(r.best_epoch == 1);
  }
  Quadratic q({1.0});
  CHECK_THROWS_AS(training::train(q, {0.0}, {}, EarlyStopConfig{5, 0.0, 0}), ValidationError);
}

TEST_CASE("train: non-finite loss aborts with the report so far") {
  Exploding e;
  const auto r = training::train(e, {1.0}, AdamConfig{0.1}, EarlyStopConfig{5, 0.0, 10});
  CHECK(r.aborted);
  CHECK(r.stopped_epoch == 2);
  CHECK(r.train_loss_curve.size() == 2);
  CHECK(r.message.find("epoch 3") != std::string::npos);
}

TEST_CASE("loss curve CSV and JSON") {
  Quadratic q({1.0});
  const auto r = training::train(q, {0.0}, AdamConfig{0.1}, EarlyStopConfig{5, 0.0, 3});
  std::ostringstream os;
  training::write_loss_csv(os, r);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "epoch,train_loss,test_loss");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 3);
  const nlohmann::json j = r;
  CHECK(j.at("best_epoch") == r.best_epoch);
  CHECK(j.at("test_loss_curve").size() == 3);
}

TEST_CASE("bounded parameters") {
  const training::Bound b{1.0, 5.0};
  CHECK(b.squash(0.0) == 3.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  for (int i = 0; i < 1000; ++i) {
    const double v = b.squash(u(rng));
    CHECK(v >= 1.0);
    CHECK(v <= 5.0);
  }
  for (double v : {1.5, 2.0, 4.9}) CHECK(b.squash(b.unsquash(v)) == doctest::Approx(v).epsilon(1e-12));
  const training::Bound pin{3.0, 3.0};
  CHECK(pin.pinned());
  CHECK(pin.squash(17.0) == 3.0);

  const auto bounds = training::default_param_bounds();
  REQUIRE(bounds.size() == 4);
  CHECK(bounds[0].id == pbm::ParamId::rue);
  CHECK(bounds[0].bound.low == 1.0);
  CHECK(bounds[0].bound.high == 5.0);
  CHECK(bounds[3].id == pbm::ParamId::s_max);
  const pbm::CropParams base;
  const auto raw = training::raw_from_params(base, bounds);
  const auto back = training::apply_bounds<double>(base, bounds, std::span<const double>(raw));
  for (const auto& pb : bounds) CHECK(back[pb.id] == doctest::Approx(base[pb.id]).epsilon(1e-12));
}

TEST_CASE("calibration") {
  const auto series = data::generate_weather(data::default_sites()[1], 6, 12);
  pbm::CropParams truth;
  truth.rue = 3.6;
  training::SeasonData train;
  for (std::size_t y = 0; y < 6; ++y) {
    train.years.push_back(series.year(y));
    train.observed.push_back(pbm::simulate_season<double>(series.year(y), truth).yield);
  }
  const std::vector<training::ParamBound> rue_only{{pbm::ParamId::rue, {1.0, 5.0}}};

  SUBCASE("already optimal") {
    const auto r = training::calibrate_pbm(truth, rue_only, train, nullptr);
    REQUIRE_FALSE(r.loss_trace.empty());
    CHECK(r.loss_trace.front() < 1e-12);
    CHECK(r.params.rue == doctest::Approx(3.6).epsilon(1e-6));
  }
  SUBCASE("single free rue is recovered") {
    pbm::CropParams init;
    init.rue = 2.0;
    const auto r = training::calibrate_pbm(init, rue_only, train, nullptr);
    CHECK(std::abs(r.params.rue - 3.6) / 3.6 < 0.01);
    CHECK(r.params.k_ext == init.k_ext);
  }
  SUBCASE("pinned bounds return the pinned value") {
    const std::vector<training::ParamBound> pinned{{pbm::ParamId::rue, {2.5, 2.5}}};
    const auto r = training::calibrate_pbm(pbm::CropParams{}, pinned, train, nullptr);
    CHECK(r.params.rue == 2.5);
  }
  SUBCASE("misaligned observations are rejected") {
    auto bad = train;
    bad.observed.pop_back();
    CHECK_THROWS_AS(training::calibrate_pbm(truth, rue_only, bad, nullptr), ValidationError);
  }
}
