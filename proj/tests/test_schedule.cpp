#include <doctest.h>

#include <cmath>
#include <numbers>

#include "criteria.hpp"
#include "dynkd/error.hpp"
#include "dynkd/schedule.hpp"

using namespace dynkd;

namespace {

GompertzSchedule sched(real lo, real hi, real b, real t0 = 0.0) {
  return {lo, hi, b, t0, TimeUnit::raw_epoch};
}

}  // namespace

TEST_CASE("beta_at: large t saturates at beta_max") {
  CHECK(std::abs(beta_at(sched(0.1, 1.0, 0.5), 50.0) - 1.0) < 1e-6);
}

TEST_CASE("beta_at: very negative t sits at beta_min") {
  CHECK(beta_at(sched(0.1, 1.0, 0.5), -1e6) == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("beta_at: value at the shift is independent of b") {
  // 0.1 + 0.9 / e to 17 significant digits.
  const real expected = 0.43109149705429817;
  for (real b : {0.01, 0.5, 5.0, 100.0}) {
    CHECK(std::abs(beta_at(sched(0.1, 1.0, b), 0.0) - expected) < 1e-15);
  }
  CHECK(std::abs(beta_at(sched(0.1, 1.0, 2.0, 7.5), 7.5) - expected) < 1e-15);
}

TEST_CASE("validate: names each violated constraint") {
  CHECK(validate(sched(0.1, 1.0, 0.5)).empty());
  const auto inverted = validate(sched(1.0, 0.1, 0.5));
  REQUIRE(inverted.size() == 1);
  CHECK(inverted[0] == "beta_min < beta_max");
  const auto flat = validate(sched(0.1, 1.0, 0.0));
  REQUIRE(flat.size() == 1);
  CHECK(flat[0] == "growth_rate_b > 0");
  CHECK(validate(sched(1.0, 0.1, -1.0)).size() == 2);
  CHECK(validate(sched(NAN, 1.0, 1.0)).size() >= 1);
}

TEST_CASE("beta_at: errors") {
  CHECK_THROWS_AS(beta_at(sched(1.0, 0.1, 0.5), 1.0), ConfigError);
  CHECK_THROWS_AS(beta_at(sched(0.1, 1.0, 0.5), NAN), InputError);
  CHECK_THROWS_AS(beta_at(sched(0.1, 1.0, 0.5), INFINITY), InputError);
}

TEST_CASE("epoch_time: raw and normalized units") {
  GompertzSchedule s = sched(0.1, 1.0, 1.0);
  CHECK(epoch_time(s, 3, 10) == 3.0);
  s.time_unit = TimeUnit::normalized_fraction;
  CHECK(epoch_time(s, 3, 10) == doctest::Approx(0.3));
  CHECK(epoch_time(s, 10, 10) == 1.0);
  CHECK_THROWS_AS(epoch_time(s, 0, 10), InputError);
  CHECK_THROWS_AS(epoch_time(s, 11, 10), InputError);
}

TEST_CASE("time unit names round-trip") {
  for (TimeUnit u : {TimeUnit::raw_epoch, TimeUnit::normalized_fraction}) {
    CHECK(parse_time_unit(to_string(u)) == u);
  }
  CHECK_THROWS_AS(parse_time_unit("iterations"), ConfigError);
}

TEST_CASE("properties hold over random schedules") {
  const auto v = dynkd::testing::check_schedule_properties(200, 99);
  CHECK_MESSAGE(v.pass, v.detail);
}
