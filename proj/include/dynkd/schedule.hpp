#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dynkd/tensor.hpp"

namespace dynkd {

enum class TimeUnit {
  raw_epoch,            // t is the 1-based epoch index
  normalized_fraction,  // t = epoch / total_epochs, in (0, 1]
};

std::string_view to_string(TimeUnit unit);
TimeUnit parse_time_unit(std::string_view text);

/// Gompertz growth curve for the distillation weight:
///
///   beta(t) = beta_min + (beta_max - beta_min) * exp(-exp(-b * (t - t0)))
///
/// Slow growth before t0, steepest rise just after it, saturation at beta_max.
/// With t0 = 0 the curve already sits at beta_min + (beta_max - beta_min) / e at
/// the start of training; shift t0 to about a third of the run for a slow start.
struct GompertzSchedule {
  real beta_min = 0.1;
  real beta_max = 1.0;
  real growth_rate_b = 5.0;
  real time_shift_t0 = 0.0;
  TimeUnit time_unit = TimeUnit::normalized_fraction;
};

/// Names every violated constraint; empty means the schedule is usable.
std::vector<std::string> validate(const GompertzSchedule& schedule);

/// Throws ConfigError for an invalid schedule and InputError for non-finite t.
real beta_at(const GompertzSchedule& schedule, real t);

/// Time coordinate of a 1-based epoch under the schedule's time unit.
real epoch_time(const GompertzSchedule& schedule, int epoch, int total_epochs);

}  // namespace dynkd
