#include "dynkd/schedule.hpp"

#include <cmath>

#include "dynkd/error.hpp"

namespace dynkd {

std::string_view to_string(TimeUnit unit) {
  switch (unit) {
    case TimeUnit::raw_epoch:
      return "raw_epoch";
    case TimeUnit::normalized_fraction:
      return "normalized_fraction";
  }
  return "?";
}

TimeUnit parse_time_unit(std::string_view text) {
  if (text == "raw_epoch") return TimeUnit::raw_epoch;
  if (text == "normalized_fraction") return TimeUnit::normalized_fraction;
  throw ConfigError("unknown time_unit '" + std::string(text) +
                    "' (expected raw_epoch or normalized_fraction)");
}

std::vector<std::string> validate(const GompertzSchedule& s) {
  std::vector<std::string> violations;
  if (!std::isfinite(s.beta_min) || !std::isfinite(s.beta_max) ||
      !std::isfinite(s.growth_rate_b) || !std::isfinite(s.time_shift_t0)) {
    violations.emplace_back("schedule parameters finite");
  }
  if (!(s.beta_min < s.beta_max)) violations.emplace_back("beta_min < beta_max");
  if (!(s.growth_rate_b > 0.0)) violations.emplace_back("growth_rate_b > 0");
  return violations;
}

real beta_at(const GompertzSchedule& s, real t) {
  if (const auto v = validate(s); !v.empty()) {
    std::string msg = "invalid schedule:";
    for (const auto& item : v) msg += " [" + item + "]";
    throw ConfigError(msg);
  }
  if (!std::isfinite(t)) throw InputError("schedule time must be finite");
  const real inner = std::exp(-s.growth_rate_b * (t - s.time_shift_t0));
  return s.beta_min + (s.beta_max - s.beta_min) * std::exp(-inner);
}

real epoch_time(const GompertzSchedule& s, int epoch, int total_epochs) {
  if (epoch < 1 || total_epochs < 1 || epoch > total_epochs) {
    throw InputError("epoch " + std::to_string(epoch) + " outside 1.." +
                     std::to_string(total_epochs));
  }
  if (s.time_unit == TimeUnit::raw_epoch) return static_cast<real>(epoch);
  return static_cast<real>(epoch) / static_cast<real>(total_epochs);
}

}  // namespace dynkd
