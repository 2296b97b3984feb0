#include "percflow/schedule.hpp"

#include <algorithm>

#include "percflow/errors.hpp"

namespace percflow {

std::string to_string(SigmaKind k) {
  return k == SigmaKind::kConstant ? "constant" : "flow_style";
}

SigmaKind sigma_kind_from_string(const std::string& name) {
  if (name == "constant") return SigmaKind::kConstant;
  if (name == "flow_style") return SigmaKind::kFlowStyle;
  throw ValueError("unknown sigma kind '" + name +
                   "' (expected constant or flow_style)");
}

NoiseSchedule::NoiseSchedule(const ScheduleSpec& spec) : spec_(spec) {
  if (spec.num_steps <= 0) throw ScheduleError("num_steps must be positive");
  if (!(spec.eta > 0.0)) throw ScheduleError("eta must be positive");
  const double hi = 1.0 - spec.delta;
  const double lo = spec.delta_min;
  if (!(lo > 0.0) || !(hi < 1.0) || !(lo < hi)) {
    throw ScheduleError("grid bounds must satisfy 0 < delta_min < 1 - delta < 1");
  }
  grid_.resize(spec.num_steps + 1);
  for (int i = 0; i <= spec.num_steps; ++i) {
    grid_[i] = lo + (hi - lo) * static_cast<double>(i) / spec.num_steps;
  }
  grid_.back() = hi;
  if (spec.sigma_time_cap > 0.0) {
    if (spec.sigma_time_cap >= 1.0) {
      throw ScheduleError("sigma_time_cap must be below 1");
    }
    cap_ = spec.sigma_time_cap;
  } else {
    cap_ = spec.num_steps >= 2 ? grid_[spec.num_steps - 1] : hi;
  }
}

void NoiseSchedule::check_index(int i) const {
  if (i < 1 || i > spec_.num_steps) {
    throw ScheduleError("step index " + std::to_string(i) +
                        " outside [1, " + std::to_string(spec_.num_steps) + "]");
  }
}

double NoiseSchedule::time(int i) const {
  if (i < 0 || i > spec_.num_steps) {
    throw ScheduleError("grid index " + std::to_string(i) + " out of range");
  }
  return grid_[i];
}

double NoiseSchedule::dt(int i) const {
  check_index(i);
  return grid_[i] - grid_[i - 1];
}

double NoiseSchedule::sigma2_at(double s) const {
  const double eta2 = spec_.eta * spec_.eta;
  if (spec_.sigma_kind == SigmaKind::kConstant) return eta2;
  const double sc = std::min(s, cap_);
  return eta2 * sc / (1.0 - sc);
}

double NoiseSchedule::sigma2(int i) const {
  check_index(i);
  return sigma2_at(grid_[i]);
}

double schedule_sigma2dt(const NoiseSchedule& sch, int i) {
  return sch.sigma2(i) * sch.dt(i);
}

}  // namespace percflow
