#pragma once

#include <string>
#include <vector>

namespace percflow {

enum class SigmaKind { kConstant, kFlowStyle };

std::string to_string(SigmaKind k);
SigmaKind sigma_kind_from_string(const std::string& name);

struct ScheduleSpec {
  int num_steps = 10;
  SigmaKind sigma_kind = SigmaKind::kFlowStyle;
  double eta = 0.7;
  double delta = 1e-3;      // grid starts at 1 - delta
  double delta_min = 1e-3;  // grid ends at delta_min
  // flow_style evaluates sigma at min(s, cap). A non-positive cap selects the
  // second grid time, i.e. the first step reuses the next step's intensity.
  double sigma_time_cap = 0.0;

  bool operator==(const ScheduleSpec&) const = default;
};

// Uniform descending time grid s_T = 1 - delta > ... > s_0 = delta_min.
// Step i (1 <= i <= T) moves the state from time s_i to s_{i-1}.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(const ScheduleSpec& spec);

  const ScheduleSpec& spec() const { return spec_; }
  int num_steps() const { return spec_.num_steps; }
  // Grid time s_i for 0 <= i <= T.
  double time(int i) const;
  // dt_i = s_i - s_{i-1} > 0 for 1 <= i <= T.
  double dt(int i) const;
  // sigma(s_i)^2.
  double sigma2(int i) const;
  // sigma(s)^2 at an arbitrary time (after capping for flow_style).
  double sigma2_at(double s) const;
  double effective_cap() const { return cap_; }

 private:
  void check_index(int i) const;

  ScheduleSpec spec_;
  std::vector<double> grid_;
  double cap_;
};

// sigma(s_i)^2 * dt_i: the fixed transition variance of step i.
double schedule_sigma2dt(const NoiseSchedule& sch, int i);

}  // namespace percflow
