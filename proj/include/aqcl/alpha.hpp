#pragma once

#include <span>

namespace aqcl {

// alpha = R(L) = exp(-w1 * (L / mean_length)^w2): 1 for an empty history,
// decaying as the user's click history grows.
struct AlphaSchedule {
  double w1 = 1.0;
  double w2 = 1.0;
  double mean_length = 1.0;

  void validate() const;
  double operator()(double length) const;
};

double alpha(const AlphaSchedule& schedule, double length);

// Mean of the given per-user history lengths; 1 when the mean is zero so
// the schedule stays defined on histories that are all empty.
double mean_history_length(std::span<const double> lengths);

}  // namespace aqcl
