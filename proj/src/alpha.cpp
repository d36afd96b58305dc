#include "aqcl/alpha.hpp"

#include <cmath>
#include <numeric>

#include "aqcl/error.hpp"

namespace aqcl {

void AlphaSchedule::validate() const {
  if (!(w1 > 0.0 && w2 > 0.0)) fail(ErrorCode::Config, "alpha: w1 and w2 must be positive");
  if (!(mean_length > 0.0)) fail(ErrorCode::Config, "alpha: mean history length must be positive");
}

double AlphaSchedule::operator()(double length) const {
  if (length < 0.0) fail(ErrorCode::InvalidArgument, "alpha: negative history length");
  if (length == 0.0) return 1.0;
  return std::exp(-w1 * std::pow(length / mean_length, w2));
}

double alpha(const AlphaSchedule& schedule, double length) { return schedule(length); }

double mean_history_length(std::span<const double> lengths) {
  if (lengths.empty()) return 1.0;
  const double m = std::accumulate(lengths.begin(), lengths.end(), 0.0) /
                   static_cast<double>(lengths.size());
  return m > 0.0 ? m : 1.0;
}

}  // namespace aqcl
