#include "nstm/rng.hpp"

#include <cmath>
#include <numbers>

namespace nstm {

double CounterRng::gaussian() {
  ++gaussian_draws_;
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log1p(-u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace nstm
