#pragma once

// Fixed-step classical Runge-Kutta reference integrator. Deliberately
// independent of the adaptive solver in the library: expected values in the
// kernel-flow tests are frozen from runs of this oracle at dt = 1e-6.

#include <cmath>
#include <functional>

namespace oracle {

template <typename State, typename Rhs>
State rk4_integrate(State y, double t0, double t1, double dt, Rhs&& f) {
  double t = t0;
  while (t < t1 - 1e-15) {
    const double h = std::min(dt, t1 - t);
    const State k1 = f(t, y);
    const State k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
    const State k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
    const State k4 = f(t + h, y + h * k3);
    y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t += h;
  }
  return y;
}

// The dual activation kernel of ReLU, restated independently of the library
// (arccos form): f(z) = (sqrt(1-z^2) + z*(pi - arccos(z)))/pi ... expanded to
// the arcsine form used below for clarity.
inline double relu_dual(double z) {
  if (z > 1.0) z = 1.0;
  if (z < -1.0) z = -1.0;
  return (std::sqrt(1.0 - z * z) + z * (M_PI - std::acos(z))) / M_PI;
}

}  // namespace oracle
