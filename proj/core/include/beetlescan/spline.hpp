#pragma once

#include <span>
#include <vector>

namespace beetlescan {

/// Interpolating cubic spline with natural boundary conditions (zero second
/// derivative at both end knots).
class NaturalCubicSpline
{
  public:
    /// Knot abscissae must be strictly increasing; at least two knots.
    NaturalCubicSpline(std::vector<double> xs, std::vector<double> ys);

    double operator()(double x) const;

    /// Second derivatives at the knots.
    const std::vector<double>& second_derivatives() const noexcept { return m_; }

  private:
    std::vector<double> x_, y_, m_;
};

/// Evaluates the natural spline through `knot_values`, placed at evenly
/// spaced positions over [0, length - 1], at every integer position.
std::vector<double> spline_curve(std::span<const double> knot_values, std::size_t length);

} // namespace beetlescan
