#include "beetlescan/spline.hpp"

#include <algorithm>

#include "beetlescan/error.hpp"

namespace beetlescan {

NaturalCubicSpline::NaturalCubicSpline(std::vector<double> xs, std::vector<double> ys)
    : x_(std::move(xs)), y_(std::move(ys))
{
    const std::size_t n = x_.size();
    if (n < 2)
        throw ValidationError("a spline needs at least two knots");
    if (y_.size() != n)
        throw ShapeError("spline knot abscissae and values differ in length");
    for (std::size_t i = 1; i < n; ++i)
        if (!(x_[i] > x_[i - 1]))
            throw ValidationError("spline knots must be strictly increasing");

    // Thomas algorithm on the interior second derivatives; m_0 = m_{n-1} = 0.
    m_.assign(n, 0.0);
    if (n == 2)
        return;
    const std::size_t k = n - 2;
    std::vector<double> diag(k), upper(k), rhs(k);
    for (std::size_t i = 1; i + 1 < n; ++i)
    {
        const double h0 = x_[i] - x_[i - 1];
        const double h1 = x_[i + 1] - x_[i];
        diag[i - 1] = 2.0 * (h0 + h1);
        upper[i - 1] = h1;
        rhs[i - 1] = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
    }
    for (std::size_t i = 1; i < k; ++i)
    {
        const double lower = x_[i + 1] - x_[i]; // h_i, sub-diagonal of row i
        const double w = lower / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    m_[k] = rhs[k - 1] / diag[k - 1];
    for (std::size_t i = k - 1; i-- > 0;)
        m_[i + 1] = (rhs[i] - upper[i] * m_[i + 2]) / diag[i];
}

double NaturalCubicSpline::operator()(double x) const
{
    const std::size_t n = x_.size();
    std::size_t hi = static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), x) - x_.begin());
    hi = std::clamp<std::size_t>(hi, 1, n - 1);
    const std::size_t lo = hi - 1;
    const double h = x_[hi] - x_[lo];
    const double b = (x - x_[lo]) / h;
    const double a = 1.0 - b;
    // Written as y_lo + b*(y_hi - y_lo) so equal knot values reproduce exactly.
    return y_[lo] + b * (y_[hi] - y_[lo]) + ((a * a * a - a) * m_[lo] + (b * b * b - b) * m_[hi]) * (h * h) / 6.0;
}

std::vector<double> spline_curve(std::span<const double> knot_values, std::size_t length)
{
    const std::size_t n = knot_values.size();
    if (n < 2)
        throw ValidationError("a spline curve needs at least two knots");
    if (length < n)
        throw ValidationError("curve length is shorter than the number of knots");
    std::vector<double> xs(n);
    const double span = static_cast<double>(length - 1);
    for (std::size_t i = 0; i < n; ++i)
        xs[i] = span * static_cast<double>(i) / static_cast<double>(n - 1);
    NaturalCubicSpline spline(std::move(xs), std::vector<double>(knot_values.begin(), knot_values.end()));
    std::vector<double> out(length);
    for (std::size_t t = 0; t < length; ++t)
        out[t] = spline(static_cast<double>(t));
    return out;
}

} // namespace beetlescan
