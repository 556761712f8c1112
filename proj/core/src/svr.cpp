#include "beetlescan/svr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "beetlescan/error.hpp"
#include "beetlescan/spectra.hpp"
#include "binary_io.hpp"

namespace beetlescan {

namespace {

constexpr auto kSvrMagic = detail::make_magic("SVRM");

void check_training_data(std::span<const FeatureVector> inputs, std::span<const double> targets)
{
    if (inputs.size() < 2)
        throw ValidationError("SVR fitting needs at least two samples");
    if (inputs.size() != targets.size())
        throw ShapeError("SVR inputs and targets differ in count");
    const std::size_t d = inputs.front().size();
    if (d == 0)
        throw ShapeError("SVR inputs are empty vectors");
    for (const auto& x : inputs)
    {
        if (x.size() != d)
            throw ShapeError("SVR inputs differ in dimension");
        for (double v : x)
            if (!std::isfinite(v))
                throw ValidationError("SVR input contains a non-finite value");
    }
    for (double t : targets)
        if (!std::isfinite(t))
            throw ValidationError("SVR target is not finite");
}

Eigen::MatrixXd kernel_matrix(std::span<const FeatureVector> inputs, double sigma)
{
    const auto n = static_cast<Eigen::Index>(inputs.size());
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        k(i, i) = 1.0;
        for (Eigen::Index j = 0; j < i; ++j)
            k(i, j) = k(j, i) = rbf_kernel(inputs[static_cast<std::size_t>(i)], inputs[static_cast<std::size_t>(j)], sigma);
    }
    return k;
}

// Dual variables laid out as beta = [alpha; alpha_star] with signs y = [+1; -1].
struct Dual
{
    std::size_t n;
    const Eigen::MatrixXd& k;
    std::vector<double> p;

    double sign(std::size_t t) const { return t < n ? 1.0 : -1.0; }
    std::size_t sample(std::size_t t) const { return t < n ? t : t - n; }
    double q(std::size_t s, std::size_t t) const
    {
        return sign(s) * sign(t) * k(static_cast<Eigen::Index>(sample(s)), static_cast<Eigen::Index>(sample(t)));
    }
};

Dual make_dual(const Eigen::MatrixXd& k, std::span<const double> targets, double epsilon)
{
    const std::size_t n = targets.size();
    Dual d{n, k, std::vector<double>(2 * n)};
    for (std::size_t i = 0; i < n; ++i)
    {
        d.p[i] = epsilon - targets[i];
        d.p[i + n] = epsilon + targets[i];
    }
    return d;
}

bool in_up(double y, double beta, double c) { return y > 0 ? beta < c : beta > 0.0; }
bool in_low(double y, double beta, double c) { return y > 0 ? beta > 0.0 : beta < c; }

struct Violation
{
    std::ptrdiff_t i = -1, j = -1;
    double up = -std::numeric_limits<double>::infinity();
    double low = std::numeric_limits<double>::infinity();
    double gap() const { return up - low; }
};

Violation max_violating_pair(const Dual& d, const std::vector<double>& beta, const std::vector<double>& grad, double c)
{
    Violation v;
    for (std::size_t t = 0; t < 2 * d.n; ++t)
    {
        const double y = d.sign(t);
        const double score = -y * grad[t];
        if (in_up(y, beta[t], c) && score > v.up)
        {
            v.up = score;
            v.i = static_cast<std::ptrdiff_t>(t);
        }
        if (in_low(y, beta[t], c) && score < v.low)
        {
            v.low = score;
            v.j = static_cast<std::ptrdiff_t>(t);
        }
    }
    return v;
}

std::vector<double> full_gradient(const Dual& d, std::span<const double> beta)
{
    std::vector<double> g(d.p);
    for (std::size_t s = 0; s < 2 * d.n; ++s)
        for (std::size_t t = 0; t < 2 * d.n; ++t)
            if (beta[t] != 0.0)
                g[s] += d.q(s, t) * beta[t];
    return g;
}

std::vector<double> stack(std::span<const double> alpha, std::span<const double> alpha_star, std::size_t n)
{
    if (alpha.size() != n || alpha_star.size() != n)
        throw ShapeError("dual variable vectors do not match the sample count");
    std::vector<double> beta(alpha.begin(), alpha.end());
    beta.insert(beta.end(), alpha_star.begin(), alpha_star.end());
    return beta;
}

} // namespace

double rbf_kernel(std::span<const double> u, std::span<const double> v, double sigma)
{
    if (u.size() != v.size())
        throw ShapeError("rbf kernel: vectors differ in length");
    if (!(sigma > 0.0))
        throw ValidationError("rbf kernel width must be positive");
    double d2 = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i)
    {
        const double d = u[i] - v[i];
        d2 += d * d;
    }
    return std::exp(-d2 / (2.0 * sigma * sigma));
}

void SvrConfig::validate() const
{
    if (!(c > 0.0) || !std::isfinite(c))
        throw ValidationError("SVR C must be positive");
    if (!(sigma > 0.0) || !std::isfinite(sigma))
        throw ValidationError("SVR kernel width must be positive");
    if (!(epsilon >= 0.0))
        throw ValidationError("SVR epsilon must be non-negative");
    if (!(tol > 0.0))
        throw ValidationError("SVR tolerance must be positive");
    if (max_passes == 0)
        throw ValidationError("SVR iteration bound must be positive");
}

SvrFit svr_fit(std::span<const FeatureVector> inputs, std::span<const double> targets, const SvrConfig& config)
{
    config.validate();
    check_training_data(inputs, targets);
    const std::size_t n = inputs.size();
    const double c = config.c;
    const Eigen::MatrixXd k = kernel_matrix(inputs, config.sigma);
    const Dual d = make_dual(k, targets, config.epsilon);

    std::vector<double> beta(2 * n, 0.0);
    std::vector<double> grad = d.p;

    SvrFit fit;
    Violation v = max_violating_pair(d, beta, grad, c);
    while (v.i >= 0 && v.j >= 0 && v.gap() >= config.tol && fit.iterations < config.max_passes)
    {
        ++fit.iterations;
        const auto i = static_cast<std::size_t>(v.i);
        const auto j = static_cast<std::size_t>(v.j);
        const double yi = d.sign(i), yj = d.sign(j);
        // Move beta_i += yi t, beta_j -= yj t; curvature along that line:
        const double eta = std::max(d.q(i, i) + d.q(j, j) - 2.0 * yi * yj * d.q(i, j), 1e-12);
        const double room_i = yi > 0 ? c - beta[i] : beta[i];
        const double room_j = yj > 0 ? beta[j] : c - beta[j];
        const double t = std::min(v.gap() / eta, std::min(room_i, room_j));

        const double old_i = beta[i], old_j = beta[j];
        beta[i] = t >= room_i ? (yi > 0 ? c : 0.0) : old_i + yi * t;
        beta[j] = t >= room_j ? (yj > 0 ? 0.0 : c) : old_j - yj * t;
        const double di = beta[i] - old_i, dj = beta[j] - old_j;
        for (std::size_t s = 0; s < 2 * n; ++s)
            grad[s] += d.q(s, i) * di + d.q(s, j) * dj;

        v = max_violating_pair(d, beta, grad, c);
    }
    fit.kkt_gap = (v.i >= 0 && v.j >= 0) ? std::max(0.0, v.gap()) : 0.0;
    fit.converged = fit.kkt_gap < config.tol;

    // Offset from free variables, else the midpoint of the feasible interval.
    double upper = std::numeric_limits<double>::infinity();
    double lower = -std::numeric_limits<double>::infinity();
    double free_sum = 0.0;
    std::size_t free_count = 0;
    for (std::size_t t = 0; t < 2 * n; ++t)
    {
        const double y = d.sign(t);
        const double yg = y * grad[t];
        if (beta[t] >= c)
        {
            if (y < 0)
                upper = std::min(upper, yg);
            else
                lower = std::max(lower, yg);
        }
        else if (beta[t] <= 0.0)
        {
            if (y > 0)
                upper = std::min(upper, yg);
            else
                lower = std::max(lower, yg);
        }
        else
        {
            free_sum += yg;
            ++free_count;
        }
    }
    const double rho = free_count > 0 ? free_sum / static_cast<double>(free_count) : 0.5 * (upper + lower);

    double objective = 0.0;
    for (std::size_t t = 0; t < 2 * n; ++t)
        objective += 0.5 * beta[t] * (grad[t] + d.p[t]);
    fit.objective = objective;

    fit.alpha.assign(beta.begin(), beta.begin() + static_cast<std::ptrdiff_t>(n));
    fit.alpha_star.assign(beta.begin() + static_cast<std::ptrdiff_t>(n), beta.end());
    fit.model.sigma = config.sigma;
    fit.model.bias = -rho;
    fit.model.dimension = inputs.front().size();
    for (std::size_t i = 0; i < n; ++i)
    {
        const double coef = fit.alpha[i] - fit.alpha_star[i];
        if (coef != 0.0)
        {
            fit.model.support_vectors.push_back(inputs[i]);
            fit.model.dual_coefs.push_back(coef);
        }
    }
    return fit;
}

double svr_predict(const SvrModel& model, std::span<const double> input)
{
    if (input.size() != model.dimension)
        throw ShapeError("SVR input has " + std::to_string(input.size()) + " features, model expects " +
                         std::to_string(model.dimension));
    double s = model.bias;
    for (std::size_t i = 0; i < model.support_vectors.size(); ++i)
        s += model.dual_coefs[i] * rbf_kernel(model.support_vectors[i], input, model.sigma);
    return s;
}

double svr_kkt_violation(std::span<const FeatureVector> inputs, std::span<const double> targets,
                         const SvrConfig& config, std::span<const double> alpha, std::span<const double> alpha_star)
{
    config.validate();
    check_training_data(inputs, targets);
    const Eigen::MatrixXd k = kernel_matrix(inputs, config.sigma);
    const Dual d = make_dual(k, targets, config.epsilon);
    const auto beta = stack(alpha, alpha_star, inputs.size());
    const auto grad = full_gradient(d, beta);
    const Violation v = max_violating_pair(d, beta, grad, config.c);
    return (v.i >= 0 && v.j >= 0) ? std::max(0.0, v.gap()) : 0.0;
}

double svr_dual_objective(std::span<const FeatureVector> inputs, std::span<const double> targets,
                          const SvrConfig& config, std::span<const double> alpha, std::span<const double> alpha_star)
{
    check_training_data(inputs, targets);
    const Eigen::MatrixXd k = kernel_matrix(inputs, config.sigma);
    const Dual d = make_dual(k, targets, config.epsilon);
    const auto beta = stack(alpha, alpha_star, inputs.size());
    const auto grad = full_gradient(d, beta);
    double f = 0.0;
    for (std::size_t t = 0; t < beta.size(); ++t)
        f += 0.5 * beta[t] * (grad[t] + d.p[t]);
    return f;
}

GridSearchResult grid_search(std::span<const FeatureVector> inputs, std::span<const double> targets,
                             std::span<const double> c_grid, std::span<const double> sigma_grid, std::size_t folds,
                             const SvrConfig& base, std::uint64_t seed)
{
    if (c_grid.empty() || sigma_grid.empty())
        throw ValidationError("grid search needs non-empty C and sigma grids");
    check_training_data(inputs, targets);
    const FoldPlan plan = make_folds(inputs.size(), folds, seed);

    std::vector<double> cs(c_grid.begin(), c_grid.end()), sigmas(sigma_grid.begin(), sigma_grid.end());
    std::sort(cs.begin(), cs.end());
    std::sort(sigmas.begin(), sigmas.end());

    std::vector<std::vector<FeatureVector>> train_x(folds), test_x(folds);
    std::vector<std::vector<double>> train_y(folds), test_y(folds);
    for (std::size_t f = 0; f < folds; ++f)
    {
        for (auto i : plan.complement(f))
        {
            train_x[f].push_back(inputs[i]);
            train_y[f].push_back(targets[i]);
        }
        for (auto i : plan.members(f))
        {
            test_x[f].push_back(inputs[i]);
            test_y[f].push_back(targets[i]);
        }
    }

    GridSearchResult result;
    result.best_rmse = std::numeric_limits<double>::infinity();
    bool have_best = false;
    for (double c : cs)
        for (double sigma : sigmas)
        {
            SvrConfig cfg = base;
            cfg.c = c;
            cfg.sigma = sigma;
            double score;
            try
            {
                std::vector<double> preds, truths;
                for (std::size_t f = 0; f < folds; ++f)
                {
                    const SvrFit fit = svr_fit(train_x[f], train_y[f], cfg);
                    for (std::size_t i = 0; i < test_x[f].size(); ++i)
                    {
                        preds.push_back(svr_predict(fit.model, test_x[f][i]));
                        truths.push_back(test_y[f][i]);
                    }
                }
                score = rmse(preds, truths);
            }
            catch (const Error&)
            {
                score = std::numeric_limits<double>::infinity();
            }
            result.table.push_back({c, sigma, score});
            if (!have_best || score < result.best_rmse)
            {
                result.best = cfg;
                result.best_rmse = score;
                have_best = true;
            }
        }
    return result;
}

std::vector<std::uint8_t> encode_svr(const SvrModel& model)
{
    if (model.dual_coefs.size() != model.support_vectors.size())
        throw ShapeError("SVR model has mismatched coefficient and support-vector counts");
    detail::ByteWriter w;
    w.magic(kSvrMagic);
    w.u32(kSvrFormatVersion);
    w.f64(model.sigma);
    w.f64(model.bias);
    w.u32(static_cast<std::uint32_t>(model.support_vectors.size()));
    w.u32(static_cast<std::uint32_t>(model.dimension));
    w.f64s(model.dual_coefs);
    for (const auto& sv : model.support_vectors)
    {
        if (sv.size() != model.dimension)
            throw ShapeError("support vector dimension mismatch");
        w.f64s(sv);
    }
    return w.take();
}

SvrModel decode_svr(std::span<const std::uint8_t> bytes)
{
    detail::ByteReader r(bytes, "SVR model");
    r.expect_magic(kSvrMagic);
    const auto version = r.u32();
    if (version != kSvrFormatVersion)
        throw FormatError("SVR model: unsupported format version " + std::to_string(version));
    SvrModel m;
    m.sigma = r.f64();
    m.bias = r.f64();
    const std::size_t count = r.u32();
    m.dimension = r.u32();
    m.dual_coefs = r.f64s(count);
    m.support_vectors.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        m.support_vectors.push_back(r.f64s(m.dimension));
    r.expect_end();
    if (!(m.sigma > 0.0) || !std::isfinite(m.bias))
        throw ValidationError("SVR model: invalid kernel width or bias");
    return m;
}

void save_svr(const std::filesystem::path& path, const SvrModel& model)
{
    detail::write_file(path, encode_svr(model));
}

SvrModel load_svr(const std::filesystem::path& path)
{
    return decode_svr(detail::read_file(path));
}

} // namespace beetlescan
