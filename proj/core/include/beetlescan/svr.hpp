#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace beetlescan {

using FeatureVector = std::vector<double>;

/// exp(-|u - v|^2 / (2 sigma^2)).
double rbf_kernel(std::span<const double> u, std::span<const double> v, double sigma);

struct SvrConfig
{
    double c = 1.0;
    double sigma = 1.0;
    double epsilon = 0.05;
    double tol = 1e-3;
    std::size_t max_passes = 10000; // bound on SMO pair updates

    void validate() const;
};

struct SvrModel
{
    std::vector<FeatureVector> support_vectors;
    std::vector<double> dual_coefs; // alpha_i - alpha_i^*
    double bias = 0.0;
    double sigma = 1.0;
    std::size_t dimension = 0; // input width, kept even with no support vectors

    friend bool operator==(const SvrModel&, const SvrModel&) = default;
};

/// Result of an SMO run. `alpha` / `alpha_star` index the training samples.
struct SvrFit
{
    SvrModel model;
    bool converged = false;
    std::size_t iterations = 0;
    double kkt_gap = 0.0;   // max violating pair gap at exit
    double objective = 0.0; // dual objective, minimization form
    std::vector<double> alpha;
    std::vector<double> alpha_star;
};

/// Epsilon-insensitive SVR with an RBF kernel, solved by SMO on the 2n
/// variable dual
///   min 1/2 (a - a*)^T K (a - a*) + eps sum(a + a*) - y^T (a - a*)
///   s.t. sum(a - a*) = 0, 0 <= a, a* <= C
/// using maximal-violating-pair working-set selection. Non-convergence is
/// reported through SvrFit::converged, never thrown.
SvrFit svr_fit(std::span<const FeatureVector> inputs, std::span<const double> targets, const SvrConfig& config);

double svr_predict(const SvrModel& model, std::span<const double> input);

/// Gap between the most violating up/low pair, recomputed from scratch for
/// the given dual variables. Zero at an exact optimum.
double svr_kkt_violation(std::span<const FeatureVector> inputs, std::span<const double> targets,
                         const SvrConfig& config, std::span<const double> alpha, std::span<const double> alpha_star);

/// Dual objective (minimization form) for the given dual variables.
double svr_dual_objective(std::span<const FeatureVector> inputs, std::span<const double> targets,
                          const SvrConfig& config, std::span<const double> alpha, std::span<const double> alpha_star);

struct GridCell
{
    double c = 0.0;
    double sigma = 0.0;
    double cv_rmse = 0.0; // +inf when a fit failed
};

struct GridSearchResult
{
    SvrConfig best;
    double best_rmse = 0.0;
    std::vector<GridCell> table; // C-major, both grids in ascending order
};

/// k-fold CV RMSE for every (C, sigma) cell; ties resolve to the smallest C,
/// then the smallest sigma. `base` supplies epsilon, tol and max_passes.
GridSearchResult grid_search(std::span<const FeatureVector> inputs, std::span<const double> targets,
                             std::span<const double> c_grid, std::span<const double> sigma_grid, std::size_t folds,
                             const SvrConfig& base, std::uint64_t seed);

// `SVRM`: magic, uint32 version, float64 sigma, float64 bias, uint32 support
// vector count, uint32 dimension, then count float64 coefficients and
// count * dimension float64 vector values.
inline constexpr std::uint32_t kSvrFormatVersion = 1;

std::vector<std::uint8_t> encode_svr(const SvrModel& model);
SvrModel decode_svr(std::span<const std::uint8_t> bytes);
void save_svr(const std::filesystem::path& path, const SvrModel& model);
SvrModel load_svr(const std::filesystem::path& path);

} // namespace beetlescan
