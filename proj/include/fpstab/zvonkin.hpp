#pragma once

#include <memory>
#include <vector>

#include "fpstab/coefficients.hpp"
#include "fpstab/measures.hpp"

namespace fpstab::zvonkin {

using coefficients::CoefficientField;
using measures::BoxGrid;

/// Backward parabolic solution phi with terminal condition phi_T = 0;
/// frames stored at every time step, newest first in time order.
struct ZvonkinSolution {
    BoxGrid grid;
    int dim = 1;
    double horizon = 1.0;
    double lambda = 1.0;
    std::vector<double> times;                   // 0 .. T, every step
    std::vector<std::vector<double>> phi;        // frame -> flat (cell*dim + comp)
    std::vector<std::vector<double>> grad_phi;   // frame -> flat (cell*dim*dim + i*dim+j)
    double sup_grad_norm = 0.0;                  // sup_t max_x operator norm
    double sup_phi_norm = 0.0;
    double max_residual = 0.0;       // centered-substitution residual, L2 per frame
    bool accuracy_warning = false;   // residual above the 10*dx threshold
    CoefficientField drift_source;

    /// Multilinear space interpolation, linear in time; x clamped to the box.
    void eval_phi(double t, std::span<const double> x, std::span<double> out) const;
    void eval_grad_phi(double t, std::span<const double> x, std::span<double> out) const;
    void psi(double t, std::span<const double> x, std::span<double> out) const;
};

double suggested_backward_steps(const CoefficientField& drift, const BoxGrid& grid,
                                double lambda, double horizon);

/// Explicit backward solve of
///   d_t phi + 1/2 Lap phi + b . grad phi - lambda phi = -b,  phi_T = 0.
ZvonkinSolution solve_backward(const CoefficientField& drift, double lambda,
                               const BoxGrid& grid, long steps);

/// Centered-substitution PDE residual L2 norm per interior frame.
std::vector<double> residual_norms(const ZvonkinSolution& solution);

/// Discrete space-time regularity proxies reported with the solve
/// (norms entering the a-priori estimate).
struct RegularityRecord {
    double dt_phi_LqLp = 0.0;
    double phi_LqW2p = 0.0;
    double b_LqLp = 0.0;
    double ratio = 0.0;
};
RegularityRecord regularity_record(const ZvonkinSolution& solution, double p, double q);

struct LambdaSelection {
    double lambda = 1.0;
    double achieved_norm = 0.0;
    ZvonkinSolution solution;
};

/// Doubling search from lambda = 1 until sup_t ||grad phi||_inf <= target.
LambdaSelection select_lambda(const CoefficientField& drift, const BoxGrid& grid,
                              double horizon, double target = 0.5);

/// Fixed-point inverse of psi_t(x) = x + phi_t(x).
std::vector<double> invert(const ZvonkinSolution& solution, double t,
                           std::span<const double> y, double tol = 1e-10,
                           int max_iter = 100);

/// Transformed SDE coefficients sigma~ = Id + grad phi o psi^-1,
/// b~ = lambda phi o psi^-1; Lipschitz seminorms estimated by sampling.
struct TransformedCoefficients {
    CoefficientField field;
    double drift_lipschitz = 0.0;
    double sigma_lipschitz = 0.0;
};
TransformedCoefficients transform_coefficients(std::shared_ptr<const ZvonkinSolution> solution);

struct TransformComparison {
    double phi_diff_sup_w1p = 0.0;      // sup_t ||phi1 - phi2||_{W^{1,p}}
    double drift_diff_LinfLp = 0.0;     // ||b~1 - b~2||_{L^inf(L^p)}
    double sigma_diff_LqLp = 0.0;       // ||sigma~1 - sigma~2||_{L^q(L^p)}
    double source_diff_LqLp = 0.0;      // ||b1 - b2||_{L^q(L^p)}
    double ratio_drift = 0.0;           // drift_diff / source_diff
    double ratio_sigma = 0.0;
    double ratio_phi = 0.0;
};
TransformComparison compare_transforms(const ZvonkinSolution& first,
                                       const ZvonkinSolution& second, double p, double q);

/// Max sampled ratio |psi^-1(x) - psi^-1(y)| / |x - y| (bounded by 2).
double inverse_lipschitz_ratio(const ZvonkinSolution& solution, int n_pairs,
                               std::uint64_t seed);

void save_solution_csv(const ZvonkinSolution& solution, const std::string& dir,
                       int frame_stride = 0);

}  // namespace fpstab::zvonkin
