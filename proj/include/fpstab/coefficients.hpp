#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpstab/measures.hpp"

namespace fpstab::coefficients {

using measures::BoxGrid;
using measures::GridField;

/// Time-dependent drift b and diffusion factor sigma, given as closures.
/// sigma writes a dim x noise_dim matrix row-major.
struct CoefficientField {
    int dim = 1;
    int noise_dim = 1;
    double horizon = 1.0;
    std::function<void(double, std::span<const double>, std::span<double>)> drift;
    std::function<void(double, std::span<const double>, std::span<double>)> sigma;

    double sobolev_p = 2.0;  // gradient of b in L^p, gradient of sigma in L^{2p}
    std::optional<double> mixed_p1;  // sigma exponent, mixed-exponent variant
    std::optional<double> mixed_p2;  // drift exponent, mixed-exponent variant
    std::optional<double> lps_p;
    std::optional<double> lps_q;
    std::optional<double> lipschitz;
    bool time_independent = false;  // lets grid solvers cache coefficient samples

    void drift_at(double t, std::span<const double> x, std::span<double> out) const {
        drift(t, x, out);
    }
    void sigma_at(double t, std::span<const double> x, std::span<double> out) const {
        sigma(t, x, out);
    }
    /// a = sigma sigma^T, row-major dim x dim.
    void a_at(double t, std::span<const double> x, std::span<double> out) const;
    /// Centered-difference spatial gradient of the drift, row-major
    /// (d b_i / d x_j), step h.
    void drift_gradient(double t, std::span<const double> x, double h,
                        std::span<double> out) const;
    /// (div a)_i = sum_j d a_ij / d x_j by centered differences.
    void a_divergence(double t, std::span<const double> x, double h,
                      std::span<double> out) const;
};

CoefficientField zero_field(int dim, int noise_dim = 1, double horizon = 1.0);

/// Verifies sampled difference quotients of the drift against the declared
/// Lipschitz constant.
bool check_lipschitz_declaration(const CoefficientField& field, const BoxGrid& box,
                                 int n_pairs, std::uint64_t seed);

/// Osgood modulus rho with its weight field g; rho is clamped below by s.
struct OsgoodModulus {
    std::string name = "identity";
    std::function<double(double)> rho_raw = [](double s) { return s; };
    std::function<double(double, std::span<const double>)> g =
        [](double, std::span<const double>) { return 0.0; };

    double rho(double s) const {
        const double r = rho_raw(s);
        return r > s ? r : s;
    }
};

/// rho(0)=0 and sampled monotonicity.
bool validate_modulus(const OsgoodModulus& modulus, double s_max = 16.0, int samples = 512);

/// psi_delta(s) = integral_0^s dr / (rho(r) + delta^2), adaptive quadrature.
double osgood_psi(double s, const OsgoodModulus& modulus, double delta,
                  double rel_tol = 1e-10);

/// Convex certificate function G with G(s)/s nondecreasing.
struct DvpFunction {
    std::string kind = "xlog";  // "xlog" or "staircase"
    std::function<double(double)> G;
    double integral_value = 0.0;  // sum of G(sample) * weight over the input

    double operator()(double s) const { return G(s); }
};

enum class DvpPolicy { Auto, XLog, Staircase };

/// Builds G from space-time samples of |grad b|; weight_per_sample is the
/// space-time cell measure dt * dx.
DvpFunction dvp_construct(std::span<const double> samples, double weight_per_sample,
                          DvpPolicy policy = DvpPolicy::Auto);

/// phi(delta) = inf_M { M + (M/G(M)) (1 + log(1 + 1/delta)) }.
double phi_delta(const DvpFunction& G, double delta);
double phi_delta(const std::function<double(double)>& G, double delta);

/// Compactly supported bump exp(-1/(1-|x|^2)) normalized to unit mass,
/// scaled to radius eps; discrete convolution on the grid.
GridField mollify(const GridField& field, double eps);

/// Hardy-Littlewood maximal function over a geometric radius ladder
/// (ratio 1.3, one cell to the domain diameter). Mf >= |f| pointwise.
GridField maximal_function(const GridField& field);

struct SobolevCheckReport {
    double constant_used = 0.0;
    double max_ratio = 0.0;  // max of |f(x)-f(y)| / (C |x-y| (M(x)+M(y)))
    int violations = 0;
    bool pass = false;
};

/// Pointwise Sobolev inequality check on random cell pairs.
SobolevCheckReport pointwise_sobolev_check(const GridField& field, int n_pairs,
                                           double constant, std::uint64_t seed);

/// Integral over the ball with center (x+y)/2 and diameter |x-y| of
/// |x-z|^(1-d) + |y-z|^(1-d); returns 0 when x == y.
double jabin_kernel_integral(std::span<const double> x, std::span<const double> y,
                             double rel_tol = 1e-6);

/// L^r(0,T; L^s) norm of a scalar space-time function sampled at cell
/// centers and midpoint times.
double spacetime_norm(const std::function<double(double, std::span<const double>)>& f,
                      const BoxGrid& grid, double horizon, double r, double s,
                      int time_frames = 64);

struct HypothesisHReport {
    double max_ratio = 0.0;  // max of lhs / ((g(x)+g(y)) rho(|x-y|^2))
    bool pass = false;
    double worst_lhs = 0.0;
    double worst_rhs = 0.0;
};

/// Samples the mixed Osgood-Sobolev inequality on random pairs and times.
HypothesisHReport hypothesis_h_check(const CoefficientField& field,
                                     const OsgoodModulus& modulus, const BoxGrid& box,
                                     int n_pairs, int n_times, std::uint64_t seed);

/// Frozen dimensional constants, calibrated once and shared by property
/// tests and bound assembly.
struct ConstantsManifest {
    std::uint64_t seed = 0;
    std::map<int, double> sobolev_C_d;                  // pointwise inequality, by dim
    std::map<int, std::map<double, double>> maximal_C_dp;  // by dim then p
    std::map<int, double> jabin_Cprime_d;               // by dim
    // Stability-theorem constants (frozen after one calibration run).
    double stability_C_dp = 0.0;
    double stability_C_dT = 0.0;
    double stability_C1_mixed = 0.0;
    double stability_C2_mixed = 0.0;
    double stability_C1_lps = 0.0;
    double stability_C2_lps = 0.0;
    double stability_C_alpha = 0.0;

    double maximal_constant(int d, double p) const;
    double sobolev_constant(int d) const;
    double jabin_constant(int d) const;
};

void save_manifest(const ConstantsManifest& manifest, const std::string& path);
ConstantsManifest load_manifest(const std::string& path);
std::string manifest_sha_like_hash(const std::string& path);

/// Canonical random field suite (mixtures of bumps and waves) used for
/// calibration and for the maximal-function property tests.
std::vector<GridField> canonical_field_suite(int dim, int count, std::uint64_t seed);

/// Calibrates C_d, C_dp and C'_d on the canonical suite.
ConstantsManifest calibrate_analysis_constants(std::uint64_t seed);

}  // namespace fpstab::coefficients
