#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fpstab/coefficients.hpp"
#include "fpstab/fpe.hpp"
#include "fpstab/measures.hpp"
#include "fpstab/simulate.hpp"
#include "fpstab/transport.hpp"

namespace fpstab::stability {

using coefficients::CoefficientField;
using coefficients::ConstantsManifest;
using measures::GridDensity;
using measures::ParticleCloud;

// -------- right-hand-side assemblers, exactly as displayed --------

struct SobolevIngredients {
    std::optional<double> initial_tilde_d;
    std::optional<double> u2_LinfLq;
    std::optional<double> sum_u_LinfLq;
    std::optional<double> drift_diff_L1Lp;
    std::optional<double> sigma_diff_L2L2p_sq;
    std::optional<double> grad_b1_L1Lp;
    std::optional<double> grad_sigma1_L2L2p_sq;
};
/// initial + 2 u2 (b-diff/delta + sigma-diff^2/delta^2)
///         + C_dp (sum u) (grad b1 + grad sigma1^2); needs p > 1.
double rhs_sobolev(const SobolevIngredients& ing, double delta, double p, double c_dp);

struct W11Ingredients {
    std::optional<double> initial_tilde_d;
    std::optional<double> u2_LinfLinf;
    std::optional<double> sum_u_LinfLinf;
    std::optional<double> drift_diff_L1L1;
    std::optional<double> sigma_diff_L2L2_sq;
    std::optional<double> phi_delta_value;
    std::optional<double> g_grad_b1_L1L1;  // integral of G(|grad b1|)
    std::optional<double> grad_sigma1_L2L2_sq;
};
double rhs_w11(const W11Ingredients& ing, double delta, double c_dT);

struct OsgoodIngredients {
    std::optional<double> initial_d_psi;
    std::optional<double> g_L1L1;
    std::optional<double> sum_u_LinfLinf;
    std::optional<double> u2_LinfLinf;
    std::optional<double> drift_diff_L1L1;
    std::optional<double> sigma_diff_L2L2_sq;
};
/// Constants exactly as printed: 8 ||g|| sum_u + 2 u2 (...).
double rhs_osgood(const OsgoodIngredients& ing, double delta);

struct MixedIngredients {
    std::optional<double> initial_tilde_d;
    std::optional<double> sigma_diff_L2L2p1_sq;
    std::optional<double> grad_sigma1_L2L2p1_sq;
    std::optional<double> drift_diff_L1Lp2;
    std::optional<double> grad_b1_L1Lp2;
};
double rhs_mixed(const MixedIngredients& ing, double delta, double p1, double p2,
                 double c1, double c2);

struct LpsIngredients {
    std::optional<double> initial_tilde_d_ninth;  // evaluated at delta/9
    std::optional<double> drift_diff_LqLp;
    std::optional<double> b1_LqLp;
};
/// Requires p, q > 2 with d/p + 2/q < 1.
double rhs_lps(const LpsIngredients& ing, double delta, int dim, double p, double q,
               double c1, double c2);

struct W2Ingredients {
    std::optional<double> initial_w_alpha;
    std::optional<double> u2_norm_root;  // ||u2||^{1/alpha} in L^inf(L^{p/(p-alpha)})
    std::optional<double> drift_diff_LqLp;
};
double rhs_w2(const W2Ingredients& ing, double alpha, double p, double q, double c_alpha);

// -------- scenarios and the measured-bound report --------

enum class Theorem { Sobolev, W11, Osgood, Mixed, Lps, W2 };
std::string theorem_name(Theorem t);

struct Scenario {
    std::string name;
    CoefficientField field1, field2;
    GridDensity initial;  // shared initial measure (grid representation)
    double horizon = 1.0;
    enum class Route { Grid, Particles } route = Route::Particles;
    std::size_t particles = 100000;
    double sde_step = 1e-3;
    long fpe_steps = 0;  // 0 -> auto
    double kappa = 1.0;
    std::uint64_t seed = 1;
    std::shared_ptr<coefficients::OsgoodModulus> modulus;  // osgood scenarios
    double mixed_p1 = 2.0, mixed_p2 = 2.0;
    int subsample_atoms = 200;
    int subsample_resamples = 5;
};

struct Checkpoint {
    double t = 0.0;
    double lhs = 0.0;        // value used for the pass decision
    double lhs_error = 0.0;  // Monte Carlo / subsampling margin already added
    double lhs_ensemble = 0.0;
    double lhs_subsampled_ot = 0.0;
    double rhs = 0.0;
    double margin = 0.0;  // rhs - lhs
    bool pass = false;
};

struct BoundReport {
    std::string scenario;
    std::string theorem;
    double delta = 0.0;
    double alpha = 0.0;
    std::map<std::string, double> ingredients;
    std::map<std::string, double> constants;
    std::vector<Checkpoint> checkpoints;
    bool pass = false;
};

/// Measures LHS along the coupled dynamics (ensemble mean cost plus
/// 3-SE margin, cross-checked by exact OT on subsampled marginals),
/// assembles the RHS from the printed formula and frozen constants.
BoundReport check_bound(const Scenario& scenario, Theorem theorem, double delta_or_alpha,
                        std::span<const double> checkpoint_times,
                        const ConstantsManifest& manifest);

void save_report_json(const BoundReport& report, const std::string& path);
void append_report_csv(const BoundReport& report, std::string& csv_body);
std::string report_csv_header();

// -------- smooth-case Gronwall cross-check --------

struct GronwallReport {
    double p = 2.0;
    double lipschitz = 1.0;
    double factor = 1.0;  // exp((pL+p-1)T)
    std::vector<Checkpoint> checkpoints;  // lhs = W_p^p, rhs = factor * accumulated source
    bool pass = false;
};

/// W_p(mu1_t, mu2_t)^p <= e^{(pL+p-1)T} int_0^t int |b1-b2|^p dmu2 ds,
/// both sides from grid solutions (1D).
GronwallReport gronwall_check(const Scenario& scenario, double p,
                              std::span<const double> checkpoint_times);

// -------- zero-diffusivity sweep --------

struct ZeroDiffusivityReport {
    std::vector<double> kappas;
    std::vector<double> checkpoint_times;
    std::vector<std::vector<double>> tilde_d;  // [kappa][checkpoint], delta = sqrt(kappa)
    std::vector<double> tilde_d_fixed_delta;   // [kappa], delta = delta0
    double delta0 = 0.0;
    double rhs = 0.0;  // kappa-free bound
    double max_min_ratio = 0.0;  // worst over checkpoints
    double fitted_slope = 0.0;   // log tilde-D(delta0) vs log kappa
    bool ceiling_pass = false;
    bool rhs_dominates = false;
};

ZeroDiffusivityReport zero_diffusivity_sweep(const Scenario& scenario,
                                             std::span<const double> kappas,
                                             std::span<const double> checkpoint_times,
                                             double p, const ConstantsManifest& manifest);

// -------- uniqueness / diagonal-concentration diagnostic --------

struct UniquenessReport {
    std::vector<int> ns;
    std::vector<double> kappas;
    std::vector<std::vector<double>> tail_mass;  // [n][kappa]: plan mass off the diagonal band
    std::vector<double> tilde_d;                 // [n]
    std::vector<std::vector<double>> chebyshev;  // tilde_d / log(1+n^2 kappa^2)
    bool concentrated = false;
};

UniquenessReport uniqueness_diagnostic(const ParticleCloud& mu, const ParticleCloud& nu,
                                       std::span<const int> ns,
                                       std::span<const double> kappas);

// -------- shared measurement helpers --------

struct SubsampledDistance {
    double value = 0.0;   // max over resamples
    double spread = 0.0;  // max - min over resamples
};

SubsampledDistance subsampled_distance(const GridDensity& a, const GridDensity& b,
                                       const transport::CostSpec& spec, int atoms,
                                       int resamples, std::uint64_t seed);
SubsampledDistance subsampled_distance(const ParticleCloud& a, const ParticleCloud& b,
                                       const transport::CostSpec& spec, int atoms,
                                       int resamples, std::uint64_t seed);

}  // namespace fpstab::stability
