#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fpstab/coefficients.hpp"
#include "fpstab/measures.hpp"

namespace fpstab::transport {

using measures::ParticleCloud;

enum class CostKind { LogSquared, LogLinear, Osgood, Power };

/// Ground cost selector: log-squared log(|x-y|^2/d^2+1), log-linear
/// log(|x-y|/d+1), osgood psi_delta(|x-y|^2), or power |x-y|^p.
struct CostSpec {
    CostKind kind = CostKind::LogSquared;
    double delta = 1.0;
    double p = 2.0;
    std::shared_ptr<const coefficients::OsgoodModulus> modulus;

    static CostSpec log_squared(double delta);
    static CostSpec log_linear(double delta);
    static CostSpec osgood(double delta,
                           std::shared_ptr<const coefficients::OsgoodModulus> modulus);
    static CostSpec power(double p);
};

double eval_cost(const CostSpec& spec, std::span<const double> x,
                 std::span<const double> y);

struct TransportPlan {
    struct Entry {
        int i;
        int j;
        double mass;
    };
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Entry> entries;
    double cost = 0.0;
    std::string solver = "exact";
    double duality_gap = 0.0;

    /// Max violation of the marginal constraints against the given weights.
    double marginal_error(std::span<const double> row_weights,
                          std::span<const double> col_weights) const;
};

/// Exact optimal coupling by transportation network simplex. Dense cost;
/// refuses instances above the entry cap.
TransportPlan solve_exact(const ParticleCloud& mu, const ParticleCloud& nu,
                          const CostSpec& spec, std::size_t entry_cap = 1000000);

/// Entropic regularization with log-domain iterations, rounded to exact
/// marginals; cost is an upper bound on the exact optimum.
TransportPlan solve_entropic(const ParticleCloud& mu, const ParticleCloud& nu,
                             const CostSpec& spec, double epsilon, int max_iters = 10000);

struct DistanceRelations {
    double d_delta = 0.0;       // log-linear cost optimum
    double tilde_d_delta = 0.0;  // log-squared cost optimum
    double lhs1 = 0.0, rhs1 = 0.0;  // tilde-D <= 2 D
    double lhs2 = 0.0, rhs2 = 0.0;  // D <= sqrt(tilde-D/log 2) + tilde-D
    bool pass = false;
};

DistanceRelations distance_relations(const ParticleCloud& mu, const ParticleCloud& nu,
                                     double delta);

/// Optimal-transport value under the given cost (W_p^p for the power kind).
double ot_value(const ParticleCloud& mu, const ParticleCloud& nu, const CostSpec& spec);

/// p-Wasserstein distance; 1D uses the sorted-quantile coupling.
double wasserstein(const ParticleCloud& mu, const ParticleCloud& nu, double p);

/// Monotone-rearrangement value in one dimension (also the 1D oracle).
double wasserstein_1d_quantile(const ParticleCloud& mu, const ParticleCloud& nu, double p);

/// W_p between 1D grid densities through their piecewise-linear CDFs.
double wasserstein_grid_1d(const measures::GridDensity& a, const measures::GridDensity& b,
                           double p, int quantile_samples = 4096);

/// Evaluator of the cost as a function of squared distance; the osgood kind
/// is tabulated once (monotone interpolation) for bulk evaluation.
std::function<double(double)> make_cost_evaluator(const CostSpec& spec, double max_sq_dist);

void save_plan(const TransportPlan& plan, const CostSpec& spec,
               const std::string& csv_path, const std::string& json_path);

}  // namespace fpstab::transport
