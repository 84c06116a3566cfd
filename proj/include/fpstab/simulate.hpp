#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fpstab/coefficients.hpp"
#include "fpstab/measures.hpp"
#include "fpstab/transport.hpp"

namespace fpstab::simulate {

using coefficients::CoefficientField;
using measures::ParticleCloud;

struct SdeScheme {
    double step = 1e-3;
    int steps_per_frame = 1;
    enum class Boundary { None, ReflectAtBox } boundary = Boundary::None;
    measures::BoxGrid box;  // only used when reflecting
    std::uint64_t seed = 0;
};

/// Paired trajectories driven by one Brownian motion per pair.
struct CoupledPathEnsemble {
    int dim = 1;
    std::size_t count = 0;
    std::uint64_t seed = 0;
    std::vector<double> times;               // frame times, first is 0
    std::vector<std::vector<double>> first;  // frame -> flat states of Y^1
    std::vector<std::vector<double>> second;  // frame -> flat states of Y^2
};

/// One-sided ensemble (single SDE).
struct PathEnsemble {
    int dim = 1;
    std::size_t count = 0;
    std::uint64_t seed = 0;
    std::vector<double> times;
    std::vector<std::vector<double>> states;
};

struct InitialCoupling {
    int dim = 1;
    std::size_t count = 0;
    std::vector<double> pairs;  // flat, (x, y) per draw: 2*dim doubles
    transport::TransportPlan plan;
    double plan_cost = 0.0;
};

/// Draws N i.i.d. pairs from the optimal plan between the initial measures.
/// When the measures coincide the diagonal (zero-cost) coupling is used.
InitialCoupling sample_initial_coupling(const ParticleCloud& mu0, const ParticleCloud& nu0,
                                        const transport::CostSpec& spec, std::size_t n,
                                        std::uint64_t seed);

/// Euler-Maruyama for the pair, shared increments per trajectory.
CoupledPathEnsemble evolve_coupled(const CoefficientField& field1,
                                   const CoefficientField& field2,
                                   const InitialCoupling& init, const SdeScheme& scheme,
                                   double horizon);

PathEnsemble evolve_single(const CoefficientField& field, const ParticleCloud& init,
                           const SdeScheme& scheme, double horizon);

struct CurvePoint {
    double t = 0.0;
    double mean = 0.0;
    double std_error = 0.0;
};

/// Monte Carlo mean of c(Y^1_t, Y^2_t) per frame; upper-bounds the
/// transport discrepancy between the marginal laws.
std::vector<CurvePoint> coupled_cost_curve(const CoupledPathEnsemble& ensemble,
                                           const transport::CostSpec& spec);

std::pair<ParticleCloud, ParticleCloud> marginals(const CoupledPathEnsemble& ensemble,
                                                  std::size_t frame);
ParticleCloud marginal(const PathEnsemble& ensemble, std::size_t frame);

/// Equal-weight subsample of a cloud (without replacement).
ParticleCloud subsample(const ParticleCloud& cloud, std::size_t n, std::uint64_t seed);

struct EnergyTestResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// Two-sample energy-distance permutation test.
EnergyTestResult two_sample_energy_test(const ParticleCloud& a, const ParticleCloud& b,
                                        int permutations, std::uint64_t seed);

void save_cost_curve(const std::vector<CurvePoint>& curve, const std::string& csv_path);

}  // namespace fpstab::simulate
