#pragma once

#include <vector>

#include "fpstab/coefficients.hpp"
#include "fpstab/measures.hpp"

namespace fpstab::fpe {

using coefficients::CoefficientField;
using measures::BoxGrid;
using measures::GridDensity;

struct FpeProblem {
    CoefficientField field;
    GridDensity initial;
    double kappa = 1.0;  // scales the second-order term
    double horizon = 1.0;
    enum class Boundary { ZeroFlux, AbsorbingWithLeakage } boundary = Boundary::ZeroFlux;
    // NonDivergence discretizes d_ij(a_ij u); FluxForm discretizes
    // d_i(a_ij d_j u) and exists for the conversion cross-check.
    enum class DiffusionForm { NonDivergence, FluxForm } form = DiffusionForm::NonDivergence;
};

struct FpeSolution {
    std::vector<double> times;
    std::vector<GridDensity> frames;
    double clipped_mass = 0.0;  // total negative mass removed by clipping
};

/// Step bound the solver enforces before running (advection and diffusion
/// restrictions with safety 0.9).
double cfl_step_bound(const FpeProblem& problem);

/// Conservative positivity-preserving step suggestion (stricter than the
/// enforced bound in 2D).
double suggested_step(const FpeProblem& problem);

/// Explicit upwind/centered solver; frames+1 snapshots including t=0.
FpeSolution solve(const FpeProblem& problem, long steps, int frames = 4);

/// Drift replaced by b + 1/2 div(sigma sigma^T), so the non-divergence
/// solver reproduces the divergence-form equation.
CoefficientField divergence_form_convert(const CoefficientField& field);

struct LqAprioriReport {
    double q = 2.0;
    double initial_norm = 0.0;
    double bound_factor = 1.0;  // exp((1-1/q) int ||(div b)^-||_inf dt)
    struct Frame {
        double t;
        double lhs;
        double rhs;
        bool pass;
    };
    std::vector<Frame> frames;
    bool pass = true;
    double discretization_slack = 0.01;
};

/// Checks sup_t ||rho_t||_q <= ||rho_0||_q exp[(1-1/q) int ||(div b)^-||_inf].
LqAprioriReport lq_apriori_check(const FpeSolution& solution, const CoefficientField& field,
                                 double q, double slack = 0.01);

}  // namespace fpstab::fpe
