#include "fpstab/stability.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "fpstab/rng.hpp"
#include "json.hpp"

namespace fpstab::stability {

namespace {

double require(const std::optional<double>& v, const char* name) {
    if (!v) fail("incomplete-ingredients", std::string("missing ingredient ") + name);
    if (!std::isfinite(*v)) fail("incomplete-ingredients", std::string(name) + " is not finite");
    return *v;
}

}  // namespace

double rhs_sobolev(const SobolevIngredients& ing, double delta, double p, double c_dp) {
    if (!(delta > 0.0)) fail("invalid-argument", "delta must be positive");
    if (!(p > 1.0)) fail("invalid-exponent", "p > 1 is required");
    const double init = require(ing.initial_tilde_d, "initial_tilde_d");
    const double u2 = require(ing.u2_LinfLq, "u2_LinfLq");
    const double sum_u = require(ing.sum_u_LinfLq, "sum_u_LinfLq");
    const double bdiff = require(ing.drift_diff_L1Lp, "drift_diff_L1Lp");
    const double sdiff2 = require(ing.sigma_diff_L2L2p_sq, "sigma_diff_L2L2p_sq");
    const double gb = require(ing.grad_b1_L1Lp, "grad_b1_L1Lp");
    const double gs2 = require(ing.grad_sigma1_L2L2p_sq, "grad_sigma1_L2L2p_sq");
    return init + 2.0 * u2 * (bdiff / delta + sdiff2 / (delta * delta)) +
           c_dp * sum_u * (gb + gs2);
}

double rhs_w11(const W11Ingredients& ing, double delta, double c_dT) {
    if (!(delta > 0.0)) fail("invalid-argument", "delta must be positive");
    const double init = require(ing.initial_tilde_d, "initial_tilde_d");
    const double u2 = require(ing.u2_LinfLinf, "u2_LinfLinf");
    const double sum_u = require(ing.sum_u_LinfLinf, "sum_u_LinfLinf");
    const double bdiff = require(ing.drift_diff_L1L1, "drift_diff_L1L1");
    const double sdiff2 = require(ing.sigma_diff_L2L2_sq, "sigma_diff_L2L2_sq");
    const double phi = require(ing.phi_delta_value, "phi_delta_value");
    const double gint = require(ing.g_grad_b1_L1L1, "g_grad_b1_L1L1");
    const double gs2 = require(ing.grad_sigma1_L2L2_sq, "grad_sigma1_L2L2_sq");
    return init + 2.0 * u2 * (bdiff / delta + sdiff2 / (delta * delta)) +
           c_dT * (1.0 + sum_u) * (phi * (1.0 + gint) + gs2);
}

double rhs_osgood(const OsgoodIngredients& ing, double delta) {
    if (!(delta > 0.0)) fail("invalid-argument", "delta must be positive");
    const double init = require(ing.initial_d_psi, "initial_d_psi");
    const double g = require(ing.g_L1L1, "g_L1L1");
    const double sum_u = require(ing.sum_u_LinfLinf, "sum_u_LinfLinf");
    const double u2 = require(ing.u2_LinfLinf, "u2_LinfLinf");
    const double bdiff = require(ing.drift_diff_L1L1, "drift_diff_L1L1");
    const double sdiff2 = require(ing.sigma_diff_L2L2_sq, "sigma_diff_L2L2_sq");
    return init + 8.0 * g * sum_u + 2.0 * u2 * (bdiff / delta + sdiff2 / (delta * delta));
}

double rhs_mixed(const MixedIngredients& ing, double delta, double p1, double p2,
                 double c1, double c2) {
    if (!(delta > 0.0)) fail("invalid-argument", "delta must be positive");
    if (!(p1 > 1.0) || !(p2 > 1.0)) fail("invalid-exponent", "p1 > 1 and p2 > 1 are required");
    const double init = require(ing.initial_tilde_d, "initial_tilde_d");
    const double sdiff2 = require(ing.sigma_diff_L2L2p1_sq, "sigma_diff_L2L2p1_sq");
    const double gs2 = require(ing.grad_sigma1_L2L2p1_sq, "grad_sigma1_L2L2p1_sq");
    const double bdiff = require(ing.drift_diff_L1Lp2, "drift_diff_L1Lp2");
    const double gb = require(ing.grad_b1_L1Lp2, "grad_b1_L1Lp2");
    return init + c1 * (sdiff2 / (delta * delta) + gs2) + c2 * (bdiff / delta + gb);
}

double rhs_lps(const LpsIngredients& ing, double delta, int dim, double p, double q,
               double c1, double c2) {
    if (!(delta > 0.0)) fail("invalid-argument", "delta must be positive");
    if (!(p > 2.0) || !(q > 2.0) || !(dim / p + 2.0 / q < 1.0))
        fail("lps-violation", "need p, q > 2 with d/p + 2/q < 1");
    const double init = require(ing.initial_tilde_d_ninth, "initial_tilde_d_ninth");
    const double bdiff = require(ing.drift_diff_LqLp, "drift_diff_LqLp");
    const double b1 = require(ing.b1_LqLp, "b1_LqLp");
    return init + c1 * (bdiff * bdiff / (delta * delta) + b1 * b1) +
           c2 * (bdiff / delta + b1);
}

double rhs_w2(const W2Ingredients& ing, double alpha, double p, double q, double c_alpha) {
    if (!(alpha > 2.0) || !(alpha < std::min(p, q)))
        fail("invalid-alpha", "alpha must lie in (2, p ^ q)");
    const double init = require(ing.initial_w_alpha, "initial_w_alpha");
    const double u2 = require(ing.u2_norm_root, "u2_norm_root");
    const double bdiff = require(ing.drift_diff_LqLp, "drift_diff_LqLp");
    return c_alpha * (init + u2 * bdiff);
}

std::string theorem_name(Theorem t) {
    switch (t) {
        case Theorem::Sobolev: return "sobolev";
        case Theorem::W11: return "w11";
        case Theorem::Osgood: return "osgood";
        case Theorem::Mixed: return "mixed";
        case Theorem::Lps: return "lps";
        case Theorem::W2: return "w2";
    }
    return "unknown";
}

// ---------------- measurement helpers ----------------

SubsampledDistance subsampled_distance(const GridDensity& a, const GridDensity& b,
                                       const transport::CostSpec& spec, int atoms,
                                       int resamples, std::uint64_t seed) {
    SubsampledDistance out;
    double lo = kInf;
    RngStream rng(seed, 25, 0);
    for (int r = 0; r < resamples; ++r) {
        measures::ParticleCloud ca, cb;
        if (a.grid.dim == 1 && b.grid.dim == 1) {
            // shared stratified quantile levels cancel the iid sampling noise
            const double shift = rng.uniform(static_cast<std::uint64_t>(r));
            ca = measures::quantile_cloud_1d(a, static_cast<std::size_t>(atoms), shift);
            cb = measures::quantile_cloud_1d(b, static_cast<std::size_t>(atoms), shift);
        } else {
            // triangular quantile coupling on common levels: identical
            // densities give identical clouds
            const double sy = rng.uniform(2 * static_cast<std::uint64_t>(r) + 100);
            const double sx = rng.uniform(2 * static_cast<std::uint64_t>(r) + 101);
            ca = measures::quantile_cloud_2d(a, static_cast<std::size_t>(atoms), sy, sx);
            cb = measures::quantile_cloud_2d(b, static_cast<std::size_t>(atoms), sy, sx);
        }
        const double v = transport::solve_exact(ca, cb, spec).cost;
        out.value = std::max(out.value, v);
        lo = std::min(lo, v);
    }
    out.spread = out.value - lo;
    return out;
}

SubsampledDistance subsampled_distance(const ParticleCloud& a, const ParticleCloud& b,
                                       const transport::CostSpec& spec, int atoms,
                                       int resamples, std::uint64_t seed) {
    SubsampledDistance out;
    double lo = kInf;
    for (int r = 0; r < resamples; ++r) {
        const auto ca = simulate::subsample(a, static_cast<std::size_t>(atoms),
                                            seed + 2 * static_cast<std::uint64_t>(r));
        const auto cb = simulate::subsample(b, static_cast<std::size_t>(atoms),
                                            seed + 2 * static_cast<std::uint64_t>(r) + 1);
        const double v = transport::solve_exact(ca, cb, spec).cost;
        out.value = std::max(out.value, v);
        lo = std::min(lo, v);
    }
    out.spread = out.value - lo;
    return out;
}

namespace {

double drift_diff_magnitude(const CoefficientField& f1, const CoefficientField& f2,
                            double t, std::span<const double> x) {
    const int d = f1.dim;
    std::vector<double> b1(static_cast<std::size_t>(d)), b2(static_cast<std::size_t>(d));
    f1.drift(t, x, b1);
    f2.drift(t, x, b2);
    double s = 0.0;
    for (int a = 0; a < d; ++a)
        s += sqr(b1[static_cast<std::size_t>(a)] - b2[static_cast<std::size_t>(a)]);
    return std::sqrt(s);
}

double sigma_diff_magnitude(const CoefficientField& f1, const CoefficientField& f2,
                            double t, std::span<const double> x) {
    const std::size_t e = static_cast<std::size_t>(f1.dim * f1.noise_dim);
    std::vector<double> s1(e), s2(e);
    f1.sigma(t, x, s1);
    f2.sigma(t, x, s2);
    double s = 0.0;
    for (std::size_t k = 0; k < e; ++k) s += sqr(s1[k] - s2[k]);
    return std::sqrt(s);
}

double drift_magnitude(const CoefficientField& f, double t, std::span<const double> x) {
    const int d = f.dim;
    std::vector<double> b(static_cast<std::size_t>(d));
    f.drift(t, x, b);
    double s = 0.0;
    for (double v : b) s += v * v;
    return std::sqrt(s);
}

double grad_drift_magnitude(const CoefficientField& f, double t, std::span<const double> x,
                            double h) {
    const int d = f.dim;
    std::vector<double> g(static_cast<std::size_t>(d * d));
    f.drift_gradient(t, x, h, g);
    double s = 0.0;
    for (double v : g) s += v * v;
    return std::sqrt(s);
}

double grad_sigma_magnitude(const CoefficientField& f, double t, std::span<const double> x,
                            double h) {
    const int d = f.dim, m = f.noise_dim;
    const std::size_t e = static_cast<std::size_t>(d * m);
    std::vector<double> sp(e), sm(e), xp(x.begin(), x.end()), xm(x.begin(), x.end());
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
        xp[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)] + h;
        xm[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)] - h;
        f.sigma(t, xp, sp);
        f.sigma(t, xm, sm);
        for (std::size_t k = 0; k < e; ++k) s += sqr((sp[k] - sm[k]) / (2.0 * h));
        xp[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)];
        xm[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)];
    }
    return std::sqrt(s);
}

long auto_fpe_steps(const Scenario& sc, const CoefficientField& field, double kappa) {
    fpe::FpeProblem pb;
    pb.field = field;
    pb.initial = sc.initial;
    pb.kappa = kappa;
    pb.horizon = sc.horizon;
    const double h = fpe::suggested_step(pb);
    long steps = sc.fpe_steps > 0 ? sc.fpe_steps
                                  : static_cast<long>(std::ceil(sc.horizon / h));
    steps = ((steps + 3) / 4) * 4;  // align frames with quarter checkpoints
    return steps;
}

struct ScenarioRun {
    fpe::FpeSolution sol1, sol2;
    simulate::CoupledPathEnsemble ensemble;
    bool has_ensemble = false;
};

ScenarioRun run_scenario(const Scenario& sc) {
    ScenarioRun run;
    fpe::FpeProblem p1{sc.field1, sc.initial, sc.kappa, sc.horizon,
                       fpe::FpeProblem::Boundary::ZeroFlux,
                       fpe::FpeProblem::DiffusionForm::NonDivergence};
    fpe::FpeProblem p2 = p1;
    p2.field = sc.field2;
    const long steps1 = auto_fpe_steps(sc, sc.field1, sc.kappa);
    const long steps2 = auto_fpe_steps(sc, sc.field2, sc.kappa);
    run.sol1 = fpe::solve(p1, steps1, 16);
    run.sol2 = fpe::solve(p2, steps2, 16);

    if (sc.route == Scenario::Route::Particles) {
        const auto init_cloud =
            measures::sample_from_density(sc.initial, sc.particles, sc.seed, 41);
        simulate::InitialCoupling ic;
        ic.dim = init_cloud.dim;
        ic.count = init_cloud.size();
        const std::size_t d = static_cast<std::size_t>(init_cloud.dim);
        ic.pairs.resize(ic.count * 2 * d);
        for (std::size_t i = 0; i < ic.count; ++i) {
            const auto pt = init_cloud.point(i);
            for (std::size_t a = 0; a < d; ++a) {
                ic.pairs[i * 2 * d + a] = pt[a];
                ic.pairs[i * 2 * d + d + a] = pt[a];
            }
        }
        simulate::SdeScheme scheme;
        scheme.step = sc.sde_step;
        const long total = std::lround(sc.horizon / sc.sde_step);
        scheme.steps_per_frame = static_cast<int>(std::max<long>(1, total / 40));
        scheme.seed = sc.seed;
        run.ensemble = simulate::evolve_coupled(sc.field1, sc.field2, ic, scheme, sc.horizon);
        run.has_ensemble = true;
    }
    return run;
}

std::size_t nearest_frame(std::span<const double> times, double t) {
    std::size_t best = 0;
    double err = kInf;
    for (std::size_t f = 0; f < times.size(); ++f)
        if (std::abs(times[f] - t) < err) {
            err = std::abs(times[f] - t);
            best = f;
        }
    return best;
}

double sup_frame_norm(const fpe::FpeSolution& sol, double q) {
    double v = 0.0;
    for (const auto& frame : sol.frames) v = std::max(v, measures::lr_norm(frame, q));
    return v;
}

}  // namespace

BoundReport check_bound(const Scenario& sc, Theorem theorem, double delta_or_alpha,
                        std::span<const double> checkpoint_times,
                        const ConstantsManifest& manifest) {
    BoundReport report;
    report.scenario = sc.name;
    report.theorem = theorem_name(theorem);
    const int dim = sc.field1.dim;
    const measures::BoxGrid& grid = sc.initial.grid;
    const double T = sc.horizon;
    const double gh = grid.min_spacing() / 8.0;
    const int nt = 48;

    const auto st_norm = [&](auto&& f, double r, double s) {
        return coefficients::spacetime_norm(f, grid, T, r, s, nt);
    };
    const auto bdiff_fn = [&](double t, std::span<const double> x) {
        return drift_diff_magnitude(sc.field1, sc.field2, t, x);
    };
    const auto sdiff_fn = [&](double t, std::span<const double> x) {
        return sigma_diff_magnitude(sc.field1, sc.field2, t, x);
    };
    const auto gb_fn = [&](double t, std::span<const double> x) {
        return grad_drift_magnitude(sc.field1, t, x, gh);
    };
    const auto gs_fn = [&](double t, std::span<const double> x) {
        return grad_sigma_magnitude(sc.field1, t, x, gh);
    };

    ScenarioRun run = run_scenario(sc);

    double rhs = 0.0;
    transport::CostSpec lhs_spec = transport::CostSpec::log_squared(1.0);
    bool lhs_is_w2 = false;

    switch (theorem) {
        case Theorem::Sobolev: {
            const double delta = delta_or_alpha;
            const double p = sc.field1.sobolev_p;
            if (!(p > 1.0)) fail("invalid-exponent", "p > 1 is required for this bound");
            const double q = p / (p - 1.0);
            SobolevIngredients ing;
            ing.initial_tilde_d = 0.0;  // shared initial measure
            ing.u2_LinfLq = sup_frame_norm(run.sol2, q);
            ing.sum_u_LinfLq = sup_frame_norm(run.sol1, q) + *ing.u2_LinfLq;
            ing.drift_diff_L1Lp = st_norm(bdiff_fn, 1.0, p);
            ing.sigma_diff_L2L2p_sq = sqr(st_norm(sdiff_fn, 2.0, 2.0 * p));
            ing.grad_b1_L1Lp = st_norm(gb_fn, 1.0, p);
            ing.grad_sigma1_L2L2p_sq = sqr(st_norm(gs_fn, 2.0, 2.0 * p));
            rhs = rhs_sobolev(ing, delta, p, manifest.stability_C_dp);
            report.delta = delta;
            report.ingredients = {{"initial_tilde_d", *ing.initial_tilde_d},
                                  {"u2_LinfLq", *ing.u2_LinfLq},
                                  {"sum_u_LinfLq", *ing.sum_u_LinfLq},
                                  {"drift_diff_L1Lp", *ing.drift_diff_L1Lp},
                                  {"sigma_diff_L2L2p_sq", *ing.sigma_diff_L2L2p_sq},
                                  {"grad_b1_L1Lp", *ing.grad_b1_L1Lp},
                                  {"grad_sigma1_L2L2p_sq", *ing.grad_sigma1_L2L2p_sq}};
            report.constants = {{"C_dp", manifest.stability_C_dp}, {"p", p}, {"q", q}};
            lhs_spec = transport::CostSpec::log_squared(delta);
            break;
        }
        case Theorem::W11: {
            const double delta = delta_or_alpha;
            W11Ingredients ing;
            ing.initial_tilde_d = 0.0;
            ing.u2_LinfLinf = sup_frame_norm(run.sol2, kInf);
            ing.sum_u_LinfLinf = sup_frame_norm(run.sol1, kInf) + *ing.u2_LinfLinf;
            ing.drift_diff_L1L1 = st_norm(bdiff_fn, 1.0, 1.0);
            ing.sigma_diff_L2L2_sq = sqr(st_norm(sdiff_fn, 2.0, 2.0));
            ing.grad_sigma1_L2L2_sq = sqr(st_norm(gs_fn, 2.0, 2.0));
            // de la Vallee-Poussin certificate from |grad b1| samples
            std::vector<double> samples;
            samples.reserve(grid.size() * 16);
            std::array<double, 2> x{};
            for (int k = 0; k < 16; ++k) {
                const double t = T * (k + 0.5) / 16.0;
                for (std::size_t c = 0; c < grid.size(); ++c) {
                    grid.center(c, x);
                    samples.push_back(gb_fn(t, std::span<const double>(
                                                   x.data(), static_cast<std::size_t>(dim))));
                }
            }
            const auto G = coefficients::dvp_construct(
                samples, grid.cell_volume() * T / 16.0);
            ing.g_grad_b1_L1L1 = G.integral_value;
            ing.phi_delta_value = coefficients::phi_delta(G, std::min(delta, 1.0));
            rhs = rhs_w11(ing, delta, manifest.stability_C_dT);
            report.delta = delta;
            report.ingredients = {{"initial_tilde_d", *ing.initial_tilde_d},
                                  {"u2_LinfLinf", *ing.u2_LinfLinf},
                                  {"sum_u_LinfLinf", *ing.sum_u_LinfLinf},
                                  {"drift_diff_L1L1", *ing.drift_diff_L1L1},
                                  {"sigma_diff_L2L2_sq", *ing.sigma_diff_L2L2_sq},
                                  {"phi_delta", *ing.phi_delta_value},
                                  {"g_grad_b1_L1L1", *ing.g_grad_b1_L1L1},
                                  {"grad_sigma1_L2L2_sq", *ing.grad_sigma1_L2L2_sq}};
            report.constants = {{"C_dT", manifest.stability_C_dT}};
            lhs_spec = transport::CostSpec::log_squared(delta);
            break;
        }
        case Theorem::Osgood: {
            const double delta = delta_or_alpha;
            if (!sc.modulus) fail("incomplete-ingredients", "osgood scenario needs a modulus");
            const auto hrep = coefficients::hypothesis_h_check(sc.field1, *sc.modulus, grid,
                                                               400, 8, sc.seed + 77);
            if (!hrep.pass)
                fail("hypothesis-violation",
                     "sampled mixed-condition ratio " + format_double(hrep.max_ratio));
            OsgoodIngredients ing;
            ing.initial_d_psi = 0.0;
            const auto g_fn = [&](double t, std::span<const double> x) {
                return sc.modulus->g(t, x);
            };
            ing.g_L1L1 = st_norm(g_fn, 1.0, 1.0);
            ing.u2_LinfLinf = sup_frame_norm(run.sol2, kInf);
            ing.sum_u_LinfLinf = sup_frame_norm(run.sol1, kInf) + *ing.u2_LinfLinf;
            ing.drift_diff_L1L1 = st_norm(bdiff_fn, 1.0, 1.0);
            ing.sigma_diff_L2L2_sq = sqr(st_norm(sdiff_fn, 2.0, 2.0));
            rhs = rhs_osgood(ing, delta);
            report.delta = delta;
            report.ingredients = {{"initial_d_psi", *ing.initial_d_psi},
                                  {"g_L1L1", *ing.g_L1L1},
                                  {"sum_u_LinfLinf", *ing.sum_u_LinfLinf},
                                  {"u2_LinfLinf", *ing.u2_LinfLinf},
                                  {"drift_diff_L1L1", *ing.drift_diff_L1L1},
                                  {"sigma_diff_L2L2_sq", *ing.sigma_diff_L2L2_sq},
                                  {"h_check_max_ratio", hrep.max_ratio}};
            report.constants = {{"printed_8", 8.0}, {"printed_2", 2.0}};
            lhs_spec = transport::CostSpec::osgood(delta, sc.modulus);
            break;
        }
        case Theorem::Mixed: {
            const double delta = delta_or_alpha;
            const double p1 = sc.mixed_p1, p2 = sc.mixed_p2;
            MixedIngredients ing;
            ing.initial_tilde_d = 0.0;
            ing.sigma_diff_L2L2p1_sq = sqr(st_norm(sdiff_fn, 2.0, 2.0 * p1));
            ing.grad_sigma1_L2L2p1_sq = sqr(st_norm(gs_fn, 2.0, 2.0 * p1));
            ing.drift_diff_L1Lp2 = st_norm(bdiff_fn, 1.0, p2);
            ing.grad_b1_L1Lp2 = st_norm(gb_fn, 1.0, p2);
            rhs = rhs_mixed(ing, delta, p1, p2, manifest.stability_C1_mixed,
                            manifest.stability_C2_mixed);
            report.delta = delta;
            report.ingredients = {{"initial_tilde_d", *ing.initial_tilde_d},
                                  {"sigma_diff_L2L2p1_sq", *ing.sigma_diff_L2L2p1_sq},
                                  {"grad_sigma1_L2L2p1_sq", *ing.grad_sigma1_L2L2p1_sq},
                                  {"drift_diff_L1Lp2", *ing.drift_diff_L1Lp2},
                                  {"grad_b1_L1Lp2", *ing.grad_b1_L1Lp2}};
            report.constants = {{"C1", manifest.stability_C1_mixed},
                                {"C2", manifest.stability_C2_mixed},
                                {"p1", p1},
                                {"p2", p2}};
            lhs_spec = transport::CostSpec::log_squared(delta);
            break;
        }
        case Theorem::Lps: {
            const double delta = delta_or_alpha;
            const double p = sc.field1.lps_p.value_or(0.0);
            const double q = sc.field1.lps_q.value_or(0.0);
            LpsIngredients ing;
            ing.initial_tilde_d_ninth = 0.0;
            const auto b1_fn = [&](double t, std::span<const double> x) {
                return drift_magnitude(sc.field1, t, x);
            };
            ing.drift_diff_LqLp = st_norm(bdiff_fn, q, p);
            ing.b1_LqLp = st_norm(b1_fn, q, p);
            rhs = rhs_lps(ing, delta, dim, p, q, manifest.stability_C1_lps,
                          manifest.stability_C2_lps);
            report.delta = delta;
            report.ingredients = {{"initial_tilde_d_ninth", *ing.initial_tilde_d_ninth},
                                  {"drift_diff_LqLp", *ing.drift_diff_LqLp},
                                  {"b1_LqLp", *ing.b1_LqLp}};
            report.constants = {{"C1", manifest.stability_C1_lps},
                                {"C2", manifest.stability_C2_lps},
                                {"p", p},
                                {"q", q}};
            lhs_spec = transport::CostSpec::log_squared(delta);
            break;
        }
        case Theorem::W2: {
            const double alpha = delta_or_alpha;
            const double p = sc.field1.lps_p.value_or(0.0);
            const double q = sc.field1.lps_q.value_or(0.0);
            W2Ingredients ing;
            ing.initial_w_alpha = 0.0;
            const double s_exp = p / (p - alpha);
            ing.u2_norm_root = std::pow(sup_frame_norm(run.sol2, s_exp), 1.0 / alpha);
            ing.drift_diff_LqLp = st_norm(bdiff_fn, q, p);
            rhs = rhs_w2(ing, alpha, p, q, manifest.stability_C_alpha);
            report.alpha = alpha;
            report.ingredients = {{"initial_w_alpha", *ing.initial_w_alpha},
                                  {"u2_norm_root", *ing.u2_norm_root},
                                  {"drift_diff_LqLp", *ing.drift_diff_LqLp}};
            report.constants = {{"C_alpha", manifest.stability_C_alpha},
                                {"p", p},
                                {"q", q}};
            lhs_spec = transport::CostSpec::power(2.0);
            lhs_is_w2 = true;
            break;
        }
    }

    // ---- LHS measurements per checkpoint ----
    std::vector<simulate::CurvePoint> curve;
    if (run.has_ensemble) curve = simulate::coupled_cost_curve(run.ensemble, lhs_spec);
    report.pass = true;
    for (double tc : checkpoint_times) {
        Checkpoint cp;
        cp.t = tc;
        cp.rhs = rhs;
        if (run.has_ensemble) {
            const std::size_t f = nearest_frame(run.ensemble.times, tc);
            cp.lhs_ensemble = curve[f].mean;
            cp.lhs_error = 3.0 * curve[f].std_error;
            const auto [ma, mb] = simulate::marginals(run.ensemble, f);
            const auto ot = subsampled_distance(ma, mb, lhs_spec, std::min(sc.subsample_atoms, 200),
                                                sc.subsample_resamples, sc.seed + 101);
            cp.lhs_subsampled_ot = ot.value;
            cp.lhs = cp.lhs_ensemble + cp.lhs_error;
        } else {
            const std::size_t f1 = nearest_frame(run.sol1.times, tc);
            const std::size_t f2 = nearest_frame(run.sol2.times, tc);
            if (lhs_is_w2 && grid.dim == 1) {
                const double w2 = transport::wasserstein_grid_1d(run.sol1.frames[f1],
                                                                 run.sol2.frames[f2], 2.0);
                cp.lhs_subsampled_ot = w2 * w2;
                cp.lhs = w2 * w2;
            } else {
                const auto ot =
                    subsampled_distance(run.sol1.frames[f1], run.sol2.frames[f2], lhs_spec,
                                        sc.subsample_atoms, sc.subsample_resamples,
                                        sc.seed + 211);
                cp.lhs_subsampled_ot = ot.value;
                cp.lhs_error = ot.spread;
                cp.lhs = ot.value + ot.spread;
            }
        }
        if (lhs_is_w2) {
            // curve carries squared distances; the bound is on W_2 itself
            cp.lhs = std::sqrt(std::max(0.0, cp.lhs));
            cp.lhs_ensemble = std::sqrt(std::max(0.0, cp.lhs_ensemble));
            cp.lhs_subsampled_ot = std::sqrt(std::max(0.0, cp.lhs_subsampled_ot));
        }
        cp.margin = cp.rhs - cp.lhs;
        cp.pass = cp.lhs <= cp.rhs + 1e-12;
        report.pass = report.pass && cp.pass;
        report.checkpoints.push_back(cp);
    }
    return report;
}

void save_report_json(const BoundReport& report, const std::string& path) {
    nlohmann::json j;
    j["scenario"] = report.scenario;
    j["theorem"] = report.theorem;
    j["delta"] = report.delta;
    j["alpha"] = report.alpha;
    j["ingredients"] = report.ingredients;
    j["constants"] = report.constants;
    j["pass"] = report.pass;
    for (const auto& cp : report.checkpoints)
        j["checkpoints"].push_back({{"t", cp.t},
                                    {"lhs", cp.lhs},
                                    {"lhs_error", cp.lhs_error},
                                    {"lhs_ensemble", cp.lhs_ensemble},
                                    {"lhs_subsampled_ot", cp.lhs_subsampled_ot},
                                    {"rhs", cp.rhs},
                                    {"margin", cp.margin},
                                    {"pass", cp.pass}});
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("io-error", "cannot write " + path);
    f << j.dump(2) << "\n";
}

std::string report_csv_header() {
    return "scenario,theorem,delta,alpha,t,lhs,lhs_error,rhs,margin,pass\n";
}

void append_report_csv(const BoundReport& report, std::string& csv_body) {
    for (const auto& cp : report.checkpoints)
        csv_body += report.scenario + "," + report.theorem + "," + format_double(report.delta) +
                    "," + format_double(report.alpha) + "," + format_double(cp.t) + "," +
                    format_double(cp.lhs) + "," + format_double(cp.lhs_error) + "," +
                    format_double(cp.rhs) + "," + format_double(cp.margin) + "," +
                    (cp.pass ? "1" : "0") + "\n";
}

GronwallReport gronwall_check(const Scenario& sc, double p,
                              std::span<const double> checkpoint_times) {
    if (sc.initial.grid.dim != 1)
        fail("invalid-argument", "the smooth-case cross-check runs on 1D grids");
    GronwallReport report;
    report.p = p;
    double L = sc.field1.lipschitz.value_or(0.0);
    if (L <= 0.0) {
        // sampled estimate over the box
        RngStream rng(sc.seed, 33, 0);
        std::uint64_t k = 0;
        std::vector<double> b1(1), b2(1);
        for (int it = 0; it < 2000; ++it) {
            double x = sc.initial.grid.lo[0] +
                       rng.uniform(k++) * (sc.initial.grid.hi[0] - sc.initial.grid.lo[0]);
            double y = sc.initial.grid.lo[0] +
                       rng.uniform(k++) * (sc.initial.grid.hi[0] - sc.initial.grid.lo[0]);
            if (std::abs(x - y) < 1e-9) continue;
            const double t = sc.horizon * rng.uniform(k++);
            sc.field1.drift(t, std::span<const double>(&x, 1), b1);
            sc.field1.drift(t, std::span<const double>(&y, 1), b2);
            L = std::max(L, std::abs(b1[0] - b2[0]) / std::abs(x - y));
        }
        L *= 1.05;
    }
    report.lipschitz = L;
    report.factor = std::exp((p * L + p - 1.0) * sc.horizon);

    Scenario grid_sc = sc;
    grid_sc.route = Scenario::Route::Grid;
    ScenarioRun run = run_scenario(grid_sc);

    // cumulative source integral on the frames of solution 2
    const auto& sol2 = run.sol2;
    std::vector<double> frame_integrand(sol2.frames.size(), 0.0);
    std::array<double, 2> x{};
    for (std::size_t f = 0; f < sol2.frames.size(); ++f) {
        double acc = 0.0;
        for (std::size_t c = 0; c < sc.initial.grid.size(); ++c) {
            sc.initial.grid.center(c, x);
            const double diff = drift_diff_magnitude(
                sc.field1, sc.field2, sol2.times[f],
                std::span<const double>(x.data(), 1));
            acc += std::pow(diff, p) * sol2.frames[f].values[c];
        }
        frame_integrand[f] = acc * sc.initial.grid.cell_volume();
    }
    std::vector<double> cumulative(sol2.frames.size(), 0.0);
    for (std::size_t f = 1; f < sol2.frames.size(); ++f)
        cumulative[f] = cumulative[f - 1] + 0.5 *
                            (frame_integrand[f - 1] + frame_integrand[f]) *
                            (sol2.times[f] - sol2.times[f - 1]);

    report.pass = true;
    for (double tc : checkpoint_times) {
        Checkpoint cp;
        cp.t = tc;
        const std::size_t f1 = nearest_frame(run.sol1.times, tc);
        const std::size_t f2 = nearest_frame(run.sol2.times, tc);
        const double wp =
            transport::wasserstein_grid_1d(run.sol1.frames[f1], run.sol2.frames[f2], p);
        cp.lhs = std::pow(wp, p);
        cp.rhs = report.factor * cumulative[f2];
        cp.margin = cp.rhs - cp.lhs;
        cp.pass = cp.lhs <= cp.rhs + 1e-12;
        report.pass = report.pass && cp.pass;
        report.checkpoints.push_back(cp);
    }
    return report;
}

ZeroDiffusivityReport zero_diffusivity_sweep(const Scenario& sc,
                                             std::span<const double> kappas,
                                             std::span<const double> checkpoint_times,
                                             double p, const ConstantsManifest& manifest) {
    if (!(p > 1.0)) fail("invalid-exponent", "the sweep needs p > 1");
    ZeroDiffusivityReport report;
    report.kappas.assign(kappas.begin(), kappas.end());
    report.checkpoint_times.assign(checkpoint_times.begin(), checkpoint_times.end());
    const double q = p / (p - 1.0);

    // kappa-free right-hand side
    const measures::BoxGrid& grid = sc.initial.grid;
    const double gh = grid.min_spacing() / 8.0;
    const auto gb_fn = [&](double t, std::span<const double> x) {
        return grad_drift_magnitude(sc.field1, t, x, gh);
    };
    const auto sig_fn = [&](double t, std::span<const double> x) {
        std::vector<double> s(static_cast<std::size_t>(sc.field1.dim * sc.field1.noise_dim));
        sc.field1.sigma(t, x, s);
        double acc = 0.0;
        for (double v : s) acc += v * v;
        return std::sqrt(acc);
    };
    const double grad_b = coefficients::spacetime_norm(gb_fn, grid, sc.horizon, 1.0, p, 48);
    const double sigma_2p =
        coefficients::spacetime_norm(sig_fn, grid, sc.horizon, kInf, 2.0 * p, 4);

    // C_{q,T}: the explicit a-priori constant
    fpe::FpeProblem pb0{sc.field1, sc.initial, 0.0, sc.horizon,
                        fpe::FpeProblem::Boundary::ZeroFlux,
                        fpe::FpeProblem::DiffusionForm::NonDivergence};
    const long steps0 = auto_fpe_steps(sc, sc.field1, 1.0);
    const auto sol0 = fpe::solve(pb0, steps0, 4);
    const auto apriori = fpe::lq_apriori_check(sol0, sc.field1, q, 0.0);
    const double c_qT = apriori.initial_norm * apriori.bound_factor;
    report.rhs = 2.0 * c_qT *
                 (manifest.stability_C_dp * grad_b + sc.horizon * sigma_2p * sigma_2p);

    report.delta0 = std::sqrt(*std::max_element(kappas.begin(), kappas.end()));
    report.tilde_d.resize(kappas.size());
    report.tilde_d_fixed_delta.resize(kappas.size());

    for (std::size_t ki = 0; ki < kappas.size(); ++ki) {
        const double kappa = kappas[ki];
        if (kappa == 0.0) {
            report.tilde_d[ki].assign(checkpoint_times.size(), 0.0);
            report.tilde_d_fixed_delta[ki] = 0.0;
            continue;
        }
        fpe::FpeProblem pbk = pb0;
        pbk.kappa = kappa;
        const long steps = auto_fpe_steps(sc, sc.field1, kappa);
        const auto solk = fpe::solve(pbk, steps, 4);
        // paired reference: the zero-diffusivity equation solved with the
        // same time discretization, so scheme artifacts cancel in the pair
        const auto ref = fpe::solve(pb0, steps, 4);
        const double delta = std::sqrt(kappa);
        for (double tc : checkpoint_times) {
            const std::size_t fk = nearest_frame(solk.times, tc);
            const std::size_t f0 = nearest_frame(ref.times, tc);
            const auto d = subsampled_distance(solk.frames[fk], ref.frames[f0],
                                               transport::CostSpec::log_squared(delta),
                                               sc.subsample_atoms, sc.subsample_resamples,
                                               sc.seed + 500 + ki);
            report.tilde_d[ki].push_back(d.value);
        }
        const std::size_t fT = nearest_frame(solk.times, checkpoint_times.back());
        const std::size_t f0T = nearest_frame(ref.times, checkpoint_times.back());
        report.tilde_d_fixed_delta[ki] =
            subsampled_distance(solk.frames[fT], ref.frames[f0T],
                                transport::CostSpec::log_squared(report.delta0),
                                sc.subsample_atoms, sc.subsample_resamples,
                                sc.seed + 900 + ki)
                .value;
    }

    report.ceiling_pass = true;
    report.rhs_dominates = true;
    for (std::size_t t = 0; t < checkpoint_times.size(); ++t) {
        double lo = kInf, hi = 0.0;
        for (std::size_t ki = 0; ki < kappas.size(); ++ki) {
            if (kappas[ki] == 0.0) continue;
            lo = std::min(lo, report.tilde_d[ki][t]);
            hi = std::max(hi, report.tilde_d[ki][t]);
            if (report.tilde_d[ki][t] > report.rhs) report.rhs_dominates = false;
        }
        if (lo > 0.0) report.max_min_ratio = std::max(report.max_min_ratio, hi / lo);
        if (lo <= 0.0 || hi / lo >= 3.0) report.ceiling_pass = false;
    }

    // rate of the fixed-delta distance in kappa
    std::vector<double> lx, ly;
    for (std::size_t ki = 0; ki < kappas.size(); ++ki)
        if (kappas[ki] > 0.0 && report.tilde_d_fixed_delta[ki] > 0.0) {
            lx.push_back(std::log(kappas[ki]));
            ly.push_back(std::log(report.tilde_d_fixed_delta[ki]));
        }
    if (lx.size() >= 2) report.fitted_slope = fit_slope(lx, ly);
    return report;
}

UniquenessReport uniqueness_diagnostic(const ParticleCloud& mu, const ParticleCloud& nu,
                                       std::span<const int> ns,
                                       std::span<const double> kappas) {
    UniquenessReport report;
    report.ns.assign(ns.begin(), ns.end());
    report.kappas.assign(kappas.begin(), kappas.end());
    for (int n : ns) {
        const double delta = 1.0 / static_cast<double>(n);
        const auto plan = transport::solve_exact(mu, nu, transport::CostSpec::log_squared(delta));
        report.tilde_d.push_back(plan.cost);
        std::vector<double> tails, cheb;
        for (double kappa : kappas) {
            double tail = 0.0;
            for (const auto& e : plan.entries) {
                const double dist = dist2(mu.point(static_cast<std::size_t>(e.i)),
                                          nu.point(static_cast<std::size_t>(e.j)));
                if (dist > kappa) tail += e.mass;
            }
            tails.push_back(tail);
            cheb.push_back(plan.cost / std::log1p(sqr(static_cast<double>(n) * kappa)));
        }
        report.tail_mass.push_back(std::move(tails));
        report.chebyshev.push_back(std::move(cheb));
    }
    // Diagonal concentration: no plan mass stays off the diagonal band at the
    // finest scale.
    double worst = 0.0;
    for (double t : report.tail_mass.back()) worst = std::max(worst, t);
    report.concentrated = worst < 1e-9;
    return report;
}

}  // namespace fpstab::stability
