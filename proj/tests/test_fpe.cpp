#include <cmath>

#include "doctest.h"
#include "fpstab/fpe.hpp"
#include "fpstab/simulate.hpp"

using namespace fpstab;
using namespace fpstab::fpe;
using measures::BoxGrid;
using measures::GridDensity;

namespace {

GridDensity gaussian_density(const BoxGrid& g, double mean, double var) {
    std::vector<double> vals(g.size());
    double mass = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) {
        vals[c] = std::exp(-0.5 * sqr(g.center(c, 0) - mean) / var);
        mass += vals[c] * g.cell_volume();
    }
    for (auto& v : vals) v /= mass;
    return GridDensity(g, std::move(vals));
}

CoefficientField make_field(std::function<double(double, double)> b,
                            std::function<double(double)> sigma) {
    CoefficientField f = coefficients::zero_field(1, 1, 1.0);
    f.drift = [b = std::move(b)](double t, std::span<const double> x, std::span<double> out) {
        out[0] = b(t, x[0]);
    };
    f.sigma = [s = std::move(sigma)](double, std::span<const double> x, std::span<double> out) {
        out[0] = s(x[0]);
    };
    return f;
}

double l1_against_gaussian(const GridDensity& d, double mean, double var) {
    double l1 = 0.0;
    for (std::size_t c = 0; c < d.grid.size(); ++c) {
        const double x = d.grid.center(c, 0);
        const double exact = std::exp(-0.5 * sqr(x - mean) / var) / std::sqrt(2.0 * M_PI * var);
        l1 += std::abs(d.values[c] - exact) * d.grid.cell_volume();
    }
    return l1;
}

}  // namespace

TEST_CASE("frozen equation keeps the density") {
    BoxGrid g(-6.0, 6.0, 240);
    FpeProblem pb;
    pb.field = make_field([](double, double) { return 0.0; }, [](double) { return 0.0; });
    pb.initial = gaussian_density(g, 0.0, 1.0);
    pb.kappa = 0.0;
    pb.horizon = 1.0;
    auto sol = solve(pb, 100, 4);
    for (std::size_t c = 0; c < g.size(); ++c)
        CHECK(sol.frames.back().values[c] == pb.initial.values[c]);
}

TEST_CASE("pure diffusion against the heat kernel") {
    BoxGrid g(-6.0, 6.0, 1200);
    FpeProblem pb;
    pb.field = make_field([](double, double) { return 0.0; }, [](double) { return 1.0; });
    pb.initial = gaussian_density(g, 0.0, 0.1);
    pb.kappa = 1.0;
    pb.horizon = 0.5;
    const long steps = static_cast<long>(std::ceil(pb.horizon / suggested_step(pb)));
    auto sol = solve(pb, steps, 4);
    CHECK(l1_against_gaussian(sol.frames.back(), 0.0, 0.6) < 0.01);
    CHECK(sol.clipped_mass <= 1e-12);
    for (const auto& f : sol.frames) {
        CHECK(f.mass() + f.leakage == doctest::Approx(1.0).epsilon(1e-9));
        for (double v : f.values) CHECK(v >= 0.0);
    }
}

TEST_CASE("transport by a linear field against the exact flow") {
    BoxGrid g(-6.0, 6.0, 1200);
    FpeProblem pb;
    pb.field = make_field([](double, double x) { return -x; }, [](double) { return 0.0; });
    pb.initial = gaussian_density(g, 0.0, 1.0);
    pb.kappa = 0.0;
    pb.horizon = 1.0;
    const long steps = static_cast<long>(std::ceil(pb.horizon / suggested_step(pb)));
    auto sol = solve(pb, steps, 4);
    CHECK(l1_against_gaussian(sol.frames.back(), 0.0, std::exp(-2.0)) < 0.02);
}

TEST_CASE("compact bump advected by a constant field") {
    BoxGrid g(-6.0, 6.0, 600);
    std::vector<double> vals(g.size(), 0.0);
    double mass = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) {
        const double x = g.center(c, 0);
        if (std::abs(x + 2.0) < 1.0) vals[c] = sqr(1.0 - sqr(x + 2.0));
        mass += vals[c] * g.cell_volume();
    }
    for (auto& v : vals) v /= mass;
    FpeProblem pb;
    pb.field = make_field([](double, double) { return 1.5; }, [](double) { return 0.0; });
    pb.initial = GridDensity(g, std::move(vals));
    pb.kappa = 0.0;
    pb.horizon = 1.0;
    const long steps = static_cast<long>(std::ceil(pb.horizon / suggested_step(pb)));
    auto sol = solve(pb, steps, 2);

    const auto center_of_mass = [&](const GridDensity& d) {
        double m = 0.0;
        for (std::size_t c = 0; c < d.grid.size(); ++c)
            m += d.grid.center(c, 0) * d.values[c] * d.grid.cell_volume();
        return m;
    };
    const double moved = center_of_mass(sol.frames.back()) - center_of_mass(pb.initial);
    CHECK(std::abs(moved - 1.5) <= 2.0 * g.spacing(0));
}

TEST_CASE("step restriction is enforced with a suggestion") {
    BoxGrid g(-6.0, 6.0, 600);
    FpeProblem pb;
    pb.field = make_field([](double, double x) { return -x; }, [](double) { return 1.0; });
    pb.initial = gaussian_density(g, 0.0, 1.0);
    pb.horizon = 1.0;
    CHECK_THROWS_WITH_AS(solve(pb, 10, 2), doctest::Contains("step-size-error"), Error);
    CHECK_THROWS_WITH_AS(solve(pb, 10, 2), doctest::Contains("suggested step"), Error);
}

TEST_CASE("divergence-form conversion") {
    // constant sigma: drift unchanged
    auto f = make_field([](double, double x) { return -x; }, [](double) { return 0.7; });
    auto g1 = divergence_form_convert(f);
    const double x0 = 0.4;
    double b0, b1;
    g1.drift(0.0, {&x0, 1}, {&b0, 1});
    f.drift(0.0, {&x0, 1}, {&b1, 1});
    CHECK(b0 == doctest::Approx(b1).epsilon(1e-8));

    // sigma(x) = x gives a = x^2 and the drift picks up + x
    auto fx = make_field([](double, double) { return 0.0; }, [](double x) { return x; });
    auto gx = divergence_form_convert(fx);
    for (double x : {-1.2, 0.3, 2.0}) {
        double b;
        gx.drift(0.0, {&x, 1}, {&b, 1});
        CHECK(b == doctest::Approx(x).epsilon(1e-6));
    }
}

TEST_CASE("flux-form solve matches the converted non-divergence solve") {
    BoxGrid g(-6.0, 6.0, 1200);
    auto field = make_field([](double, double x) { return -0.5 * x; },
                            [](double x) { return 0.3 + 0.05 * std::tanh(x); });
    FpeProblem flux;
    flux.field = field;
    flux.initial = gaussian_density(g, 0.0, 0.5);
    flux.kappa = 1.0;
    flux.horizon = 0.5;
    flux.form = FpeProblem::DiffusionForm::FluxForm;
    const long steps = static_cast<long>(std::ceil(flux.horizon / suggested_step(flux)));
    auto sol_flux = solve(flux, steps, 2);

    FpeProblem conv = flux;
    conv.field = divergence_form_convert(field);
    conv.form = FpeProblem::DiffusionForm::NonDivergence;
    auto sol_conv = solve(conv, steps, 2);

    double l1 = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c)
        l1 += std::abs(sol_flux.frames.back().values[c] - sol_conv.frames.back().values[c]) *
              g.cell_volume();
    CHECK(l1 < 0.01);
}

TEST_CASE("a-priori norm bound") {
    BoxGrid g(-6.0, 6.0, 400);
    // divergence-free (constant) drift: norms cannot grow beyond slack
    FpeProblem pb;
    pb.field = make_field([](double, double) { return 0.4; }, [](double) { return 0.5; });
    pb.initial = gaussian_density(g, 0.0, 1.0);
    pb.horizon = 1.0;
    const long steps = static_cast<long>(std::ceil(pb.horizon / suggested_step(pb)));
    auto sol = solve(pb, steps, 8);
    for (double q : {2.0, 4.0}) {
        auto rep = lq_apriori_check(sol, pb.field, q);
        CHECK(rep.bound_factor == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(rep.pass);
    }

    // contracting drift: bound factor exp((1-1/q) T)
    FpeProblem pc = pb;
    pc.field = make_field([](double, double x) { return -x; }, [](double) { return 0.5; });
    const long steps2 = static_cast<long>(std::ceil(pc.horizon / suggested_step(pc)));
    auto sol2 = solve(pc, steps2, 8);
    auto rep2 = lq_apriori_check(sol2, pc.field, 2.0);
    CHECK(rep2.bound_factor == doctest::Approx(std::exp(0.5)).epsilon(1e-3));
    CHECK(rep2.pass);

    // the bound value is kappa-free: identical factor across kappa
    for (double kappa : {0.0, 0.1, 1.0}) {
        FpeProblem pk = pc;
        pk.kappa = kappa;
        const long s = static_cast<long>(std::ceil(pk.horizon / suggested_step(pk)));
        auto solk = solve(pk, s, 4);
        auto repk = lq_apriori_check(solk, pk.field, 2.0);
        CHECK(repk.bound_factor == doctest::Approx(rep2.bound_factor).epsilon(1e-12));
        CHECK(repk.pass);
    }
}

TEST_CASE("grid solution is consistent with the particle law") {
    BoxGrid g(-6.0, 6.0, 240);
    auto field = make_field([](double, double x) { return -x; }, [](double) { return 1.0; });
    FpeProblem pb;
    pb.field = field;
    pb.initial = gaussian_density(g, 0.0, 1.0);
    pb.horizon = 1.0;
    const long steps = static_cast<long>(std::ceil(pb.horizon / suggested_step(pb)));
    auto sol = solve(pb, steps, 2);

    simulate::SdeScheme scheme;
    scheme.step = 2e-3;
    scheme.steps_per_frame = 500;
    scheme.seed = 21;
    auto init_cloud = measures::sample_from_density(pb.initial, 40000, 17);
    auto ens = simulate::evolve_single(field, init_cloud, scheme, 1.0);
    auto hist = measures::density_from_cloud(simulate::marginal(ens, ens.times.size() - 1), g);
    double l1 = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c)
        l1 += std::abs(hist.values[c] - sol.frames.back().values[c]) * g.cell_volume();
    l1 += hist.leakage;
    CHECK(l1 < 0.05);
}

TEST_CASE("2d diffusion spreads mass symmetrically and conserves it") {
    BoxGrid g(-3.0, 3.0, 60, -3.0, 3.0, 60);
    std::vector<double> vals(g.size(), 0.0);
    double mass = 0.0;
    std::array<double, 2> x{};
    for (std::size_t c = 0; c < g.size(); ++c) {
        g.center(c, x);
        vals[c] = std::exp(-(x[0] * x[0] + x[1] * x[1]) / 0.5);
        mass += vals[c] * g.cell_volume();
    }
    for (auto& v : vals) v /= mass;
    CoefficientField f = coefficients::zero_field(2, 2, 0.25);
    f.drift = [](double, std::span<const double>, std::span<double> b) { b[0] = b[1] = 0.0; };
    f.sigma = [](double, std::span<const double>, std::span<double> s) {
        s[0] = 1.0; s[1] = 0.0; s[2] = 0.0; s[3] = 1.0;
    };
    FpeProblem pb;
    pb.field = f;
    pb.initial = GridDensity(g, std::move(vals));
    pb.horizon = 0.25;
    const long steps = static_cast<long>(std::ceil(pb.horizon / suggested_step(pb)));
    auto sol = solve(pb, steps, 2);
    const auto& last = sol.frames.back();
    CHECK(last.mass() + last.leakage == doctest::Approx(1.0).epsilon(1e-9));
    // exact solution: product gaussian with variance 0.25 + t
    double l1 = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) {
        g.center(c, x);
        const double var = 0.25 + pb.horizon;
        const double exact = std::exp(-(x[0] * x[0] + x[1] * x[1]) / (2.0 * var)) /
                             (2.0 * M_PI * var);
        l1 += std::abs(last.values[c] - exact) * g.cell_volume();
    }
    CHECK(l1 < 0.05);
}
