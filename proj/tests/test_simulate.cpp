#include <cmath>

#include "doctest.h"
#include "fpstab/simulate.hpp"

using namespace fpstab;
using namespace fpstab::simulate;
using measures::ParticleCloud;
using measures::uniform_cloud;

namespace {

CoefficientField field_1d(std::function<double(double)> b, double sigma, double horizon = 1.0) {
    CoefficientField f = coefficients::zero_field(1, 1, horizon);
    f.drift = [b = std::move(b)](double, std::span<const double> x, std::span<double> out) {
        out[0] = b(x[0]);
    };
    f.sigma = [sigma](double, std::span<const double>, std::span<double> out) {
        out[0] = sigma;
    };
    return f;
}

InitialCoupling diagonal_init(const ParticleCloud& cloud) {
    InitialCoupling ic;
    ic.dim = cloud.dim;
    ic.count = cloud.size();
    ic.pairs.resize(ic.count * 2);
    for (std::size_t i = 0; i < ic.count; ++i) {
        ic.pairs[2 * i] = cloud.points[i];
        ic.pairs[2 * i + 1] = cloud.points[i];
    }
    return ic;
}

}  // namespace

TEST_CASE("initial coupling sampling") {
    auto dirac = uniform_cloud(1, {0.0});
    auto same = sample_initial_coupling(dirac, dirac, transport::CostSpec::log_squared(1.0),
                                        100, 3);
    for (double v : same.pairs) CHECK(v == 0.0);
    CHECK(same.plan_cost == 0.0);

    // equal atoms couple diagonally: every sampled pair has equal components
    auto two = uniform_cloud(1, {0.0, 1.0});
    auto diag = sample_initial_coupling(two, two, transport::CostSpec::log_squared(1.0),
                                        2000, 5);
    for (std::size_t k = 0; k < diag.count; ++k)
        CHECK(diag.pairs[2 * k] == diag.pairs[2 * k + 1]);

    // empirical frequencies of the 2x2 optimal plan within 0.01 at N = 1e5
    auto mu = uniform_cloud(1, {0.0, 1.0});
    auto nu = uniform_cloud(1, {0.0, 2.0});
    auto ic = sample_initial_coupling(mu, nu, transport::CostSpec::log_squared(1.0), 100000, 7);
    double f00 = 0.0, f12 = 0.0;
    for (std::size_t k = 0; k < ic.count; ++k) {
        if (ic.pairs[2 * k] == 0.0 && ic.pairs[2 * k + 1] == 0.0) f00 += 1.0;
        if (ic.pairs[2 * k] == 1.0 && ic.pairs[2 * k + 1] == 2.0) f12 += 1.0;
    }
    f00 /= static_cast<double>(ic.count);
    f12 /= static_cast<double>(ic.count);
    CHECK(f00 == doctest::Approx(0.5).epsilon(0.02));
    CHECK(f12 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("frozen and identical dynamics") {
    auto still = field_1d([](double) { return 0.0; }, 0.0);
    auto init = diagonal_init(uniform_cloud(1, {0.4, -0.7, 2.0}));
    SdeScheme scheme;
    scheme.step = 0.01;
    scheme.steps_per_frame = 10;
    auto ens = evolve_coupled(still, still, init, scheme, 1.0);
    for (const auto& frame : ens.first) {
        CHECK(frame[0] == 0.4);
        CHECK(frame[1] == -0.7);
        CHECK(frame[2] == 2.0);
    }

    // identical fields, identical init, shared noise: Z stays exactly zero
    auto ou = field_1d([](double x) { return -x; }, 1.0);
    auto ens2 = evolve_coupled(ou, ou, init, scheme, 1.0);
    for (std::size_t f = 0; f < ens2.times.size(); ++f)
        for (std::size_t i = 0; i < ens2.count; ++i)
            CHECK(ens2.first[f][i] == ens2.second[f][i]);

    auto curve = coupled_cost_curve(ens2, transport::CostSpec::log_squared(0.5));
    for (const auto& pt : curve) CHECK(pt.mean == 0.0);

    // frozen pairs at distance delta: cost is exactly log 2
    InitialCoupling apart;
    apart.dim = 1;
    apart.count = 3;
    apart.pairs = {0.0, 0.5, 1.0, 1.5, -2.0, -1.5};
    auto ens3 = evolve_coupled(still, still, apart, scheme, 1.0);
    auto curve3 = coupled_cost_curve(ens3, transport::CostSpec::log_squared(0.5));
    for (const auto& pt : curve3) CHECK(pt.mean == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("determinism given the seed") {
    auto ou = field_1d([](double x) { return -x; }, 0.7);
    auto init = diagonal_init(uniform_cloud(1, std::vector<double>(64, 0.0)));
    SdeScheme scheme;
    scheme.step = 1e-2;
    scheme.steps_per_frame = 25;
    scheme.seed = 12345;
    auto a = evolve_coupled(ou, ou, init, scheme, 1.0);
    auto b = evolve_coupled(ou, ou, init, scheme, 1.0);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    scheme.seed = 12346;
    auto c = evolve_coupled(ou, ou, init, scheme, 1.0);
    CHECK(a.first != c.first);
}

TEST_CASE("terminal variance of the mean-reverting example") {
    const std::size_t n = 20000;
    auto ou = field_1d([](double x) { return -x; }, 1.0);
    auto init = diagonal_init(uniform_cloud(1, std::vector<double>(n, 0.0)));
    SdeScheme scheme;
    scheme.step = 1e-3;
    scheme.steps_per_frame = 1000;
    scheme.seed = 99;
    auto ens = evolve_single(ou, uniform_cloud(1, std::vector<double>(n, 0.0)), scheme, 1.0);
    auto cloud = marginal(ens, ens.times.size() - 1);
    double mean = 0.0, var = 0.0;
    for (double x : cloud.points) mean += x;
    mean /= static_cast<double>(n);
    for (double x : cloud.points) var += sqr(x - mean);
    var /= static_cast<double>(n - 1);
    const double exact = 0.5 * (1.0 - std::exp(-2.0));
    const double se = exact * std::sqrt(2.0 / static_cast<double>(n));
    CHECK(std::abs(var - exact) <= 3.0 * se + 2e-3);
}

TEST_CASE("brownian marginal variance") {
    const std::size_t n = 20000;
    auto bm = field_1d([](double) { return 0.0; }, 1.0);
    SdeScheme scheme;
    scheme.step = 1e-2;
    scheme.steps_per_frame = 100;
    scheme.seed = 5;
    auto ens = evolve_single(bm, uniform_cloud(1, std::vector<double>(n, 0.0)), scheme, 1.0);
    CHECK(marginal(ens, 0).points == std::vector<double>(n, 0.0));
    auto cloud = marginal(ens, ens.times.size() - 1);
    double var = 0.0;
    for (double x : cloud.points) var += x * x;
    var /= static_cast<double>(n);
    CHECK(std::abs(var - 1.0) <= 3.0 * std::sqrt(2.0 / static_cast<double>(n)));
}

TEST_CASE("coupled cost curve tracks the deterministic gap") {
    // b1 = -x, b2 = -x + 0.1, sigma = 0: |Z_t| = 0.1 (1 - e^{-t})
    auto f1 = field_1d([](double x) { return -x; }, 0.0);
    auto f2 = field_1d([](double x) { return -x + 0.1; }, 0.0);
    auto init = diagonal_init(uniform_cloud(1, std::vector<double>(8, 0.0)));
    SdeScheme scheme;
    scheme.step = 1e-3;
    scheme.steps_per_frame = 250;
    auto ens = evolve_coupled(f1, f2, init, scheme, 1.0);
    const double delta = 0.05;
    auto curve = coupled_cost_curve(ens, transport::CostSpec::log_squared(delta));
    for (std::size_t f = 0; f < curve.size(); ++f) {
        const double z = 0.1 * (1.0 - std::exp(-curve[f].t));
        const double expected = std::log1p(sqr(z / delta));
        CHECK(curve[f].mean == doctest::Approx(expected).epsilon(0.02));
        CHECK(curve[f].std_error == doctest::Approx(0.0));
    }
}

TEST_CASE("weak order one in the drift") {
    // deterministic linear decay: halving h halves the terminal mean error
    const double exact = std::exp(-1.0);
    double prev_err = 0.0;
    std::vector<double> errs;
    for (double h : {0.05, 0.025, 0.0125}) {
        auto ou = field_1d([](double x) { return -x; }, 0.0);
        SdeScheme scheme;
        scheme.step = h;
        scheme.steps_per_frame = static_cast<int>(std::lround(1.0 / h));
        auto ens = evolve_single(ou, uniform_cloud(1, {1.0}), scheme, 1.0);
        errs.push_back(std::abs(ens.states.back()[0] - exact));
    }
    CHECK(errs[0] / errs[1] > 1.7);
    CHECK(errs[0] / errs[1] < 2.3);
    CHECK(errs[1] / errs[2] > 1.7);
    CHECK(errs[1] / errs[2] < 2.3);
    (void)prev_err;
}

TEST_CASE("coupling admissibility: marginals match single runs in law") {
    const std::size_t n = 10000;
    auto f1 = field_1d([](double x) { return -x; }, 1.0);
    auto f2 = field_1d([](double x) { return -x + 0.05; }, 1.0);
    auto init_cloud = uniform_cloud(1, std::vector<double>(n, 0.0));
    SdeScheme scheme;
    scheme.step = 2e-3;
    scheme.steps_per_frame = 250;
    scheme.seed = 31;
    auto ens = evolve_coupled(f1, f2, diagonal_init(init_cloud), scheme, 1.0);
    auto [m1, m2] = marginals(ens, ens.times.size() - 1);

    SdeScheme other = scheme;
    other.seed = 77;  // independent noise
    auto s1 = evolve_single(f1, init_cloud, other, 1.0);
    auto s2 = evolve_single(f2, init_cloud, other, 1.0);
    auto r1 = two_sample_energy_test(m1, marginal(s1, s1.times.size() - 1), 199, 13);
    auto r2 = two_sample_energy_test(m2, marginal(s2, s2.times.size() - 1), 199, 14);
    CHECK(r1.p_value >= 0.01);
    CHECK(r2.p_value >= 0.01);

    // and the test does reject genuinely different laws
    auto shifted = m1;
    for (auto& x : shifted.points) x += 0.12;
    CHECK(two_sample_energy_test(m1, shifted, 199, 15).p_value < 0.01);
}

TEST_CASE("ensemble cost upper-bounds the subsampled transport value") {
    auto f1 = field_1d([](double x) { return -x; }, 0.5);
    auto f2 = field_1d([](double x) { return -x + 0.2; }, 0.5);
    const std::size_t n = 20000;
    auto init_cloud = uniform_cloud(1, std::vector<double>(n, 0.0));
    SdeScheme scheme;
    scheme.step = 2e-3;
    scheme.steps_per_frame = 125;
    scheme.seed = 8;
    auto ens = evolve_coupled(f1, f2, diagonal_init(init_cloud), scheme, 1.0);
    const auto spec = transport::CostSpec::log_squared(0.1);
    auto curve = coupled_cost_curve(ens, spec);
    for (std::size_t f = 1; f < ens.times.size(); f += 2) {
        auto [ma, mb] = marginals(ens, f);
        // n = 100 subsamples carry O(1/n) matching noise at this delta; the
        // tolerance is estimated from the spread of independent resamples
        double best = kInf, worst = 0.0;
        for (int r = 0; r < 5; ++r) {
            auto sa = subsample(ma, 100, 100 + f + 1000 * static_cast<std::uint64_t>(r));
            auto sb = subsample(mb, 100, 200 + f + 1000 * static_cast<std::uint64_t>(r));
            const double ot = transport::solve_exact(sa, sb, spec).cost;
            best = std::min(best, ot);
            worst = std::max(worst, ot);
        }
        const double subsampling_tol = (worst - best) + 0.02;
        CHECK(best <= curve[f].mean + 3.0 * curve[f].std_error + subsampling_tol);
    }
}

TEST_CASE("state guard reports the blowup") {
    auto cubic = field_1d([](double x) { return x * x * x; }, 0.0);
    SdeScheme scheme;
    scheme.step = 0.1;
    scheme.steps_per_frame = 1;
    CHECK_THROWS_WITH_AS(
        evolve_single(cubic, uniform_cloud(1, {3.0}), scheme, 10.0),
        doctest::Contains("blowup-error"), Error);
}

TEST_CASE("box reflection keeps states inside") {
    auto drift_out = field_1d([](double) { return 5.0; }, 0.3);
    SdeScheme scheme;
    scheme.step = 1e-2;
    scheme.steps_per_frame = 10;
    scheme.boundary = SdeScheme::Boundary::ReflectAtBox;
    scheme.box = measures::BoxGrid(-1.0, 1.0, 4);
    auto ens = evolve_single(drift_out, uniform_cloud(1, std::vector<double>(32, 0.0)),
                             scheme, 2.0);
    for (const auto& frame : ens.states)
        for (double x : frame) {
            CHECK(x >= -1.0);
            CHECK(x <= 1.0);
        }
}
