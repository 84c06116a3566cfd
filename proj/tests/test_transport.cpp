#include <cmath>

#include "doctest.h"
#include "fpstab/rng.hpp"
#include "fpstab/transport.hpp"
#include "oracles.hpp"

using namespace fpstab;
using namespace fpstab::transport;
using measures::ParticleCloud;
using measures::uniform_cloud;

namespace {

ParticleCloud random_cloud(int dim, std::size_t atoms, std::uint64_t seed, double scale = 2.0) {
    RngStream rng(seed, 4, 0);
    std::vector<double> pts(atoms * static_cast<std::size_t>(dim));
    std::vector<double> w(atoms);
    double sum = 0.0;
    for (std::size_t i = 0; i < atoms; ++i) {
        for (int a = 0; a < dim; ++a)
            pts[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(a)] =
                scale * (2.0 * rng.uniform(3 * i + static_cast<std::size_t>(a)) - 1.0);
        w[i] = rng.uniform(3 * i + 2) + 0.05;
        sum += w[i];
    }
    for (auto& x : w) x /= sum;
    // kill rounding drift in the last weight
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < atoms; ++i) acc += w[i];
    w[atoms - 1] = 1.0 - acc;
    return ParticleCloud(dim, std::move(pts), std::move(w));
}

}  // namespace

TEST_CASE("cost evaluation per kind") {
    const double x0 = 0.0, y0 = 0.0;
    auto ls = CostSpec::log_squared(0.7);
    CHECK(eval_cost(ls, {&x0, 1}, {&y0, 1}) == 0.0);
    const double y1 = 0.7;
    CHECK(eval_cost(ls, {&x0, 1}, {&y1, 1}) == doctest::Approx(std::log(2.0)));
    const double y3 = 3.0;
    CHECK(eval_cost(CostSpec::power(2.0), {&x0, 1}, {&y3, 1}) == doctest::Approx(9.0));
    CHECK(eval_cost(CostSpec::log_linear(1.0), {&x0, 1}, {&y1, 1}) ==
          doctest::Approx(std::log(1.7)));
    CHECK_THROWS_AS(CostSpec::log_squared(0.0), Error);
    CHECK_THROWS_AS(CostSpec::power(0.5), Error);
    CHECK_THROWS_AS(CostSpec::osgood(1.0, nullptr), Error);
}

TEST_CASE("cost symmetry is exact") {
    RngStream rng(11, 4, 1);
    for (int it = 0; it < 200; ++it) {
        const double xs[2] = {rng.uniform(4 * it) * 4 - 2, rng.uniform(4 * it + 1) * 4 - 2};
        const double ys[2] = {rng.uniform(4 * it + 2) * 4 - 2, rng.uniform(4 * it + 3) * 4 - 2};
        for (const auto& spec : {CostSpec::log_squared(0.3), CostSpec::log_linear(2.0),
                                 CostSpec::power(3.0)}) {
            CHECK(eval_cost(spec, {xs, 2}, {ys, 2}) == eval_cost(spec, {ys, 2}, {xs, 2}));
        }
    }
}

TEST_CASE("exact solver on the two-atom example") {
    // mu = (delta_0 + delta_1)/2, nu = (delta_0 + delta_2)/2, log-squared delta=1:
    // the two couplings cost log(2)/2 (match 0->0, 1->2) and (log 5 + log 2)/2
    auto mu = uniform_cloud(1, {0.0, 1.0});
    auto nu = uniform_cloud(1, {0.0, 2.0});
    auto plan = solve_exact(mu, nu, CostSpec::log_squared(1.0));
    CHECK(plan.cost == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-12));
    CHECK(plan.marginal_error(mu.weights, nu.weights) < 1e-12);
    CHECK(plan.duality_gap < 1e-10);

    const double brute = oracles::brute_force_ot(mu, nu, CostSpec::log_squared(1.0));
    CHECK(plan.cost == doctest::Approx(brute).epsilon(1e-12));
}

TEST_CASE("identical measures couple for free") {
    auto mu = random_cloud(2, 6, 31);
    auto plan = solve_exact(mu, mu, CostSpec::log_squared(0.5));
    CHECK(plan.cost <= 1e-12);
}

TEST_CASE("dirac pair under the power cost") {
    auto mu = uniform_cloud(1, {0.0});
    auto nu = uniform_cloud(1, {1.75});
    auto plan = solve_exact(mu, nu, CostSpec::power(2.0));
    CHECK(plan.cost == doctest::Approx(sqr(1.75)));
    CHECK(wasserstein(mu, nu, 2.0) == doctest::Approx(1.75));
    CHECK(wasserstein(mu, nu, 1.0) == doctest::Approx(1.75));
}

TEST_CASE("exact solver equals vertex enumeration on small instances") {
    int checked = 0;
    for (int it = 0; it < 60; ++it) {
        const int dim = (it % 2) + 1;
        const std::size_t n = 2 + (it % 3), m = 2 + ((it / 3) % 3);
        auto mu = random_cloud(dim, n, 100 + it);
        auto nu = random_cloud(dim, m, 200 + it);
        for (const auto& spec : {CostSpec::log_squared(0.5), CostSpec::power(2.0)}) {
            const auto plan = solve_exact(mu, nu, spec);
            const double brute = oracles::brute_force_ot(mu, nu, spec);
            CHECK(std::abs(plan.cost - brute) <= 1e-10);
            CHECK(plan.marginal_error(mu.weights, nu.weights) < 1e-9);
            ++checked;
        }
    }
    CHECK(checked == 120);
}

TEST_CASE("1D wasserstein matches the quantile oracle") {
    auto a = uniform_cloud(1, {0.0, 2.0});
    auto b = uniform_cloud(1, {1.0, 3.0});
    CHECK(wasserstein_1d_quantile(a, b, 2.0) == doctest::Approx(1.0));
    CHECK(wasserstein(a, b, 2.0) == doctest::Approx(1.0));

    for (int it = 0; it < 25; ++it) {
        auto mu = random_cloud(1, 30, 300 + it);
        auto nu = random_cloud(1, 28, 400 + it);
        for (double p : {1.0, 2.0, 3.0}) {
            const double lp = std::pow(solve_exact(mu, nu, CostSpec::power(p)).cost, 1.0 / p);
            const double qo = wasserstein_1d_quantile(mu, nu, p);
            CHECK(lp == doctest::Approx(qo).epsilon(1e-9));
        }
    }
}

TEST_CASE("permuted atoms cost nothing") {
    auto a = uniform_cloud(1, {0.0, 1.0});
    auto b = uniform_cloud(1, {1.0, 0.0});
    CHECK(wasserstein(a, b, 2.0) == doctest::Approx(0.0));
}

TEST_CASE("entropic solver approximates the exact value from above") {
    auto mu = uniform_cloud(1, {0.0, 1.0});
    auto nu = uniform_cloud(1, {0.0, 2.0});
    const double exact = 0.5 * std::log(2.0);

    auto tiny = solve_entropic(mu, mu, CostSpec::log_squared(1.0), 1e-3);
    CHECK(tiny.cost <= 1e-4);

    double prev = kInf;
    for (double eps : {1e-1, 1e-2, 1e-3}) {
        auto plan = solve_entropic(mu, nu, CostSpec::log_squared(1.0), eps);
        CHECK(plan.marginal_error(mu.weights, nu.weights) < 1e-6);
        CHECK(plan.cost >= exact - 1e-9);
        CHECK(plan.cost <= prev + 1e-9);
        prev = plan.cost;
    }
    CHECK(prev == doctest::Approx(exact).epsilon(0.01));

    // 200-atom clouds against the monotone oracle
    auto big_a = random_cloud(1, 200, 77, 0.5);
    auto big_b = random_cloud(1, 200, 78, 0.5);
    auto plan = solve_entropic(big_a, big_b, CostSpec::power(1.0), 1e-3);
    const double oracle = wasserstein_1d_quantile(big_a, big_b, 1.0);
    CHECK(std::abs(plan.cost - oracle) < 1e-3);
    CHECK(plan.cost >= oracle - 1e-9);
    CHECK(plan.duality_gap < 1e-2);
}

TEST_CASE("entropic never beats exact") {
    for (int it = 0; it < 10; ++it) {
        auto mu = random_cloud(1, 12, 500 + it);
        auto nu = random_cloud(1, 15, 600 + it);
        const auto spec = CostSpec::log_squared(0.8);
        const double exact = solve_exact(mu, nu, spec).cost;
        const double ent = solve_entropic(mu, nu, spec, 1e-3).cost;
        CHECK(ent >= exact - 1e-9);
    }
}

TEST_CASE("distance relations on atoms and at random") {
    auto mu = uniform_cloud(1, {0.0});
    auto same = distance_relations(mu, mu, 1.0);
    CHECK(same.d_delta == doctest::Approx(0.0));
    CHECK(same.tilde_d_delta == doctest::Approx(0.0));
    CHECK(same.pass);

    auto nu = uniform_cloud(1, {1.0});
    auto rel = distance_relations(mu, nu, 1.0);
    CHECK(rel.d_delta == doctest::Approx(std::log(2.0)));
    CHECK(rel.tilde_d_delta == doctest::Approx(std::log(2.0)));
    CHECK(rel.pass);

    for (int it = 0; it < 50; ++it) {
        const int dim = (it % 2) + 1;
        auto a = random_cloud(dim, 5, 700 + it);
        auto b = random_cloud(dim, 5, 800 + it);
        for (double delta : {0.1, 1.0, 10.0}) {
            CHECK(distance_relations(a, b, delta).pass);
        }
    }
}

TEST_CASE("tilde-D separates distinct weighted atom sets") {
    auto mu = random_cloud(1, 6, 900);
    CHECK(solve_exact(mu, mu, CostSpec::log_squared(0.2)).cost <= 1e-12);
    auto nu = mu;
    nu.points[0] += 0.05;
    CHECK(solve_exact(mu, nu, CostSpec::log_squared(0.2)).cost > 1e-6);
}

TEST_CASE("solver guards") {
    auto mu = random_cloud(1, 40, 1000);
    auto nu = random_cloud(1, 40, 1001);
    CHECK_THROWS_WITH_AS(solve_exact(mu, nu, CostSpec::power(2.0), 100),
                         doctest::Contains("size-cap"), Error);
    auto bad = mu;
    bad.weights[0] += 0.5;  // no longer a probability vector
    CHECK_THROWS_WITH_AS(solve_exact(bad, nu, CostSpec::power(2.0)),
                         doctest::Contains("invalid-measure"), Error);
}

TEST_CASE("grid quantile wasserstein agrees with translation") {
    measures::BoxGrid g(-6.0, 6.0, 600);
    std::vector<double> v1(g.size()), v2(g.size());
    for (std::size_t c = 0; c < g.size(); ++c) {
        const double x = g.center(c, 0);
        v1[c] = std::exp(-0.5 * x * x);
        v2[c] = std::exp(-0.5 * sqr(x - 0.5));
    }
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) {
        m1 += v1[c] * g.cell_volume();
        m2 += v2[c] * g.cell_volume();
    }
    for (auto& v : v1) v /= m1;
    for (auto& v : v2) v /= m2;
    measures::GridDensity d1(g, std::move(v1)), d2(g, std::move(v2));
    CHECK(wasserstein_grid_1d(d1, d2, 2.0) == doctest::Approx(0.5).epsilon(1e-3));
    CHECK(wasserstein_grid_1d(d1, d1, 2.0) == doctest::Approx(0.0));
}
