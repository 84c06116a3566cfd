#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fpstab/measures.hpp"
#include "fpstab/rng.hpp"
#include "oracles.hpp"

using namespace fpstab;
using namespace fpstab::measures;

TEST_CASE("box grid invariants") {
    CHECK_THROWS_AS(BoxGrid(0.0, 1.0, 1), Error);
    CHECK_THROWS_AS(BoxGrid(1.0, 1.0, 4), Error);
    BoxGrid g(-2.0, 2.0, 8);
    CHECK(g.cell_volume() == doctest::Approx(0.5));
    CHECK(g.center(0, 0) == doctest::Approx(-1.75));
    BoxGrid g2(0.0, 1.0, 4, 0.0, 2.0, 5);
    CHECK(g2.cell_volume() == doctest::Approx(0.25 * 0.4));
    CHECK(g2.size() == 20);
}

TEST_CASE("lr_norm on constant and hat densities") {
    // constant density 1/V on a box of volume V
    BoxGrid g(0.0, 2.0, 100);
    GridDensity u(g, std::vector<double>(100, 0.5));
    CHECK(lr_norm(u, 1.0) == doctest::Approx(1.0));
    CHECK(lr_norm(u, kInf) == doctest::Approx(0.5));

    // hat function u(x) = 1 - |x-1| on [0,2]: closed form L2 norm sqrt(2/3),
    // cross-checked by an independent fine-grid quadrature
    BoxGrid gh(0.0, 2.0, 2000);
    std::vector<double> hat(2000);
    for (std::size_t c = 0; c < 2000; ++c) hat[c] = 1.0 - std::abs(gh.center(c, 0) - 1.0);
    GridDensity uh(gh, std::move(hat));
    const double quad = std::sqrt(
        oracles::riemann([](double x) { return sqr(1.0 - std::abs(x - 1.0)); }, 0.0, 2.0));
    CHECK(lr_norm(uh, 2.0) == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-5));
    CHECK(lr_norm(uh, 2.0) == doctest::Approx(quad).epsilon(1e-5));

    CHECK_THROWS_WITH_AS(lr_norm(u, 0.5), doctest::Contains("invalid-exponent"), Error);
}

TEST_CASE("lr_norm monotone in r on a unit-volume box") {
    BoxGrid g(0.0, 1.0, 64);
    RngStream rng(7, 1, 0);
    std::vector<double> vals(64);
    double mass = 0.0;
    for (std::size_t c = 0; c < 64; ++c) {
        vals[c] = rng.uniform(c) + 0.01;
        mass += vals[c] * g.cell_volume();
    }
    for (auto& v : vals) v /= mass;
    GridDensity u(g, std::move(vals));
    double prev = 0.0;
    for (double r : {1.0, 1.5, 2.0, 4.0, 16.0, kInf}) {
        const double cur = lr_norm(u, r);
        CHECK(cur >= prev - 1e-12);
        prev = cur;
    }
}

TEST_CASE("log moment of atoms") {
    auto dirac0 = uniform_cloud(1, {0.0});
    CHECK(log_moment(dirac0) == doctest::Approx(0.0));
    auto dirac1 = uniform_cloud(2, {1.0, 0.0});
    CHECK(log_moment(dirac1) == doctest::Approx(std::log(2.0)));
    auto three = uniform_cloud(1, {-1.0, 0.0, 1.0});
    CHECK(log_moment(three) == doctest::Approx(2.0 / 3.0 * std::log(2.0)));
    CHECK(summarize(three).in_p_log);
}

TEST_CASE("pushforward transforms points, keeps weights") {
    auto cloud = ParticleCloud(1, {-1.0, 1.0}, {0.25, 0.75});
    auto same = pushforward(cloud, [](std::span<const double> x, std::span<double> y) {
        y[0] = x[0];
    });
    CHECK(same.points == cloud.points);
    auto shifted = pushforward(cloud, [](std::span<const double> x, std::span<double> y) {
        y[0] = x[0] + 2.5;
    });
    CHECK(shifted.points[0] == doctest::Approx(1.5));
    CHECK(shifted.weights == cloud.weights);
    auto curled = pushforward(cloud, [](std::span<const double> x, std::span<double> y) {
        y[0] = x[0] + 0.5 * std::tanh(x[0]);
    });
    CHECK(curled.points[0] == doctest::Approx(-1.3807970779778824).epsilon(1e-12));
    CHECK(curled.points[1] == doctest::Approx(1.3807970779778824).epsilon(1e-12));

    CHECK_THROWS_WITH_AS(
        pushforward(cloud, [](std::span<const double> x, std::span<double> y) {
            y[0] = std::log(x[0]);  // -1 -> nan
        }),
        doctest::Contains("transform-domain-error"), Error);
}

TEST_CASE("log moment consistent under translation") {
    auto cloud = uniform_cloud(1, {-0.3, 0.4, 2.0});
    const double c = 1.7;
    auto shifted = pushforward(cloud, [c](std::span<const double> x, std::span<double> y) {
        y[0] = x[0] + c;
    });
    double direct = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        direct += cloud.weights[i] * std::log1p(sqr(cloud.points[i] + c));
    CHECK(log_moment(shifted) == doctest::Approx(direct).epsilon(1e-14));
}

TEST_CASE("histogram density from clouds") {
    BoxGrid g(0.0, 1.0, 10);
    auto one = uniform_cloud(1, {0.55});
    auto d = density_from_cloud(one, g);
    CHECK(d.values[5] == doctest::Approx(10.0));
    CHECK(d.leakage == 0.0);
    d.check_mass();

    // uniform cloud at the cell centers -> constant density
    std::vector<double> pts;
    for (std::size_t c = 0; c < 10; ++c) pts.push_back(g.center(c, 0));
    auto uc = uniform_cloud(1, std::move(pts));
    auto du = density_from_cloud(uc, g);
    for (double v : du.values) CHECK(v == doctest::Approx(1.0));

    // out-of-box mass becomes leakage; mass accounting stays exact
    auto out = ParticleCloud(1, {0.5, 3.0}, {0.75, 0.25});
    auto dd = density_from_cloud(out, g);
    CHECK(dd.leakage == doctest::Approx(0.25));
    dd.check_mass();
}

TEST_CASE("gaussian histogram error at N = 1e5") {
    const std::size_t n = 100000;
    RngStream rng(42, 2, 0);
    std::vector<double> pts(n);
    for (std::size_t i = 0; i < n; ++i) pts[i] = rng.normal(i);
    auto cloud = uniform_cloud(1, std::move(pts));
    BoxGrid g(-6.0, 6.0, 60);
    auto d = density_from_cloud(cloud, g);
    double l1 = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) {
        const double x = g.center(c, 0);
        const double exact = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        l1 += std::abs(d.values[c] - exact) * g.cell_volume();
    }
    l1 += d.leakage;
    CHECK(l1 < 0.02);
}

TEST_CASE("cloud and density serialization round-trips") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "fpstab_meas_test";
    fs::create_directories(dir);
    BoxGrid g(-1.0, 1.0, 16);
    std::vector<double> vals(16, 0.5);
    GridDensity d(g, std::move(vals), 0.75, 0.0);
    save_density(d, (dir / "d.csv").string(), (dir / "d.json").string());
    auto d2 = load_density((dir / "d.csv").string(), (dir / "d.json").string());
    CHECK(d2.grid == d.grid);
    CHECK(d2.values == d.values);
    CHECK(d2.time == d.time);

    auto cloud = ParticleCloud(2, {0.0, 1.0, 2.0, -1.0}, {0.5, 0.5}, 0.25);
    save_cloud(cloud, (dir / "c.csv").string(), (dir / "c.json").string());
    auto c2 = load_cloud((dir / "c.csv").string(), (dir / "c.json").string());
    CHECK(c2.dim == 2);
    CHECK(c2.points == cloud.points);
    CHECK(c2.weights == cloud.weights);
    fs::remove_all(dir);
}

TEST_CASE("quantile clouds share levels across densities") {
    BoxGrid g(-4.0, 4.0, 200);
    std::vector<double> v1(g.size()), v2(g.size());
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) {
        const double x = g.center(c, 0);
        v1[c] = std::exp(-0.5 * x * x);
        v2[c] = std::exp(-0.5 * sqr(x - 0.3));
        m1 += v1[c] * g.cell_volume();
        m2 += v2[c] * g.cell_volume();
    }
    for (auto& v : v1) v /= m1;
    for (auto& v : v2) v /= m2;
    GridDensity d1(g, v1), d2(g, v2);
    auto a = quantile_cloud_1d(d1, 200, 0.37);
    auto b = quantile_cloud_1d(d1, 200, 0.37);
    CHECK(a.points == b.points);  // identical densities, identical clouds
    auto c2 = quantile_cloud_1d(d2, 200, 0.37);
    double mean_shift = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean_shift += c2.points[i] - a.points[i];
    mean_shift /= static_cast<double>(a.size());
    CHECK(mean_shift == doctest::Approx(0.3).epsilon(0.02));

    BoxGrid g2(-3.0, 3.0, 60, -3.0, 3.0, 60);
    std::vector<double> w(g2.size());
    double mw = 0.0;
    std::array<double, 2> x{};
    for (std::size_t c = 0; c < g2.size(); ++c) {
        g2.center(c, x);
        w[c] = std::exp(-0.5 * (x[0] * x[0] + x[1] * x[1]));
        mw += w[c] * g2.cell_volume();
    }
    for (auto& v : w) v /= mw;
    GridDensity dd(g2, std::move(w));
    auto qa = quantile_cloud_2d(dd, 150, 0.4, 0.9);
    auto qb = quantile_cloud_2d(dd, 150, 0.4, 0.9);
    CHECK(qa.points == qb.points);
    const auto summary = summarize(qa, 2.0);
    CHECK(summary.alpha_moment == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("sampling from a density matches its histogram") {
    BoxGrid g(-3.0, 3.0, 30);
    std::vector<double> vals(g.size());
    for (std::size_t c = 0; c < g.size(); ++c)
        vals[c] = std::exp(-0.5 * sqr(g.center(c, 0)));
    double mass = 0.0;
    for (double v : vals) mass += v * g.cell_volume();
    for (auto& v : vals) v /= mass;
    GridDensity d(g, std::move(vals));
    auto cloud = sample_from_density(d, 50000, 9);
    auto back = density_from_cloud(cloud, g);
    double l1 = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c)
        l1 += std::abs(back.values[c] - d.values[c]) * g.cell_volume();
    CHECK(l1 < 0.03);
}
