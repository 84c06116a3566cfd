#include "fpstab/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>

#include "fpstab/rng.hpp"

namespace fpstab::simulate {

namespace {

bool clouds_identical(const ParticleCloud& a, const ParticleCloud& b) {
    return a.dim == b.dim && a.points == b.points && a.weights == b.weights;
}

void reflect_into_box(std::span<double> x, const measures::BoxGrid& box) {
    for (int a = 0; a < box.dim; ++a) {
        double v = x[static_cast<std::size_t>(a)];
        const double lo = box.lo[a], hi = box.hi[a], w = hi - lo;
        // fold into [lo, lo + 2w) then mirror
        double t = std::fmod(v - lo, 2.0 * w);
        if (t < 0.0) t += 2.0 * w;
        x[static_cast<std::size_t>(a)] = (t < w) ? lo + t : hi - (t - w);
    }
}

}  // namespace

InitialCoupling sample_initial_coupling(const ParticleCloud& mu0, const ParticleCloud& nu0,
                                        const transport::CostSpec& spec, std::size_t n,
                                        std::uint64_t seed) {
    if (mu0.dim != nu0.dim) fail("invalid-measure", "initial measures differ in dimension");
    InitialCoupling out;
    out.dim = mu0.dim;
    out.count = n;
    const std::size_t d = static_cast<std::size_t>(mu0.dim);
    out.pairs.resize(n * 2 * d);

    if (clouds_identical(mu0, nu0)) {
        // Diagonal coupling: optimal for every cost with c(x, x) = 0.
        out.plan.rows = out.plan.cols = mu0.size();
        out.plan.solver = "diagonal";
        for (std::size_t i = 0; i < mu0.size(); ++i)
            out.plan.entries.push_back({static_cast<int>(i), static_cast<int>(i),
                                        mu0.weights[i]});
        out.plan_cost = 0.0;
        std::vector<double> cdf(mu0.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < mu0.size(); ++i) {
            acc += mu0.weights[i];
            cdf[i] = acc;
        }
        RngStream rng(seed, 5, 0);
        for (std::size_t k = 0; k < n; ++k) {
            const double u = rng.uniform(k) * acc;
            const std::size_t i = static_cast<std::size_t>(
                std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
            const auto p = mu0.point(std::min(i, mu0.size() - 1));
            for (std::size_t a = 0; a < d; ++a) {
                out.pairs[k * 2 * d + a] = p[a];
                out.pairs[k * 2 * d + d + a] = p[a];
            }
        }
        return out;
    }

    out.plan = transport::solve_exact(mu0, nu0, spec);
    out.plan_cost = out.plan.cost;
    std::vector<double> cdf(out.plan.entries.size());
    double acc = 0.0;
    for (std::size_t e = 0; e < out.plan.entries.size(); ++e) {
        acc += out.plan.entries[e].mass;
        cdf[e] = acc;
    }
    RngStream rng(seed, 5, 0);
    for (std::size_t k = 0; k < n; ++k) {
        const double u = rng.uniform(k) * acc;
        const std::size_t e = std::min(
            cdf.size() - 1,
            static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin()));
        const auto x = mu0.point(static_cast<std::size_t>(out.plan.entries[e].i));
        const auto y = nu0.point(static_cast<std::size_t>(out.plan.entries[e].j));
        for (std::size_t a = 0; a < d; ++a) {
            out.pairs[k * 2 * d + a] = x[a];
            out.pairs[k * 2 * d + d + a] = y[a];
        }
    }
    return out;
}

CoupledPathEnsemble evolve_coupled(const CoefficientField& field1,
                                   const CoefficientField& field2,
                                   const InitialCoupling& init, const SdeScheme& scheme,
                                   double horizon) {
    if (field1.dim != field2.dim) fail("invalid-coefficients", "paired fields differ in dim");
    if (field1.noise_dim != field2.noise_dim)
        fail("invalid-coefficients", "paired fields must share the driving noise dimension");
    if (!(scheme.step > 0.0)) fail("step-size-error", "step must be positive");
    const long total_steps = std::lround(horizon / scheme.step);
    if (std::abs(total_steps * scheme.step - horizon) > 1e-12 * std::max(1.0, horizon))
        fail("step-size-error", "step does not divide the horizon");

    const int d = field1.dim, m = field1.noise_dim;
    const std::size_t dd = static_cast<std::size_t>(d);
    const std::size_t n = init.count;
    const int spf = std::max(1, scheme.steps_per_frame);
    CoupledPathEnsemble out;
    out.dim = d;
    out.count = n;
    out.seed = scheme.seed;
    const long frames = total_steps / spf + 1;
    out.times.resize(static_cast<std::size_t>(frames));
    for (long fidx = 0; fidx < frames; ++fidx)
        out.times[static_cast<std::size_t>(fidx)] =
            static_cast<double>(fidx * spf) * scheme.step;
    out.first.assign(static_cast<std::size_t>(frames), std::vector<double>(n * dd));
    out.second.assign(static_cast<std::size_t>(frames), std::vector<double>(n * dd));

    const double sqrt_h = std::sqrt(scheme.step);
    std::string blowup_message;
    std::atomic<bool> blew_up{false};

    parallel_for(n, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> y1(dd), y2(dd), b(dd);
        std::vector<double> sig(static_cast<std::size_t>(d * m));
        std::vector<double> dw(static_cast<std::size_t>(m));
        for (std::size_t traj = lo; traj < hi; ++traj) {
            RngStream rng(scheme.seed, 1, traj);
            for (std::size_t a = 0; a < dd; ++a) {
                y1[a] = init.pairs[traj * 2 * dd + a];
                y2[a] = init.pairs[traj * 2 * dd + dd + a];
            }
            std::copy(y1.begin(), y1.end(), out.first[0].begin() + static_cast<long>(traj * dd));
            std::copy(y2.begin(), y2.end(), out.second[0].begin() + static_cast<long>(traj * dd));
            for (long k = 0; k < total_steps; ++k) {
                const double t = static_cast<double>(k) * scheme.step;
                for (int e = 0; e < m; ++e)
                    dw[static_cast<std::size_t>(e)] =
                        sqrt_h * rng.normal(static_cast<std::uint64_t>(k) *
                                                static_cast<std::uint64_t>(m) +
                                            static_cast<std::uint64_t>(e));
                for (auto [field, y] : {std::pair{&field1, &y1}, std::pair{&field2, &y2}}) {
                    field->drift(t, *y, b);
                    field->sigma(t, *y, sig);
                    for (int i = 0; i < d; ++i) {
                        double noise = 0.0;
                        for (int e = 0; e < m; ++e)
                            noise += sig[static_cast<std::size_t>(i * m + e)] *
                                     dw[static_cast<std::size_t>(e)];
                        (*y)[static_cast<std::size_t>(i)] +=
                            b[static_cast<std::size_t>(i)] * scheme.step + noise;
                    }
                    if (scheme.boundary == SdeScheme::Boundary::ReflectAtBox)
                        reflect_into_box(*y, scheme.box);
                }
                for (std::size_t a = 0; a < dd; ++a)
                    if (!std::isfinite(y1[a]) || std::abs(y1[a]) > 1e6 ||
                        !std::isfinite(y2[a]) || std::abs(y2[a]) > 1e6) {
                        if (!blew_up.exchange(true))
                            blowup_message = "trajectory " + std::to_string(traj) +
                                             " exceeded the state guard at t=" +
                                             format_double(t + scheme.step);
                        return;
                    }
                if ((k + 1) % spf == 0) {
                    const std::size_t fidx = static_cast<std::size_t>((k + 1) / spf);
                    std::copy(y1.begin(), y1.end(),
                              out.first[fidx].begin() + static_cast<long>(traj * dd));
                    std::copy(y2.begin(), y2.end(),
                              out.second[fidx].begin() + static_cast<long>(traj * dd));
                }
            }
        }
    });
    if (blew_up.load()) fail("blowup-error", blowup_message);
    return out;
}

PathEnsemble evolve_single(const CoefficientField& field, const ParticleCloud& init,
                           const SdeScheme& scheme, double horizon) {
    // Reuse the coupled driver with the field paired against itself.
    InitialCoupling ic;
    ic.dim = init.dim;
    ic.count = init.size();
    const std::size_t d = static_cast<std::size_t>(init.dim);
    ic.pairs.resize(ic.count * 2 * d);
    for (std::size_t i = 0; i < ic.count; ++i) {
        const auto p = init.point(i);
        for (std::size_t a = 0; a < d; ++a) {
            ic.pairs[i * 2 * d + a] = p[a];
            ic.pairs[i * 2 * d + d + a] = p[a];
        }
    }
    auto coupled = evolve_coupled(field, field, ic, scheme, horizon);
    PathEnsemble out;
    out.dim = coupled.dim;
    out.count = coupled.count;
    out.seed = coupled.seed;
    out.times = std::move(coupled.times);
    out.states = std::move(coupled.first);
    return out;
}

std::vector<CurvePoint> coupled_cost_curve(const CoupledPathEnsemble& ensemble,
                                           const transport::CostSpec& spec) {
    std::vector<CurvePoint> curve(ensemble.times.size());
    const std::size_t d = static_cast<std::size_t>(ensemble.dim);
    const std::size_t n = ensemble.count;
    const auto sq_dist = [&](std::size_t f, std::size_t i) {
        double s = 0.0;
        for (std::size_t a = 0; a < d; ++a)
            s += sqr(ensemble.first[f][i * d + a] - ensemble.second[f][i * d + a]);
        return s;
    };
    double max_s = 0.0;
    for (std::size_t f = 0; f < ensemble.times.size(); ++f)
        for (std::size_t i = 0; i < n; ++i) max_s = std::max(max_s, sq_dist(f, i));
    const auto cost = transport::make_cost_evaluator(spec, max_s);
    for (std::size_t f = 0; f < ensemble.times.size(); ++f) {
        double sum = 0.0, sum2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double c = cost(sq_dist(f, i));
            sum += c;
            sum2 += c * c;
        }
        const double mean = sum / static_cast<double>(n);
        const double var = std::max(0.0, sum2 / static_cast<double>(n) - mean * mean);
        curve[f] = {ensemble.times[f], mean,
                    std::sqrt(var / static_cast<double>(n))};
    }
    return curve;
}

std::pair<ParticleCloud, ParticleCloud> marginals(const CoupledPathEnsemble& ensemble,
                                                  std::size_t frame) {
    if (frame >= ensemble.times.size()) fail("invalid-argument", "frame outside time grid");
    const double t = ensemble.times[frame];
    auto a = measures::uniform_cloud(ensemble.dim, ensemble.first[frame], t);
    auto b = measures::uniform_cloud(ensemble.dim, ensemble.second[frame], t);
    return {std::move(a), std::move(b)};
}

ParticleCloud marginal(const PathEnsemble& ensemble, std::size_t frame) {
    if (frame >= ensemble.times.size()) fail("invalid-argument", "frame outside time grid");
    return measures::uniform_cloud(ensemble.dim, ensemble.states[frame],
                                   ensemble.times[frame]);
}

ParticleCloud subsample(const ParticleCloud& cloud, std::size_t n, std::uint64_t seed) {
    if (n >= cloud.size()) return cloud;
    // seeded partial Fisher-Yates over indices
    std::vector<std::size_t> idx(cloud.size());
    std::iota(idx.begin(), idx.end(), 0);
    RngStream rng(seed, 9, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j =
            i + static_cast<std::size_t>(rng.uniform(i) * static_cast<double>(idx.size() - i));
        std::swap(idx[i], idx[std::min(j, idx.size() - 1)]);
    }
    const std::size_t d = static_cast<std::size_t>(cloud.dim);
    std::vector<double> pts(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto p = cloud.point(idx[i]);
        for (std::size_t a = 0; a < d; ++a) pts[i * d + a] = p[a];
    }
    return measures::uniform_cloud(cloud.dim, std::move(pts), cloud.time);
}

namespace {

// Sum over pairs of |x - y| between two sorted 1D samples, O((na+nb) log).
double cross_abs_sum_sorted(const std::vector<double>& xs, const std::vector<double>& ys) {
    // prefix sums of xs
    std::vector<double> pre(xs.size() + 1, 0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) pre[i + 1] = pre[i] + xs[i];
    double total = 0.0;
    for (double y : ys) {
        const auto it = std::upper_bound(xs.begin(), xs.end(), y);
        const std::size_t k = static_cast<std::size_t>(it - xs.begin());
        // x <= y for first k entries
        total += y * static_cast<double>(k) - pre[k];
        total += (pre[xs.size()] - pre[k]) - y * static_cast<double>(xs.size() - k);
    }
    return total;
}

double energy_statistic_1d(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double ab = cross_abs_sum_sorted(a, b) / (na * nb);
    const double aa = cross_abs_sum_sorted(a, a) / (na * na);
    const double bb = cross_abs_sum_sorted(b, b) / (nb * nb);
    return (na * nb / (na + nb)) * (2.0 * ab - aa - bb);
}

double energy_statistic_nd(const std::vector<double>& pool, std::span<const std::size_t> idx,
                           std::size_t na, std::size_t d) {
    const std::size_t n = idx.size();
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t a = 0; a < d; ++a)
                s += sqr(pool[idx[i] * d + a] - pool[idx[j] * d + a]);
            const double dist = std::sqrt(s);
            const bool ia = i < na, ja = j < na;
            if (ia && ja) aa += dist;
            else if (!ia && !ja) bb += dist;
            else ab += dist;
        }
    const double dna = static_cast<double>(na), dnb = static_cast<double>(n - na);
    return (dna * dnb / (dna + dnb)) *
           (2.0 * ab / (dna * dnb) - 2.0 * aa / (dna * dna) - 2.0 * bb / (dnb * dnb));
}

}  // namespace

EnergyTestResult two_sample_energy_test(const ParticleCloud& a, const ParticleCloud& b,
                                        int permutations, std::uint64_t seed) {
    if (a.dim != b.dim) fail("invalid-argument", "dimension mismatch in energy test");
    EnergyTestResult out;
    RngStream rng(seed, 13, 0);
    if (a.dim == 1) {
        std::vector<double> xs(a.points), ys(b.points);
        out.statistic = energy_statistic_1d(xs, ys);
        std::vector<double> pool(xs);
        pool.insert(pool.end(), ys.begin(), ys.end());
        int geq = 0;
        std::uint64_t k = 0;
        for (int p = 0; p < permutations; ++p) {
            for (std::size_t i = pool.size() - 1; i > 0; --i) {
                const std::size_t j =
                    static_cast<std::size_t>(rng.uniform(k++) * static_cast<double>(i + 1));
                std::swap(pool[i], pool[std::min(j, i)]);
            }
            std::vector<double> pa(pool.begin(), pool.begin() + static_cast<long>(xs.size()));
            std::vector<double> pb(pool.begin() + static_cast<long>(xs.size()), pool.end());
            if (energy_statistic_1d(std::move(pa), std::move(pb)) >= out.statistic) ++geq;
        }
        out.p_value = (1.0 + geq) / (1.0 + permutations);
        return out;
    }
    // Multivariate path: subsample to keep the O(n^2) statistic affordable.
    const std::size_t cap = 1500;
    const ParticleCloud sa = subsample(a, cap, seed + 1);
    const ParticleCloud sb = subsample(b, cap, seed + 2);
    const std::size_t d = static_cast<std::size_t>(a.dim);
    std::vector<double> pool(sa.points);
    pool.insert(pool.end(), sb.points.begin(), sb.points.end());
    const std::size_t n = sa.size() + sb.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    out.statistic = energy_statistic_nd(pool, idx, sa.size(), d);
    int geq = 0;
    std::uint64_t k = 0;
    for (int p = 0; p < permutations; ++p) {
        for (std::size_t i = n - 1; i > 0; --i) {
            const std::size_t j =
                static_cast<std::size_t>(rng.uniform(k++) * static_cast<double>(i + 1));
            std::swap(idx[i], idx[std::min(j, i)]);
        }
        if (energy_statistic_nd(pool, idx, sa.size(), d) >= out.statistic) ++geq;
    }
    out.p_value = (1.0 + geq) / (1.0 + permutations);
    return out;
}

void save_cost_curve(const std::vector<CurvePoint>& curve, const std::string& csv_path) {
    std::string csv = "t,mean_cost,std_error\n";
    for (const auto& pt : curve)
        csv += format_double(pt.t) + "," + format_double(pt.mean) + "," +
               format_double(pt.std_error) + "\n";
    std::ofstream f(csv_path, std::ios::binary);
    if (!f) fail("io-error", "cannot write " + csv_path);
    f << csv;
}

}  // namespace fpstab::simulate
