#include "fpstab/coefficients.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fpstab/rng.hpp"
#include "json.hpp"

namespace fpstab::coefficients {

void CoefficientField::a_at(double t, std::span<const double> x,
                            std::span<double> out) const {
    const int d = dim, m = noise_dim;
    std::vector<double> s(static_cast<std::size_t>(d * m));
    sigma(t, x, s);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int k = 0; k < m; ++k)
                acc += s[static_cast<std::size_t>(i * m + k)] *
                       s[static_cast<std::size_t>(j * m + k)];
            out[static_cast<std::size_t>(i * d + j)] = acc;
        }
}

void CoefficientField::drift_gradient(double t, std::span<const double> x, double h,
                                      std::span<double> out) const {
    const int d = dim;
    std::vector<double> xp(x.begin(), x.end()), xm(x.begin(), x.end());
    std::vector<double> bp(static_cast<std::size_t>(d)), bm(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
        xp[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)] + h;
        xm[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)] - h;
        drift(t, xp, bp);
        drift(t, xm, bm);
        for (int i = 0; i < d; ++i)
            out[static_cast<std::size_t>(i * d + j)] =
                (bp[static_cast<std::size_t>(i)] - bm[static_cast<std::size_t>(i)]) / (2.0 * h);
        xp[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)];
        xm[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)];
    }
}

void CoefficientField::a_divergence(double t, std::span<const double> x, double h,
                                    std::span<double> out) const {
    const int d = dim;
    std::vector<double> xp(x.begin(), x.end()), xm(x.begin(), x.end());
    std::vector<double> ap(static_cast<std::size_t>(d * d)), am(static_cast<std::size_t>(d * d));
    for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(i)] = 0.0;
    for (int j = 0; j < d; ++j) {
        xp[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)] + h;
        xm[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)] - h;
        a_at(t, xp, ap);
        a_at(t, xm, am);
        for (int i = 0; i < d; ++i)
            out[static_cast<std::size_t>(i)] +=
                (ap[static_cast<std::size_t>(i * d + j)] -
                 am[static_cast<std::size_t>(i * d + j)]) / (2.0 * h);
        xp[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)];
        xm[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)];
    }
}

CoefficientField zero_field(int dim, int noise_dim, double horizon) {
    CoefficientField f;
    f.dim = dim;
    f.noise_dim = noise_dim;
    f.horizon = horizon;
    f.drift = [](double, std::span<const double>, std::span<double> out) {
        for (auto& v : out) v = 0.0;
    };
    f.sigma = [](double, std::span<const double>, std::span<double> out) {
        for (auto& v : out) v = 0.0;
    };
    return f;
}

bool check_lipschitz_declaration(const CoefficientField& field, const BoxGrid& box,
                                 int n_pairs, std::uint64_t seed) {
    if (!field.lipschitz) return true;
    const double L = *field.lipschitz;
    RngStream rng(seed, 3, 0);
    const int d = field.dim;
    std::vector<double> x(static_cast<std::size_t>(d)), y(static_cast<std::size_t>(d));
    std::vector<double> bx(static_cast<std::size_t>(d)), by(static_cast<std::size_t>(d));
    std::uint64_t k = 0;
    for (int it = 0; it < n_pairs; ++it) {
        for (int a = 0; a < d; ++a) {
            x[static_cast<std::size_t>(a)] =
                box.lo[a] + rng.uniform(k++) * (box.hi[a] - box.lo[a]);
            y[static_cast<std::size_t>(a)] =
                box.lo[a] + rng.uniform(k++) * (box.hi[a] - box.lo[a]);
        }
        const double t = rng.uniform(k++) * field.horizon;
        field.drift(t, x, bx);
        field.drift(t, y, by);
        double num = 0.0, den = 0.0;
        for (int a = 0; a < d; ++a) {
            num += sqr(bx[static_cast<std::size_t>(a)] - by[static_cast<std::size_t>(a)]);
            den += sqr(x[static_cast<std::size_t>(a)] - y[static_cast<std::size_t>(a)]);
        }
        if (den > 0.0 && std::sqrt(num) > L * (1.0 + 1e-6) * std::sqrt(den)) return false;
    }
    return true;
}

bool validate_modulus(const OsgoodModulus& modulus, double s_max, int samples) {
    if (modulus.rho_raw(0.0) != 0.0) return false;
    double prev = 0.0;
    for (int i = 1; i <= samples; ++i) {
        const double s = s_max * i / samples;
        const double r = modulus.rho(s);
        if (r < prev - 1e-12) return false;
        prev = r;
    }
    return true;
}

double osgood_psi(double s, const OsgoodModulus& modulus, double delta, double rel_tol) {
    if (s < 0.0) fail("invalid-argument", "osgood_psi needs s >= 0");
    if (delta <= 0.0) fail("invalid-argument", "osgood_psi needs delta > 0");
    if (s == 0.0) return 0.0;
    const double d2 = delta * delta;
    return integrate([&](double r) { return 1.0 / (modulus.rho(r) + d2); }, 0.0, s,
                     rel_tol);
}

DvpFunction dvp_construct(std::span<const double> samples, double weight_per_sample,
                          DvpPolicy policy) {
    DvpFunction out;
    const auto xlog = [](double s) { return s * std::log1p(s); };
    bool use_xlog = true;
    if (policy == DvpPolicy::Staircase) use_xlog = false;
    if (policy == DvpPolicy::Auto) {
        // On a finite grid the xlog integral is always finite; keep the
        // staircase for explicitly heavy-tailed synthetic inputs.
        double integral = 0.0;
        for (double v : samples) integral += xlog(std::abs(v));
        use_xlog = std::isfinite(integral * weight_per_sample);
    }
    if (use_xlog) {
        out.kind = "xlog";
        out.G = xlog;
        double acc = 0.0;
        for (double v : samples) acc += xlog(std::abs(v));
        out.integral_value = acc * weight_per_sample;
        return out;
    }

    // Staircase construction: piecewise-linear G with slopes doubling on
    // sample quantile bands, so G(s)/s grows without bound while the
    // empirical integral stays controlled by the tail masses.
    std::vector<double> sorted(samples.begin(), samples.end());
    for (double& v : sorted) v = std::abs(v);
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> breaks{0.0};
    std::vector<double> slopes{1.0};
    const std::size_t n = sorted.size();
    for (int k = 1; k < 40; ++k) {
        const std::size_t idx = n - std::max<std::size_t>(1, n >> (2 * k));
        const double level = sorted[std::min(idx, n - 1)];
        if (level <= breaks.back() + 1e-12) continue;
        breaks.push_back(level);
        slopes.push_back(std::pow(2.0, k));
        if (idx >= n - 1) break;
    }
    auto G = [breaks, slopes](double s) {
        s = std::abs(s);
        double g = 0.0;
        for (std::size_t k = 0; k < breaks.size(); ++k) {
            const double hi = (k + 1 < breaks.size()) ? breaks[k + 1] : kInf;
            const double seg = std::min(s, hi) - breaks[k];
            if (seg <= 0.0) break;
            g += slopes[k] * seg;
        }
        return g;
    };
    out.kind = "staircase";
    out.G = G;
    double acc = 0.0;
    for (double v : samples) acc += G(v);
    out.integral_value = acc * weight_per_sample;
    return out;
}

double phi_delta(const std::function<double(double)>& G, double delta) {
    if (!(delta > 0.0) || delta > 1.0)
        fail("invalid-argument", "phi_delta needs delta in (0, 1]");
    const double level = 1.0 + std::log1p(1.0 / delta);
    const auto objective = [&](double M) {
        const double g = G(M);
        if (g <= 0.0) return kInf;
        return M + (M / g) * level;
    };
    return minimize_log_scan(objective, 1e-6, 1e9, 600, 1e-8);
}

double phi_delta(const DvpFunction& G, double delta) { return phi_delta(G.G, delta); }

namespace {

// Normalized bump profile exp(-1/(1-r^2)), tabulated once on [0,1).
double bump_profile(double r) {
    const double r2 = r * r;
    if (r2 >= 1.0) return 0.0;
    return std::exp(-1.0 / (1.0 - r2));
}

}  // namespace

GridField mollify(const GridField& field, double eps) {
    const BoxGrid& g = field.grid;
    if (eps <= 0.0) return field;
    GridField out(g);
    if (g.dim == 1) {
        const double dx = g.spacing(0);
        const int reach = static_cast<int>(std::floor(eps / dx)) + 1;
        std::vector<double> w(static_cast<std::size_t>(2 * reach + 1));
        double sum = 0.0;
        for (int k = -reach; k <= reach; ++k) {
            const double v = bump_profile(k * dx / eps);
            w[static_cast<std::size_t>(k + reach)] = v;
            sum += v;
        }
        for (auto& v : w) v /= sum;
        const int n = g.cells[0];
        for (int i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int k = -reach; k <= reach; ++k) {
                const int j = i + k;
                if (j < 0 || j >= n) continue;  // boundary leakage
                acc += w[static_cast<std::size_t>(k + reach)] *
                       field.values[static_cast<std::size_t>(j)];
            }
            out.values[static_cast<std::size_t>(i)] = acc;
        }
        return out;
    }
    const double dx = g.spacing(0), dy = g.spacing(1);
    const int rx = static_cast<int>(std::floor(eps / dx)) + 1;
    const int ry = static_cast<int>(std::floor(eps / dy)) + 1;
    std::vector<double> w(static_cast<std::size_t>((2 * rx + 1) * (2 * ry + 1)));
    double sum = 0.0;
    for (int ky = -ry; ky <= ry; ++ky)
        for (int kx = -rx; kx <= rx; ++kx) {
            const double r = std::sqrt(sqr(kx * dx) + sqr(ky * dy)) / eps;
            const double v = bump_profile(r);
            w[static_cast<std::size_t>((ky + ry) * (2 * rx + 1) + kx + rx)] = v;
            sum += v;
        }
    for (auto& v : w) v /= sum;
    const int nx = g.cells[0], ny = g.cells[1];
    for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix) {
            double acc = 0.0;
            for (int ky = -ry; ky <= ry; ++ky) {
                const int jy = iy + ky;
                if (jy < 0 || jy >= ny) continue;
                for (int kx = -rx; kx <= rx; ++kx) {
                    const int jx = ix + kx;
                    if (jx < 0 || jx >= nx) continue;
                    acc += w[static_cast<std::size_t>((ky + ry) * (2 * rx + 1) + kx + rx)] *
                           field.values[static_cast<std::size_t>(jy * nx + jx)];
                }
            }
            out.values[static_cast<std::size_t>(iy * nx + ix)] = acc;
        }
    return out;
}

GridField maximal_function(const GridField& field) {
    const BoxGrid& g = field.grid;
    GridField out(g);
    std::vector<double> absf(field.values.size());
    for (std::size_t i = 0; i < absf.size(); ++i) absf[i] = std::abs(field.values[i]);

    // Radius ladder: half a cell (the cell itself) up to the domain diameter.
    std::vector<double> ladder;
    const double r0 = 0.49 * g.min_spacing();
    for (double r = r0; r <= g.diameter() * 1.3; r *= 1.3) ladder.push_back(r);

    if (g.dim == 1) {
        const int n = g.cells[0];
        const double dx = g.spacing(0);
        std::vector<double> prefix(static_cast<std::size_t>(n) + 1, 0.0);
        for (int i = 0; i < n; ++i)
            prefix[static_cast<std::size_t>(i) + 1] =
                prefix[static_cast<std::size_t>(i)] + absf[static_cast<std::size_t>(i)];
        for (int i = 0; i < n; ++i) {
            double best = absf[static_cast<std::size_t>(i)];
            for (double r : ladder) {
                const int reach = static_cast<int>(std::floor(r / dx));
                const int lo = std::max(0, i - reach);
                const int hi = std::min(n - 1, i + reach);
                const double avg = (prefix[static_cast<std::size_t>(hi) + 1] -
                                    prefix[static_cast<std::size_t>(lo)]) /
                                   (hi - lo + 1);
                best = std::max(best, avg);
            }
            out.values[static_cast<std::size_t>(i)] = best;
        }
        return out;
    }

    const int nx = g.cells[0], ny = g.cells[1];
    const double dx = g.spacing(0), dy = g.spacing(1);
    // Row prefix sums for O(rows-in-disc) disc averages.
    std::vector<double> prefix(static_cast<std::size_t>(ny) * (nx + 1), 0.0);
    for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix)
            prefix[static_cast<std::size_t>(iy) * (nx + 1) + ix + 1] =
                prefix[static_cast<std::size_t>(iy) * (nx + 1) + ix] +
                absf[static_cast<std::size_t>(iy * nx + ix)];
    parallel_for(static_cast<std::size_t>(nx) * ny, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t c = lo; c < hi; ++c) {
            const int ix = static_cast<int>(c % static_cast<std::size_t>(nx));
            const int iy = static_cast<int>(c / static_cast<std::size_t>(nx));
            double best = absf[c];
            for (double r : ladder) {
                const int ry = static_cast<int>(std::floor(r / dy));
                double sum = 0.0;
                long count = 0;
                for (int ky = -ry; ky <= ry; ++ky) {
                    const int jy = iy + ky;
                    if (jy < 0 || jy >= ny) continue;
                    const double rem2 = r * r - sqr(ky * dy);
                    if (rem2 < 0.0) continue;
                    const int rx = static_cast<int>(std::floor(std::sqrt(rem2) / dx));
                    const int xlo = std::max(0, ix - rx);
                    const int xhi = std::min(nx - 1, ix + rx);
                    sum += prefix[static_cast<std::size_t>(jy) * (nx + 1) + xhi + 1] -
                           prefix[static_cast<std::size_t>(jy) * (nx + 1) + xlo];
                    count += xhi - xlo + 1;
                }
                if (count > 0) best = std::max(best, sum / static_cast<double>(count));
            }
            out.values[c] = best;
        }
    });
    return out;
}

namespace {

GridField gradient_magnitude(const GridField& field) {
    const BoxGrid& g = field.grid;
    GridField out(g);
    if (g.dim == 1) {
        const int n = g.cells[0];
        const double dx = g.spacing(0);
        for (int i = 0; i < n; ++i) {
            const int ip = std::min(n - 1, i + 1), im = std::max(0, i - 1);
            out.values[static_cast<std::size_t>(i)] =
                std::abs((field.values[static_cast<std::size_t>(ip)] -
                          field.values[static_cast<std::size_t>(im)]) /
                         ((ip - im) * dx));
        }
        return out;
    }
    const int nx = g.cells[0], ny = g.cells[1];
    const double dx = g.spacing(0), dy = g.spacing(1);
    for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix) {
            const int xp = std::min(nx - 1, ix + 1), xm = std::max(0, ix - 1);
            const int yp = std::min(ny - 1, iy + 1), ym = std::max(0, iy - 1);
            const double gx = (field.values[static_cast<std::size_t>(iy * nx + xp)] -
                               field.values[static_cast<std::size_t>(iy * nx + xm)]) /
                              ((xp - xm) * dx);
            const double gy = (field.values[static_cast<std::size_t>(yp * nx + ix)] -
                               field.values[static_cast<std::size_t>(ym * nx + ix)]) /
                              ((yp - ym) * dy);
            out.values[static_cast<std::size_t>(iy * nx + ix)] = std::sqrt(gx * gx + gy * gy);
        }
    return out;
}

}  // namespace

SobolevCheckReport pointwise_sobolev_check(const GridField& field, int n_pairs,
                                           double constant, std::uint64_t seed) {
    SobolevCheckReport report;
    report.constant_used = constant;
    const GridField grad = gradient_magnitude(field);
    const GridField mgrad = maximal_function(grad);
    RngStream rng(seed, 7, 0);
    const std::size_t n = field.values.size();
    std::array<double, 2> xc{}, yc{};
    for (int it = 0; it < n_pairs; ++it) {
        const std::size_t i =
            std::min(n - 1, static_cast<std::size_t>(rng.uniform(2 * it) * n));
        const std::size_t j =
            std::min(n - 1, static_cast<std::size_t>(rng.uniform(2 * it + 1) * n));
        if (i == j) continue;
        field.grid.center(i, xc);
        field.grid.center(j, yc);
        double dist = sqr(xc[0] - yc[0]);
        if (field.grid.dim == 2) dist += sqr(xc[1] - yc[1]);
        dist = std::sqrt(dist);
        const double lhs = std::abs(field.values[i] - field.values[j]);
        const double rhs = constant * dist * (mgrad.values[i] + mgrad.values[j]);
        const double ratio = (rhs > 0.0) ? lhs / rhs : (lhs > 0.0 ? kInf : 0.0);
        report.max_ratio = std::max(report.max_ratio, ratio);
        if (ratio > 1.0) ++report.violations;
    }
    report.pass = report.violations == 0;
    return report;
}

double jabin_kernel_integral(std::span<const double> x, std::span<const double> y,
                             double rel_tol) {
    const std::size_t d = x.size();
    double dist = 0.0;
    for (std::size_t a = 0; a < d; ++a) dist += sqr(x[a] - y[a]);
    dist = std::sqrt(dist);
    if (dist == 0.0) return 0.0;
    if (d == 1) return 2.0 * dist;  // integrand is 2 on the interval of length |x-y|

    // d = 2: for each pole integrate ray lengths through the disc; the ray
    // from a boundary point exits after 2 <w, m - pole>_+ so the radial
    // 1/|pole - z| singularity cancels exactly.
    const double mx = 0.5 * (x[0] + y[0]), my = 0.5 * (x[1] + y[1]);
    const auto pole_integral = [&](double px, double py) {
        const double cx = mx - px, cy = my - py;
        const double base = std::atan2(cy, cx);
        double prev = kInf, value = 0.0;
        for (int n = 64; n <= 1 << 20; n *= 2) {
            value = 0.0;
            const double h = 3.14159265358979323846 / n;  // theta in (-pi/2, pi/2)
            for (int k = 0; k < n; ++k) {
                const double theta = -1.5707963267948966 + (k + 0.5) * h;
                const double wx = std::cos(base + theta), wy = std::sin(base + theta);
                const double chord = 2.0 * std::max(0.0, wx * cx + wy * cy);
                value += chord * h;
            }
            if (std::abs(value - prev) <= rel_tol * std::abs(value)) break;
            prev = value;
        }
        return value;
    };
    return pole_integral(x[0], x[1]) + pole_integral(y[0], y[1]);
}

double spacetime_norm(const std::function<double(double, std::span<const double>)>& f,
                      const BoxGrid& grid, double horizon, double r, double s,
                      int time_frames) {
    if (!(r >= 1.0) || !(s >= 1.0)) fail("invalid-exponent", "norm exponents must be >= 1");
    const double dt = horizon / time_frames;
    const double vol = grid.cell_volume();
    std::array<double, 2> x{};
    double time_acc = 0.0, time_max = 0.0;
    for (int k = 0; k < time_frames; ++k) {
        const double t = (k + 0.5) * dt;
        double space_acc = 0.0, space_max = 0.0;
        for (std::size_t c = 0; c < grid.size(); ++c) {
            grid.center(c, x);
            const double v = std::abs(
                f(t, std::span<const double>(x.data(), static_cast<std::size_t>(grid.dim))));
            if (std::isinf(s))
                space_max = std::max(space_max, v);
            else
                space_acc += std::pow(v, s);
        }
        const double frame_norm =
            std::isinf(s) ? space_max : std::pow(space_acc * vol, 1.0 / s);
        if (std::isinf(r))
            time_max = std::max(time_max, frame_norm);
        else
            time_acc += std::pow(frame_norm, r);
    }
    return std::isinf(r) ? time_max : std::pow(time_acc * dt, 1.0 / r);
}

HypothesisHReport hypothesis_h_check(const CoefficientField& field,
                                     const OsgoodModulus& modulus, const BoxGrid& box,
                                     int n_pairs, int n_times, std::uint64_t seed) {
    HypothesisHReport report;
    RngStream rng(seed, 11, 0);
    const int d = field.dim, m = field.noise_dim;
    std::vector<double> x(static_cast<std::size_t>(d)), y(static_cast<std::size_t>(d));
    std::vector<double> bx(static_cast<std::size_t>(d)), by(static_cast<std::size_t>(d));
    std::vector<double> sx(static_cast<std::size_t>(d * m)), sy(static_cast<std::size_t>(d * m));
    std::uint64_t k = 0;
    for (int it = 0; it < n_pairs; ++it) {
        for (int a = 0; a < d; ++a) {
            x[static_cast<std::size_t>(a)] =
                box.lo[a] + rng.uniform(k++) * (box.hi[a] - box.lo[a]);
            y[static_cast<std::size_t>(a)] =
                box.lo[a] + rng.uniform(k++) * (box.hi[a] - box.lo[a]);
        }
        double z2 = 0.0;
        for (int a = 0; a < d; ++a)
            z2 += sqr(x[static_cast<std::size_t>(a)] - y[static_cast<std::size_t>(a)]);
        if (z2 == 0.0) continue;
        for (int ti = 0; ti < n_times; ++ti) {
            const double t = field.horizon * (ti + 0.5) / n_times;
            field.drift(t, x, bx);
            field.drift(t, y, by);
            field.sigma(t, x, sx);
            field.sigma(t, y, sy);
            double inner = 0.0, sig2 = 0.0;
            for (int a = 0; a < d; ++a)
                inner += (x[static_cast<std::size_t>(a)] - y[static_cast<std::size_t>(a)]) *
                         (bx[static_cast<std::size_t>(a)] - by[static_cast<std::size_t>(a)]);
            for (std::size_t e = 0; e < sx.size(); ++e) sig2 += sqr(sx[e] - sy[e]);
            const double lhs = std::abs(inner) + sig2;
            const double rhs = (modulus.g(t, x) + modulus.g(t, y)) * modulus.rho(z2);
            const double ratio = (rhs > 0.0) ? lhs / rhs : (lhs > 0.0 ? kInf : 0.0);
            if (ratio > report.max_ratio) {
                report.max_ratio = ratio;
                report.worst_lhs = lhs;
                report.worst_rhs = rhs;
            }
        }
    }
    report.pass = report.max_ratio <= 1.0 + 1e-9;
    return report;
}

double ConstantsManifest::maximal_constant(int d, double p) const {
    const auto dit = maximal_C_dp.find(d);
    if (dit == maximal_C_dp.end()) fail("incomplete-ingredients", "no maximal constant for dim");
    const auto pit = dit->second.find(p);
    if (pit == dit->second.end()) fail("incomplete-ingredients", "no maximal constant for p");
    return pit->second;
}

double ConstantsManifest::sobolev_constant(int d) const {
    const auto it = sobolev_C_d.find(d);
    if (it == sobolev_C_d.end()) fail("incomplete-ingredients", "no sobolev constant for dim");
    return it->second;
}

double ConstantsManifest::jabin_constant(int d) const {
    const auto it = jabin_Cprime_d.find(d);
    if (it == jabin_Cprime_d.end()) fail("incomplete-ingredients", "no jabin constant for dim");
    return it->second;
}

void save_manifest(const ConstantsManifest& manifest, const std::string& path) {
    nlohmann::json j;
    j["seed"] = manifest.seed;
    for (const auto& [d, v] : manifest.sobolev_C_d) j["C_d"][std::to_string(d)] = v;
    for (const auto& [d, ps] : manifest.maximal_C_dp)
        for (const auto& [p, v] : ps)
            j["C_dp"][std::to_string(d)][format_double(p)] = v;
    for (const auto& [d, v] : manifest.jabin_Cprime_d) j["Cprime_d"][std::to_string(d)] = v;
    j["stability"]["C_dp"] = manifest.stability_C_dp;
    j["stability"]["C_dT"] = manifest.stability_C_dT;
    j["stability"]["C1_mixed"] = manifest.stability_C1_mixed;
    j["stability"]["C2_mixed"] = manifest.stability_C2_mixed;
    j["stability"]["C1_lps"] = manifest.stability_C1_lps;
    j["stability"]["C2_lps"] = manifest.stability_C2_lps;
    j["stability"]["C_alpha"] = manifest.stability_C_alpha;
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("io-error", "cannot write " + path);
    f << j.dump(2) << "\n";
}

ConstantsManifest load_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("io-error", "cannot read " + path);
    nlohmann::json j;
    f >> j;
    ConstantsManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [k, v] : j.at("C_d").items()) m.sobolev_C_d[std::stoi(k)] = v;
    for (const auto& [k, ps] : j.at("C_dp").items())
        for (const auto& [pk, v] : ps.items())
            m.maximal_C_dp[std::stoi(k)][std::stod(pk)] = v;
    for (const auto& [k, v] : j.at("Cprime_d").items()) m.jabin_Cprime_d[std::stoi(k)] = v;
    const auto& s = j.at("stability");
    m.stability_C_dp = s.at("C_dp");
    m.stability_C_dT = s.at("C_dT");
    m.stability_C1_mixed = s.at("C1_mixed");
    m.stability_C2_mixed = s.at("C2_mixed");
    m.stability_C1_lps = s.at("C1_lps");
    m.stability_C2_lps = s.at("C2_lps");
    m.stability_C_alpha = s.at("C_alpha");
    return m;
}

std::string manifest_sha_like_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("io-error", "cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string body = ss.str();
    // FNV-1a, enough to pin the manifest in run reports.
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : body) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<GridField> canonical_field_suite(int dim, int count, std::uint64_t seed) {
    std::vector<GridField> suite;
    suite.reserve(static_cast<std::size_t>(count));
    const BoxGrid grid = (dim == 1) ? BoxGrid(-2.0, 2.0, 400)
                                    : BoxGrid(-2.0, 2.0, 80, -2.0, 2.0, 80);
    for (int s = 0; s < count; ++s) {
        RngStream rng(seed, 23, static_cast<std::uint64_t>(s));
        GridField f(grid);
        std::uint64_t k = 0;
        const int modes = 3 + static_cast<int>(rng.uniform(k++) * 4);
        std::array<double, 2> x{};
        std::vector<std::array<double, 5>> params;
        for (int mmode = 0; mmode < modes; ++mmode)
            params.push_back({rng.uniform(k++) * 2.0 - 1.0, rng.uniform(k++) * 4.0 + 0.5,
                              rng.uniform(k++) * 4.0 - 2.0, rng.uniform(k++) * 4.0 - 2.0,
                              rng.uniform(k++)});
        for (std::size_t c = 0; c < grid.size(); ++c) {
            grid.center(c, x);
            double v = 0.0;
            for (const auto& pr : params) {
                const double amp = pr[0], freq = pr[1], cx = pr[2], cy = pr[3], mix = pr[4];
                const double r2 = sqr(x[0] - cx) + ((dim == 2) ? sqr(x[1] - cy) : 0.0);
                const double wave =
                    std::sin(freq * x[0] + ((dim == 2) ? 0.7 * freq * x[1] : 0.0));
                v += amp * (mix * std::exp(-2.0 * r2) + (1.0 - mix) * wave);
            }
            f.values[c] = v;
        }
        suite.push_back(std::move(f));
    }
    return suite;
}

ConstantsManifest calibrate_analysis_constants(std::uint64_t seed) {
    ConstantsManifest m;
    m.seed = seed;
    const std::vector<double> ps{1.5, 2.0, 4.0};
    for (int d : {1, 2}) {
        const auto suite = canonical_field_suite(d, 100, seed);
        for (double p : ps) {
            double worst = 0.0;
            for (const auto& f : suite) {
                const double den = lr_norm(f, p);
                if (den <= 0.0) continue;
                worst = std::max(worst, lr_norm(maximal_function(f), p) / den);
            }
            m.maximal_C_dp[d][p] = 1.02 * worst;
        }
        // Pointwise Sobolev constant: worst observed ratio with C = 1.
        double worst_ratio = 0.0;
        int idx = 0;
        for (const auto& f : suite) {
            const auto rep = pointwise_sobolev_check(f, 200, 1.0, seed + 31 + idx++);
            worst_ratio = std::max(worst_ratio, rep.max_ratio);
        }
        m.sobolev_C_d[d] = std::max(1.05 * worst_ratio, 1.0);
        // Jabin kernel constant over random pairs in the box.
        RngStream rng(seed, 29, static_cast<std::uint64_t>(d));
        double worst_jabin = 0.0;
        std::uint64_t k = 0;
        for (int it = 0; it < 1000; ++it) {
            std::array<double, 2> x{}, y{};
            for (int a = 0; a < d; ++a) {
                x[static_cast<std::size_t>(a)] = rng.uniform(k++) * 4.0 - 2.0;
                y[static_cast<std::size_t>(a)] = rng.uniform(k++) * 4.0 - 2.0;
            }
            double dist = 0.0;
            for (int a = 0; a < d; ++a)
                dist += sqr(x[static_cast<std::size_t>(a)] - y[static_cast<std::size_t>(a)]);
            dist = std::sqrt(dist);
            if (dist < 1e-9) continue;
            const double value = jabin_kernel_integral(
                std::span<const double>(x.data(), static_cast<std::size_t>(d)),
                std::span<const double>(y.data(), static_cast<std::size_t>(d)));
            worst_jabin = std::max(worst_jabin, value / dist);
        }
        m.jabin_Cprime_d[d] = 1.01 * worst_jabin;
    }
    return m;
}

}  // namespace fpstab::coefficients
