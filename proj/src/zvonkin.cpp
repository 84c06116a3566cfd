#include "fpstab/zvonkin.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "fpstab/rng.hpp"

namespace fpstab::zvonkin {

namespace {

double operator_norm(std::span<const double> mat, int d) {
    if (d == 1) return std::abs(mat[0]);
    // 2x2 spectral norm via A^T A eigenvalues
    const double a = mat[0], b = mat[1], c = mat[2], e = mat[3];
    const double g11 = a * a + c * c, g12 = a * b + c * e, g22 = b * b + e * e;
    const double tr = g11 + g22;
    const double disc = std::sqrt(std::max(0.0, sqr(g11 - g22) + 4.0 * g12 * g12));
    return std::sqrt(std::max(0.0, 0.5 * (tr + disc)));
}

// Multilinear interpolation of a flat per-cell vector field with `comps`
// components; x clamped to cell-center range.
void interp_space(const BoxGrid& grid, const std::vector<double>& values, int comps,
                  std::span<const double> x, std::span<double> out) {
    const int d = grid.dim;
    if (d == 1) {
        const double dx = grid.spacing(0);
        const int n = grid.cells[0];
        double s = (x[0] - grid.lo[0]) / dx - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(n - 1));
        const int i0 = std::min(n - 2, static_cast<int>(s));
        const double w = s - i0;
        for (int c = 0; c < comps; ++c)
            out[static_cast<std::size_t>(c)] =
                (1.0 - w) * values[static_cast<std::size_t>(i0 * comps + c)] +
                w * values[static_cast<std::size_t>((i0 + 1) * comps + c)];
        return;
    }
    const double dx = grid.spacing(0), dy = grid.spacing(1);
    const int nx = grid.cells[0], ny = grid.cells[1];
    double sx = (x[0] - grid.lo[0]) / dx - 0.5;
    double sy = (x[1] - grid.lo[1]) / dy - 0.5;
    sx = std::clamp(sx, 0.0, static_cast<double>(nx - 1));
    sy = std::clamp(sy, 0.0, static_cast<double>(ny - 1));
    const int i0 = std::min(nx - 2, static_cast<int>(sx));
    const int j0 = std::min(ny - 2, static_cast<int>(sy));
    const double wx = sx - i0, wy = sy - j0;
    for (int c = 0; c < comps; ++c) {
        const auto at = [&](int i, int j) {
            return values[(static_cast<std::size_t>(j) * nx + i) * comps +
                          static_cast<std::size_t>(c)];
        };
        out[static_cast<std::size_t>(c)] =
            (1.0 - wx) * (1.0 - wy) * at(i0, j0) + wx * (1.0 - wy) * at(i0 + 1, j0) +
            (1.0 - wx) * wy * at(i0, j0 + 1) + wx * wy * at(i0 + 1, j0 + 1);
    }
}

}  // namespace

void ZvonkinSolution::eval_phi(double t, std::span<const double> x,
                               std::span<double> out) const {
    const double tc = std::clamp(t, times.front(), times.back());
    const double h = times.size() > 1 ? times[1] - times[0] : 1.0;
    const std::size_t k =
        std::min(times.size() - 2, static_cast<std::size_t>(std::max(0.0, (tc - times[0]) / h)));
    const double w = std::clamp((tc - times[k]) / h, 0.0, 1.0);
    std::vector<double> lo(static_cast<std::size_t>(dim)), hi(static_cast<std::size_t>(dim));
    interp_space(grid, phi[k], dim, x, lo);
    interp_space(grid, phi[k + 1], dim, x, hi);
    for (int c = 0; c < dim; ++c)
        out[static_cast<std::size_t>(c)] = (1.0 - w) * lo[static_cast<std::size_t>(c)] +
                                           w * hi[static_cast<std::size_t>(c)];
}

void ZvonkinSolution::eval_grad_phi(double t, std::span<const double> x,
                                    std::span<double> out) const {
    const double tc = std::clamp(t, times.front(), times.back());
    const double h = times.size() > 1 ? times[1] - times[0] : 1.0;
    const std::size_t k =
        std::min(times.size() - 2, static_cast<std::size_t>(std::max(0.0, (tc - times[0]) / h)));
    const double w = std::clamp((tc - times[k]) / h, 0.0, 1.0);
    const int comps = dim * dim;
    std::vector<double> lo(static_cast<std::size_t>(comps)), hi(static_cast<std::size_t>(comps));
    interp_space(grid, grad_phi[k], comps, x, lo);
    interp_space(grid, grad_phi[k + 1], comps, x, hi);
    for (int c = 0; c < comps; ++c)
        out[static_cast<std::size_t>(c)] = (1.0 - w) * lo[static_cast<std::size_t>(c)] +
                                           w * hi[static_cast<std::size_t>(c)];
}

void ZvonkinSolution::psi(double t, std::span<const double> x, std::span<double> out) const {
    eval_phi(t, x, out);
    for (int c = 0; c < dim; ++c) out[static_cast<std::size_t>(c)] += x[static_cast<std::size_t>(c)];
}

double suggested_backward_steps(const CoefficientField& drift, const BoxGrid& grid,
                                double lambda, double horizon) {
    const double dx = grid.min_spacing();
    double max_b = 0.0;
    std::array<double, 2> x{};
    std::vector<double> b(static_cast<std::size_t>(drift.dim));
    for (std::size_t c = 0; c < grid.size(); ++c) {
        grid.center(c, x);
        drift.drift(0.0, std::span<const double>(x.data(), static_cast<std::size_t>(drift.dim)),
                    b);
        double nb = 0.0;
        for (double v : b) nb += v * v;
        max_b = std::max(max_b, std::sqrt(nb));
    }
    const double rate = grid.dim / (dx * dx) + lambda + max_b / dx;
    return std::ceil(horizon * rate / 0.9) + 1;
}

namespace {

// Gradient of one frame by centered differences (one-sided at boundary);
// output flat cell*dim*dim.
std::vector<double> frame_gradient(const BoxGrid& grid, const std::vector<double>& phi,
                                   int d) {
    std::vector<double> out(grid.size() * static_cast<std::size_t>(d * d));
    if (d == 1) {
        const int n = grid.cells[0];
        const double dx = grid.spacing(0);
        for (int i = 0; i < n; ++i) {
            const int ip = std::min(n - 1, i + 1), im = std::max(0, i - 1);
            out[static_cast<std::size_t>(i)] =
                (phi[static_cast<std::size_t>(ip)] - phi[static_cast<std::size_t>(im)]) /
                ((ip - im) * dx);
        }
        return out;
    }
    const int nx = grid.cells[0], ny = grid.cells[1];
    const double dx = grid.spacing(0), dy = grid.spacing(1);
    const auto at = [&](int i, int j, int c) {
        return phi[(static_cast<std::size_t>(j) * nx + i) * 2 + static_cast<std::size_t>(c)];
    };
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            const int ip = std::min(nx - 1, i + 1), im = std::max(0, i - 1);
            const int jp = std::min(ny - 1, j + 1), jm = std::max(0, j - 1);
            for (int c = 0; c < 2; ++c) {
                const double gx = (at(ip, j, c) - at(im, j, c)) / ((ip - im) * dx);
                const double gy = (at(i, jp, c) - at(i, jm, c)) / ((jp - jm) * dy);
                const std::size_t base =
                    (static_cast<std::size_t>(j) * nx + i) * 4 + static_cast<std::size_t>(c * 2);
                out[base] = gx;
                out[base + 1] = gy;
            }
        }
    return out;
}

// 1/2 Lap phi + b . grad phi - lambda phi + b at every cell of one frame.
std::vector<double> spatial_operator(const BoxGrid& grid, const CoefficientField& drift,
                                     const std::vector<double>& phi, double t,
                                     double lambda) {
    const int d = grid.dim;
    std::vector<double> out(phi.size());
    std::array<double, 2> x{};
    std::vector<double> b(static_cast<std::size_t>(d));
    if (d == 1) {
        const int n = grid.cells[0];
        const double dx = grid.spacing(0);
        for (int i = 0; i < n; ++i) {
            const int ip = std::min(n - 1, i + 1), im = std::max(0, i - 1);
            const double lap = (phi[static_cast<std::size_t>(ip)] -
                                2.0 * phi[static_cast<std::size_t>(i)] +
                                phi[static_cast<std::size_t>(im)]) /
                               (dx * dx);
            const double grad = (phi[static_cast<std::size_t>(ip)] -
                                 phi[static_cast<std::size_t>(im)]) /
                                ((ip - im) * dx);
            x[0] = grid.center(static_cast<std::size_t>(i), 0);
            drift.drift(t, std::span<const double>(x.data(), 1), b);
            out[static_cast<std::size_t>(i)] = 0.5 * lap + b[0] * grad -
                                               lambda * phi[static_cast<std::size_t>(i)] + b[0];
        }
        return out;
    }
    const int nx = grid.cells[0], ny = grid.cells[1];
    const double dx = grid.spacing(0), dy = grid.spacing(1);
    const auto at = [&](int i, int j, int c) {
        return phi[(static_cast<std::size_t>(j) * nx + i) * 2 + static_cast<std::size_t>(c)];
    };
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            x[0] = grid.center(static_cast<std::size_t>(j) * nx + i, 0);
            x[1] = grid.center(static_cast<std::size_t>(j) * nx + i, 1);
            drift.drift(t, x, b);
            const int ip = std::min(nx - 1, i + 1), im = std::max(0, i - 1);
            const int jp = std::min(ny - 1, j + 1), jm = std::max(0, j - 1);
            for (int c = 0; c < 2; ++c) {
                const double lap = (at(ip, j, c) - 2.0 * at(i, j, c) + at(im, j, c)) / (dx * dx) +
                                   (at(i, jp, c) - 2.0 * at(i, j, c) + at(i, jm, c)) / (dy * dy);
                const double gx = (at(ip, j, c) - at(im, j, c)) / ((ip - im) * dx);
                const double gy = (at(i, jp, c) - at(i, jm, c)) / ((jp - jm) * dy);
                out[(static_cast<std::size_t>(j) * nx + i) * 2 + static_cast<std::size_t>(c)] =
                    0.5 * lap + b[0] * gx + b[1] * gy - lambda * at(i, j, c) +
                    b[static_cast<std::size_t>(c)];
            }
        }
    return out;
}

}  // namespace

ZvonkinSolution solve_backward(const CoefficientField& drift, double lambda,
                               const BoxGrid& grid, long steps) {
    if (!(lambda > 0.0)) fail("invalid-argument", "lambda must be positive");
    if (steps <= 0) fail("step-size-error", "step count must be positive");
    const double T = drift.horizon;
    const double h = T / static_cast<double>(steps);
    const double needed = suggested_backward_steps(drift, grid, lambda, T);
    if (static_cast<double>(steps) + 1.5 < needed)
        fail("step-size-error", "backward solve needs at least " + format_double(needed) +
                                    " steps at this lambda/grid");

    ZvonkinSolution sol;
    sol.grid = grid;
    sol.dim = drift.dim;
    sol.horizon = T;
    sol.lambda = lambda;
    sol.drift_source = drift;
    const std::size_t frames = static_cast<std::size_t>(steps) + 1;
    sol.times.resize(frames);
    for (std::size_t k = 0; k < frames; ++k) sol.times[k] = h * static_cast<double>(k);
    sol.phi.assign(frames, std::vector<double>(grid.size() * static_cast<std::size_t>(drift.dim),
                                               0.0));
    // terminal frame is zero; march backwards
    for (long k = static_cast<long>(steps) - 1; k >= 0; --k) {
        const auto& next = sol.phi[static_cast<std::size_t>(k) + 1];
        const double t_next = sol.times[static_cast<std::size_t>(k) + 1];
        const auto rhs = spatial_operator(grid, drift, next, t_next, lambda);
        auto& cur = sol.phi[static_cast<std::size_t>(k)];
        for (std::size_t c = 0; c < cur.size(); ++c) cur[c] = next[c] + h * rhs[c];
    }
    sol.grad_phi.resize(frames);
    for (std::size_t k = 0; k < frames; ++k)
        sol.grad_phi[k] = frame_gradient(grid, sol.phi[k], drift.dim);

    for (std::size_t k = 0; k < frames; ++k) {
        const auto& g = sol.grad_phi[k];
        const int dd = drift.dim * drift.dim;
        for (std::size_t c = 0; c < grid.size(); ++c)
            sol.sup_grad_norm = std::max(
                sol.sup_grad_norm,
                operator_norm(std::span<const double>(g.data() + c * static_cast<std::size_t>(dd),
                                                      static_cast<std::size_t>(dd)),
                              drift.dim));
        for (double v : sol.phi[k]) sol.sup_phi_norm = std::max(sol.sup_phi_norm, std::abs(v));
    }
    const auto res = residual_norms(sol);
    if (!res.empty()) sol.max_residual = *std::max_element(res.begin(), res.end());
    sol.accuracy_warning = sol.max_residual > 10.0 * grid.min_spacing();
    return sol;
}

std::vector<double> residual_norms(const ZvonkinSolution& solution) {
    std::vector<double> out;
    const std::size_t frames = solution.times.size();
    if (frames < 3) return out;
    const double h = solution.times[1] - solution.times[0];
    const BoxGrid& grid = solution.grid;
    const int d = solution.dim;
    const double vol = grid.cell_volume();
    const int nx = grid.cells[0], ny = (grid.dim == 2) ? grid.cells[1] : 1;
    for (std::size_t k = 1; k + 1 < frames; ++k) {
        const auto op = spatial_operator(grid, solution.drift_source, solution.phi[k],
                                         solution.times[k], solution.lambda);
        double acc = 0.0;
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i) {
                if (i == 0 || i == nx - 1 || (grid.dim == 2 && (j == 0 || j == ny - 1)))
                    continue;  // interior only
                for (int c = 0; c < d; ++c) {
                    const std::size_t flat =
                        (static_cast<std::size_t>(j) * nx + i) * static_cast<std::size_t>(d) +
                        static_cast<std::size_t>(c);
                    const double dphi_dt =
                        (solution.phi[k + 1][flat] - solution.phi[k - 1][flat]) / (2.0 * h);
                    const double r = dphi_dt + op[flat];
                    acc += r * r;
                }
            }
        out.push_back(std::sqrt(acc * vol));
    }
    return out;
}

RegularityRecord regularity_record(const ZvonkinSolution& solution, double p, double q) {
    RegularityRecord rec;
    const std::size_t frames = solution.times.size();
    const double h = frames > 1 ? solution.times[1] - solution.times[0] : 1.0;
    const BoxGrid& grid = solution.grid;
    const int d = solution.dim;
    const double vol = grid.cell_volume();
    const double dx = grid.min_spacing();

    const int nx = grid.cells[0], ny = (grid.dim == 2) ? grid.cells[1] : 1;
    double dt_acc = 0.0, w2_acc = 0.0, b_acc = 0.0;
    std::array<double, 2> x{};
    std::vector<double> b(static_cast<std::size_t>(d));
    for (std::size_t k = 0; k < frames; ++k) {
        double dt_lp = 0.0, w2_lp = 0.0, b_lp = 0.0;
        for (std::size_t c = 0; c < grid.size(); ++c) {
            const int ix = static_cast<int>(c % static_cast<std::size_t>(nx));
            const int iy = static_cast<int>(c / static_cast<std::size_t>(nx));
            double dphi = 0.0, mag = 0.0, lap = 0.0;
            for (int comp = 0; comp < d; ++comp) {
                const std::size_t flat = c * static_cast<std::size_t>(d) +
                                         static_cast<std::size_t>(comp);
                if (k + 1 < frames)
                    dphi += sqr((solution.phi[k + 1][flat] - solution.phi[k][flat]) / h);
                mag += sqr(solution.phi[k][flat]);
                // second differences, clamped at the boundary
                const auto val = [&](int jx, int jy) {
                    jx = std::clamp(jx, 0, nx - 1);
                    jy = std::clamp(jy, 0, ny - 1);
                    return solution.phi[k][(static_cast<std::size_t>(jy) * nx + jx) *
                                               static_cast<std::size_t>(d) +
                                           static_cast<std::size_t>(comp)];
                };
                const double sxx =
                    (val(ix + 1, iy) - 2.0 * val(ix, iy) + val(ix - 1, iy)) / (dx * dx);
                lap += sqr(sxx);
                if (grid.dim == 2) {
                    const double dyv = grid.spacing(1);
                    const double syy =
                        (val(ix, iy + 1) - 2.0 * val(ix, iy) + val(ix, iy - 1)) / (dyv * dyv);
                    lap += sqr(syy);
                }
            }
            dt_lp += std::pow(std::sqrt(dphi), p);
            w2_lp += std::pow(std::sqrt(mag + lap), p);
            grid.center(c, x);
            solution.drift_source.drift(solution.times[k],
                                        std::span<const double>(x.data(),
                                                                static_cast<std::size_t>(d)),
                                        b);
            double nb = 0.0;
            for (double v : b) nb += v * v;
            b_lp += std::pow(std::sqrt(nb), p);
        }
        dt_acc += std::pow(std::pow(dt_lp * vol, 1.0 / p), q) * h;
        w2_acc += std::pow(std::pow(w2_lp * vol, 1.0 / p), q) * h;
        b_acc += std::pow(std::pow(b_lp * vol, 1.0 / p), q) * h;
    }
    rec.dt_phi_LqLp = std::pow(dt_acc, 1.0 / q);
    rec.phi_LqW2p = std::pow(w2_acc, 1.0 / q);
    rec.b_LqLp = std::pow(b_acc, 1.0 / q);
    rec.ratio = rec.b_LqLp > 0.0 ? (rec.dt_phi_LqLp + rec.phi_LqW2p) / rec.b_LqLp : 0.0;
    return rec;
}

LambdaSelection select_lambda(const CoefficientField& drift, const BoxGrid& grid,
                              double horizon, double target) {
    CoefficientField src = drift;
    src.horizon = horizon;
    for (double lambda = 1.0; lambda <= static_cast<double>(1u << 30); lambda *= 2.0) {
        const long steps =
            static_cast<long>(suggested_backward_steps(src, grid, lambda, horizon));
        auto sol = solve_backward(src, lambda, grid, steps);
        if (sol.sup_grad_norm <= target) {
            LambdaSelection out;
            out.lambda = lambda;
            out.achieved_norm = sol.sup_grad_norm;
            out.solution = std::move(sol);
            return out;
        }
    }
    fail("selection-failure", "no lambda up to 2^30 reached the gradient target");
}

std::vector<double> invert(const ZvonkinSolution& solution, double t,
                           std::span<const double> y, double tol, int max_iter) {
    const int d = solution.dim;
    std::vector<double> x(y.begin(), y.end()), next(static_cast<std::size_t>(d));
    std::vector<double> phi(static_cast<std::size_t>(d));
    for (int it = 0; it < max_iter; ++it) {
        solution.eval_phi(t, x, phi);
        double delta = 0.0;
        for (int c = 0; c < d; ++c) {
            next[static_cast<std::size_t>(c)] =
                y[static_cast<std::size_t>(c)] - phi[static_cast<std::size_t>(c)];
            delta += sqr(next[static_cast<std::size_t>(c)] - x[static_cast<std::size_t>(c)]);
        }
        x = next;
        if (std::sqrt(delta) <= tol) return x;
    }
    fail("contraction-failure", "psi inverse fixed point did not converge");
}

TransformedCoefficients transform_coefficients(
    std::shared_ptr<const ZvonkinSolution> solution) {
    if (!solution) fail("invalid-argument", "null solution");
    if (solution->sup_grad_norm > 0.5 + 1e-9)
        fail("invalid-argument", "transform needs sup ||grad phi|| <= 1/2; run select_lambda");
    TransformedCoefficients out;
    const int d = solution->dim;
    out.field.dim = d;
    out.field.noise_dim = d;
    out.field.horizon = solution->horizon;
    const double lambda = solution->lambda;
    auto sol = solution;
    out.field.drift = [sol, lambda, d](double t, std::span<const double> y,
                                       std::span<double> b) {
        const auto x = invert(*sol, t, y);
        std::vector<double> phi(static_cast<std::size_t>(d));
        sol->eval_phi(t, x, phi);
        for (int c = 0; c < d; ++c) b[static_cast<std::size_t>(c)] =
            lambda * phi[static_cast<std::size_t>(c)];
    };
    out.field.sigma = [sol, d](double t, std::span<const double> y, std::span<double> s) {
        const auto x = invert(*sol, t, y);
        std::vector<double> g(static_cast<std::size_t>(d * d));
        sol->eval_grad_phi(t, x, g);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                s[static_cast<std::size_t>(i * d + j)] =
                    ((i == j) ? 1.0 : 0.0) + g[static_cast<std::size_t>(i * d + j)];
    };

    // sampled Lipschitz seminorms over the box at a few times
    RngStream rng(20240317, 15, 0);
    std::uint64_t k = 0;
    std::vector<double> x1(static_cast<std::size_t>(d)), x2(static_cast<std::size_t>(d));
    std::vector<double> b1(static_cast<std::size_t>(d)), b2(static_cast<std::size_t>(d));
    std::vector<double> s1(static_cast<std::size_t>(d * d)), s2(static_cast<std::size_t>(d * d));
    for (int it = 0; it < 200; ++it) {
        const double t = solution->horizon * rng.uniform(k++);
        for (int a = 0; a < d; ++a) {
            x1[static_cast<std::size_t>(a)] = solution->grid.lo[a] +
                rng.uniform(k++) * (solution->grid.hi[a] - solution->grid.lo[a]);
            x2[static_cast<std::size_t>(a)] = solution->grid.lo[a] +
                rng.uniform(k++) * (solution->grid.hi[a] - solution->grid.lo[a]);
        }
        const double dist = dist2(x1, x2);
        if (dist < 1e-9) continue;
        out.field.drift(t, x1, b1);
        out.field.drift(t, x2, b2);
        out.field.sigma(t, x1, s1);
        out.field.sigma(t, x2, s2);
        double db = 0.0, ds = 0.0;
        for (int a = 0; a < d; ++a)
            db += sqr(b1[static_cast<std::size_t>(a)] - b2[static_cast<std::size_t>(a)]);
        for (std::size_t e = 0; e < s1.size(); ++e) ds += sqr(s1[e] - s2[e]);
        out.drift_lipschitz = std::max(out.drift_lipschitz, std::sqrt(db) / dist);
        out.sigma_lipschitz = std::max(out.sigma_lipschitz, std::sqrt(ds) / dist);
    }
    out.field.lipschitz = out.drift_lipschitz;
    return out;
}

TransformComparison compare_transforms(const ZvonkinSolution& first,
                                       const ZvonkinSolution& second, double p, double q) {
    if (!(first.grid == second.grid) || first.lambda != second.lambda ||
        first.times.size() != second.times.size())
        fail("invalid-argument", "comparisons need matching grids, lambda and time steps");
    TransformComparison out;
    const BoxGrid& grid = first.grid;
    const int d = first.dim;
    const double vol = grid.cell_volume();
    const std::size_t frames = first.times.size();
    const double h = frames > 1 ? first.times[1] - first.times[0] : 1.0;

    auto s1 = std::make_shared<ZvonkinSolution>(first);
    auto s2 = std::make_shared<ZvonkinSolution>(second);
    const auto t1 = transform_coefficients(s1);
    const auto t2 = transform_coefficients(s2);

    double sigma_acc = 0.0, src_acc = 0.0;
    std::array<double, 2> x{};
    std::vector<double> a1(static_cast<std::size_t>(d)), a2(static_cast<std::size_t>(d));
    std::vector<double> m1(static_cast<std::size_t>(d * d)), m2(static_cast<std::size_t>(d * d));
    const std::size_t stride = std::max<std::size_t>(1, frames / 16);
    for (std::size_t k = 0; k < frames; k += stride) {
        const double t = first.times[k];
        double phi_lp = 0.0, grad_lp = 0.0, bt_lp = 0.0, sg_lp = 0.0, src_lp = 0.0;
        for (std::size_t c = 0; c < grid.size(); ++c) {
            grid.center(c, x);
            const std::span<const double> xs(x.data(), static_cast<std::size_t>(d));
            double dphi = 0.0, dgrad = 0.0;
            for (int comp = 0; comp < d; ++comp) {
                const std::size_t flat =
                    c * static_cast<std::size_t>(d) + static_cast<std::size_t>(comp);
                dphi += sqr(first.phi[k][flat] - second.phi[k][flat]);
            }
            for (int e = 0; e < d * d; ++e) {
                const std::size_t flat =
                    c * static_cast<std::size_t>(d * d) + static_cast<std::size_t>(e);
                dgrad += sqr(first.grad_phi[k][flat] - second.grad_phi[k][flat]);
            }
            phi_lp += std::pow(std::sqrt(dphi), p);
            grad_lp += std::pow(std::sqrt(dgrad), p);
            t1.field.drift(t, xs, a1);
            t2.field.drift(t, xs, a2);
            double db = 0.0;
            for (int comp = 0; comp < d; ++comp)
                db += sqr(a1[static_cast<std::size_t>(comp)] - a2[static_cast<std::size_t>(comp)]);
            bt_lp += std::pow(std::sqrt(db), p);
            t1.field.sigma(t, xs, m1);
            t2.field.sigma(t, xs, m2);
            double dsg = 0.0;
            for (std::size_t e = 0; e < m1.size(); ++e) dsg += sqr(m1[e] - m2[e]);
            sg_lp += std::pow(std::sqrt(dsg), p);
            first.drift_source.drift(t, xs, a1);
            second.drift_source.drift(t, xs, a2);
            double dsrc = 0.0;
            for (int comp = 0; comp < d; ++comp)
                dsrc +=
                    sqr(a1[static_cast<std::size_t>(comp)] - a2[static_cast<std::size_t>(comp)]);
            src_lp += std::pow(std::sqrt(dsrc), p);
        }
        const double phi_norm = std::pow(phi_lp * vol, 1.0 / p);
        const double grad_norm = std::pow(grad_lp * vol, 1.0 / p);
        out.phi_diff_sup_w1p = std::max(out.phi_diff_sup_w1p, phi_norm + grad_norm);
        out.drift_diff_LinfLp = std::max(out.drift_diff_LinfLp, std::pow(bt_lp * vol, 1.0 / p));
        sigma_acc += std::pow(std::pow(sg_lp * vol, 1.0 / p), q) * h * static_cast<double>(stride);
        src_acc += std::pow(std::pow(src_lp * vol, 1.0 / p), q) * h * static_cast<double>(stride);
    }
    out.sigma_diff_LqLp = std::pow(sigma_acc, 1.0 / q);
    out.source_diff_LqLp = std::pow(src_acc, 1.0 / q);
    if (out.source_diff_LqLp > 0.0) {
        out.ratio_drift = out.drift_diff_LinfLp / out.source_diff_LqLp;
        out.ratio_sigma = out.sigma_diff_LqLp / out.source_diff_LqLp;
        out.ratio_phi = out.phi_diff_sup_w1p / out.source_diff_LqLp;
    }
    return out;
}

double inverse_lipschitz_ratio(const ZvonkinSolution& solution, int n_pairs,
                               std::uint64_t seed) {
    RngStream rng(seed, 19, 0);
    const int d = solution.dim;
    std::uint64_t k = 0;
    double worst = 0.0;
    std::vector<double> x(static_cast<std::size_t>(d)), y(static_cast<std::size_t>(d));
    for (int it = 0; it < n_pairs; ++it) {
        const double t = solution.horizon * rng.uniform(k++);
        for (int a = 0; a < d; ++a) {
            x[static_cast<std::size_t>(a)] = solution.grid.lo[a] +
                rng.uniform(k++) * (solution.grid.hi[a] - solution.grid.lo[a]);
            y[static_cast<std::size_t>(a)] = solution.grid.lo[a] +
                rng.uniform(k++) * (solution.grid.hi[a] - solution.grid.lo[a]);
        }
        const double dist = dist2(x, y);
        if (dist < 1e-9) continue;
        const auto ix = invert(solution, t, x);
        const auto iy = invert(solution, t, y);
        worst = std::max(worst, dist2(ix, iy) / dist);
    }
    return worst;
}

void save_solution_csv(const ZvonkinSolution& solution, const std::string& dir,
                       int frame_stride) {
    std::filesystem::create_directories(dir);
    const std::size_t stride = frame_stride > 0
        ? static_cast<std::size_t>(frame_stride)
        : std::max<std::size_t>(1, solution.times.size() / 8);
    const int d = solution.dim;
    for (std::size_t k = 0; k < solution.times.size(); k += stride) {
        std::string csv = (d == 1) ? "x" : "x,y";
        for (int c = 0; c < d; ++c) csv += ",phi" + std::to_string(c);
        for (int e = 0; e < d * d; ++e) csv += ",grad" + std::to_string(e);
        csv += "\n";
        std::array<double, 2> x{};
        for (std::size_t c = 0; c < solution.grid.size(); ++c) {
            solution.grid.center(c, x);
            csv += format_double(x[0]);
            if (d == 2) csv += "," + format_double(x[1]);
            for (int comp = 0; comp < d; ++comp)
                csv += "," + format_double(
                                 solution.phi[k][c * static_cast<std::size_t>(d) +
                                                 static_cast<std::size_t>(comp)]);
            for (int e = 0; e < d * d; ++e)
                csv += "," + format_double(
                                 solution.grad_phi[k][c * static_cast<std::size_t>(d * d) +
                                                      static_cast<std::size_t>(e)]);
            csv += "\n";
        }
        std::ofstream f(dir + "/phi_frame_" + std::to_string(k) + ".csv", std::ios::binary);
        if (!f) fail("io-error", "cannot write frame CSV in " + dir);
        f << csv;
    }
}

}  // namespace fpstab::zvonkin
