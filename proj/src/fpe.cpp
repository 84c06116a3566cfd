#include "fpstab/fpe.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace fpstab::fpe {

namespace {

struct CoeffExtremes {
    double max_drift = 0.0;  // max euclidean |b|
    double max_a = 0.0;      // max Hilbert-Schmidt norm of a
};

CoeffExtremes sample_extremes(const CoefficientField& field, const BoxGrid& grid,
                              double horizon) {
    CoeffExtremes ex;
    const int d = field.dim;
    std::array<double, 2> x{};
    std::vector<double> b(static_cast<std::size_t>(d)), a(static_cast<std::size_t>(d * d));
    for (int ti = 0; ti <= 4; ++ti) {
        const double t = horizon * ti / 4.0;
        for (std::size_t c = 0; c < grid.size(); ++c) {
            grid.center(c, x);
            const std::span<const double> xs(x.data(), static_cast<std::size_t>(d));
            field.drift(t, xs, b);
            field.a_at(t, xs, a);
            double nb = 0.0, na = 0.0;
            for (double v : b) nb += v * v;
            for (double v : a) na += v * v;
            ex.max_drift = std::max(ex.max_drift, std::sqrt(nb));
            ex.max_a = std::max(ex.max_a, std::sqrt(na));
        }
    }
    return ex;
}

}  // namespace

double cfl_step_bound(const FpeProblem& problem) {
    const auto ex = sample_extremes(problem.field, problem.initial.grid, problem.horizon);
    const double dx = problem.initial.grid.min_spacing();
    double bound = kInf;
    if (ex.max_drift > 0.0) bound = std::min(bound, dx / ex.max_drift);
    if (problem.kappa * ex.max_a > 0.0)
        bound = std::min(bound, dx * dx / (problem.kappa * ex.max_a));
    return 0.9 * bound;
}

double suggested_step(const FpeProblem& problem) {
    const auto ex = sample_extremes(problem.field, problem.initial.grid, problem.horizon);
    const double dx = problem.initial.grid.min_spacing();
    const double rate = ex.max_drift / dx +
                        2.0 * problem.initial.grid.dim * problem.kappa * ex.max_a / (dx * dx);
    if (rate <= 0.0) return problem.horizon;
    return 0.9 / rate;
}

namespace {

// Per-step state for one spatial sweep; all arrays sized to the grid.
class Stepper {
public:
    Stepper(const FpeProblem& problem) : pb_(problem), grid_(problem.initial.grid) {
        const int d = grid_.dim;
        nx_ = grid_.cells[0];
        ny_ = (d == 2) ? grid_.cells[1] : 1;
        dx_ = grid_.spacing(0);
        dy_ = (d == 2) ? grid_.spacing(1) : 1.0;
        w11_.resize(grid_.size());
        if (d == 2) {
            w12_.resize(grid_.size());
            w22_.resize(grid_.size());
        }
        if (pb_.field.time_independent) {
            // autonomous coefficients: sample drift at faces and a at cells once
            cached_ = true;
            fill_drift_faces(0.0);
            fill_a_cells(0.0);
        }
    }

    // One explicit step; returns outflow mass (absorbing boundary only).
    double step(std::vector<double>& u, double t, double h, double& clipped) {
        return (grid_.dim == 1) ? step_1d(u, t, h, clipped) : step_2d(u, t, h, clipped);
    }

private:
    // Drift normal components at faces; a entries at cells. Autonomous
    // fields are sampled once in the constructor.
    void fill_drift_faces(double t) {
        if (grid_.dim == 1) {
            bface_.resize(static_cast<std::size_t>(nx_) + 1);
            std::array<double, 1> xc{};
            for (int i = 0; i <= nx_; ++i) {
                xc[0] = grid_.lo[0] + i * dx_;
                double bv;
                pb_.field.drift(t, std::span<const double>(xc.data(), 1),
                                std::span<double>(&bv, 1));
                bface_[static_cast<std::size_t>(i)] = bv;
            }
            return;
        }
        bx_.resize(static_cast<std::size_t>(nx_ + 1) * ny_);
        by_.resize(static_cast<std::size_t>(nx_) * (ny_ + 1));
        std::array<double, 2> xf{};
        std::vector<double> b(2);
        for (int iy = 0; iy < ny_; ++iy) {
            xf[1] = grid_.center(idx(0, iy), 1);
            for (int ix = 0; ix <= nx_; ++ix) {
                xf[0] = grid_.lo[0] + ix * dx_;
                pb_.field.drift(t, xf, b);
                bx_[static_cast<std::size_t>(iy) * (nx_ + 1) + ix] = b[0];
            }
        }
        for (int iy = 0; iy <= ny_; ++iy) {
            xf[1] = grid_.lo[1] + iy * dy_;
            for (int ix = 0; ix < nx_; ++ix) {
                xf[0] = grid_.center(idx(ix, 0), 0);
                pb_.field.drift(t, xf, b);
                by_[static_cast<std::size_t>(iy) * nx_ + ix] = b[1];
            }
        }
    }

    void fill_a_cells(double t) {
        if (grid_.dim == 1) {
            std::array<double, 1> xc{};
            std::vector<double> a(1);
            for (int i = 0; i < nx_; ++i) {
                xc[0] = grid_.center(static_cast<std::size_t>(i), 0);
                pb_.field.a_at(t, std::span<const double>(xc.data(), 1), a);
                w11_[static_cast<std::size_t>(i)] = a[0];
            }
            return;
        }
        std::array<double, 2> x{};
        std::vector<double> a(4);
        for (int iy = 0; iy < ny_; ++iy)
            for (int ix = 0; ix < nx_; ++ix) {
                x[0] = grid_.center(idx(ix, iy), 0);
                x[1] = grid_.center(idx(ix, iy), 1);
                pb_.field.a_at(t, x, a);
                w11_[idx(ix, iy)] = a[0];
                w12_[idx(ix, iy)] = a[1];
                w22_[idx(ix, iy)] = a[3];
            }
    }

    double step_1d(std::vector<double>& u, double t, double h, double& clipped) {
        const int n = nx_;
        const double vol = dx_;
        const bool absorbing = pb_.boundary == FpeProblem::Boundary::AbsorbingWithLeakage;
        if (!cached_) {
            fill_drift_faces(t);
            fill_a_cells(t);
        }

        // advective + diffusive fluxes at faces 0..n
        std::vector<double> flux(static_cast<std::size_t>(n) + 1, 0.0);
        for (int i = 1; i < n; ++i) {
            const double b = bface_[static_cast<std::size_t>(i)];
            const double up = b >= 0.0 ? u[static_cast<std::size_t>(i - 1)]
                                       : u[static_cast<std::size_t>(i)];
            double g;
            if (pb_.form == FpeProblem::DiffusionForm::NonDivergence) {
                g = (w11_[static_cast<std::size_t>(i)] * u[static_cast<std::size_t>(i)] -
                     w11_[static_cast<std::size_t>(i - 1)] * u[static_cast<std::size_t>(i - 1)]) /
                    dx_;
            } else {
                const double aface = 0.5 * (w11_[static_cast<std::size_t>(i)] +
                                            w11_[static_cast<std::size_t>(i - 1)]);
                g = aface *
                    (u[static_cast<std::size_t>(i)] - u[static_cast<std::size_t>(i - 1)]) / dx_;
            }
            flux[static_cast<std::size_t>(i)] = b * up - 0.5 * pb_.kappa * g;
        }
        if (absorbing) {
            // outflow-only boundary fluxes
            const double b0 = bface_[0], bn = bface_[static_cast<std::size_t>(n)];
            flux[0] = std::min(0.0, b0) * u[0];
            flux[static_cast<std::size_t>(n)] =
                std::max(0.0, bn) * u[static_cast<std::size_t>(n - 1)];
        }
        double outflow = 0.0;
        if (absorbing)
            outflow = (flux[static_cast<std::size_t>(n)] - flux[0]) * h;
        for (int i = 0; i < n; ++i)
            u[static_cast<std::size_t>(i)] -=
                h / dx_ *
                (flux[static_cast<std::size_t>(i + 1)] - flux[static_cast<std::size_t>(i)]);
        for (int i = 0; i < n; ++i)
            if (u[static_cast<std::size_t>(i)] < 0.0) {
                clipped += -u[static_cast<std::size_t>(i)] * vol;
                u[static_cast<std::size_t>(i)] = 0.0;
            }
        return outflow;
    }

    double dy_of(const std::vector<double>& w, int ix, int iy) const {
        const int yp = std::min(ny_ - 1, iy + 1), ym = std::max(0, iy - 1);
        return (w[idx(ix, yp)] - w[idx(ix, ym)]) / ((yp - ym) * dy_);
    }
    double dx_of(const std::vector<double>& w, int ix, int iy) const {
        const int xp = std::min(nx_ - 1, ix + 1), xm = std::max(0, ix - 1);
        return (w[idx(xp, iy)] - w[idx(xm, iy)]) / ((xp - xm) * dx_);
    }
    std::size_t idx(int ix, int iy) const {
        return static_cast<std::size_t>(iy) * static_cast<std::size_t>(nx_) +
               static_cast<std::size_t>(ix);
    }

    double step_2d(std::vector<double>& u, double t, double h, double& clipped) {
        const bool absorbing = pb_.boundary == FpeProblem::Boundary::AbsorbingWithLeakage;
        const double vol = dx_ * dy_;
        if (!cached_) {
            fill_drift_faces(t);
            fill_a_cells(t);
        }
        // products a_ij u for the non-divergence flux
        p11_.resize(u.size());
        p12_.resize(u.size());
        p22_.resize(u.size());
        auto& p11 = p11_;
        auto& p12 = p12_;
        auto& p22 = p22_;
        for (std::size_t c = 0; c < u.size(); ++c) {
            p11[c] = w11_[c] * u[c];
            p12[c] = w12_[c] * u[c];
            p22[c] = w22_[c] * u[c];
        }

        fx_.assign(static_cast<std::size_t>(nx_ + 1) * ny_, 0.0);
        fy_.assign(static_cast<std::size_t>(nx_) * (ny_ + 1), 0.0);
        auto& fx = fx_;
        auto& fy = fy_;
        // x-direction faces
        for (int iy = 0; iy < ny_; ++iy)
            for (int ix = 1; ix < nx_; ++ix) {
                const double bx = bx_[static_cast<std::size_t>(iy) * (nx_ + 1) + ix];
                const double up = bx >= 0.0 ? u[idx(ix - 1, iy)] : u[idx(ix, iy)];
                double g;
                if (pb_.form == FpeProblem::DiffusionForm::NonDivergence) {
                    g = (p11[idx(ix, iy)] - p11[idx(ix - 1, iy)]) / dx_ +
                        0.5 * (dy_of(p12, ix - 1, iy) + dy_of(p12, ix, iy));
                } else {
                    const double a11f = 0.5 * (w11_[idx(ix - 1, iy)] + w11_[idx(ix, iy)]);
                    const double a12f = 0.5 * (w12_[idx(ix - 1, iy)] + w12_[idx(ix, iy)]);
                    g = a11f * (u[idx(ix, iy)] - u[idx(ix - 1, iy)]) / dx_ +
                        a12f * 0.5 * (dy_of(u, ix - 1, iy) + dy_of(u, ix, iy));
                }
                fx[static_cast<std::size_t>(iy) * (nx_ + 1) + ix] =
                    bx * up - 0.5 * pb_.kappa * g;
            }
        // y-direction faces
        for (int iy = 1; iy < ny_; ++iy)
            for (int ix = 0; ix < nx_; ++ix) {
                const double by = by_[static_cast<std::size_t>(iy) * nx_ + ix];
                const double up = by >= 0.0 ? u[idx(ix, iy - 1)] : u[idx(ix, iy)];
                double g;
                if (pb_.form == FpeProblem::DiffusionForm::NonDivergence) {
                    g = (p22[idx(ix, iy)] - p22[idx(ix, iy - 1)]) / dy_ +
                        0.5 * (dx_of(p12, ix, iy - 1) + dx_of(p12, ix, iy));
                } else {
                    const double a22f = 0.5 * (w22_[idx(ix, iy - 1)] + w22_[idx(ix, iy)]);
                    const double a12f = 0.5 * (w12_[idx(ix, iy - 1)] + w12_[idx(ix, iy)]);
                    g = a22f * (u[idx(ix, iy)] - u[idx(ix, iy - 1)]) / dy_ +
                        a12f * 0.5 * (dx_of(u, ix, iy - 1) + dx_of(u, ix, iy));
                }
                fy[static_cast<std::size_t>(iy) * nx_ + ix] = by * up - 0.5 * pb_.kappa * g;
            }
        double outflow = 0.0;
        if (absorbing) {
            for (int iy = 0; iy < ny_; ++iy) {
                const double blo = bx_[static_cast<std::size_t>(iy) * (nx_ + 1)];
                const double bhi = bx_[static_cast<std::size_t>(iy) * (nx_ + 1) + nx_];
                fx[static_cast<std::size_t>(iy) * (nx_ + 1)] =
                    std::min(0.0, blo) * u[idx(0, iy)];
                fx[static_cast<std::size_t>(iy) * (nx_ + 1) + nx_] =
                    std::max(0.0, bhi) * u[idx(nx_ - 1, iy)];
                outflow += (fx[static_cast<std::size_t>(iy) * (nx_ + 1) + nx_] -
                            fx[static_cast<std::size_t>(iy) * (nx_ + 1)]) *
                           h * dy_;
            }
            for (int ix = 0; ix < nx_; ++ix) {
                const double blo = by_[static_cast<std::size_t>(ix)];
                const double bhi = by_[static_cast<std::size_t>(ny_) * nx_ + ix];
                fy[static_cast<std::size_t>(ix)] = std::min(0.0, blo) * u[idx(ix, 0)];
                fy[static_cast<std::size_t>(ny_) * nx_ + ix] =
                    std::max(0.0, bhi) * u[idx(ix, ny_ - 1)];
                outflow += (fy[static_cast<std::size_t>(ny_) * nx_ + ix] -
                            fy[static_cast<std::size_t>(ix)]) *
                           h * dx_;
            }
        }
        for (int iy = 0; iy < ny_; ++iy)
            for (int ix = 0; ix < nx_; ++ix) {
                const double div =
                    (fx[static_cast<std::size_t>(iy) * (nx_ + 1) + ix + 1] -
                     fx[static_cast<std::size_t>(iy) * (nx_ + 1) + ix]) / dx_ +
                    (fy[static_cast<std::size_t>(iy + 1) * nx_ + ix] -
                     fy[static_cast<std::size_t>(iy) * nx_ + ix]) / dy_;
                u[idx(ix, iy)] -= h * div;
            }
        for (std::size_t c = 0; c < u.size(); ++c)
            if (u[c] < 0.0) {
                clipped += -u[c] * vol;
                u[c] = 0.0;
            }
        return outflow;
    }

    const FpeProblem& pb_;
    const BoxGrid& grid_;
    int nx_ = 0, ny_ = 0;
    double dx_ = 0.0, dy_ = 0.0;
    bool cached_ = false;
    std::vector<double> w11_, w12_, w22_;
    std::vector<double> bface_;  // 1D
    std::vector<double> bx_, by_;  // 2D face normal components
    std::vector<double> p11_, p12_, p22_, fx_, fy_;  // 2D per-step work arrays
};

}  // namespace

FpeSolution solve(const FpeProblem& problem, long steps, int frames) {
    if (steps <= 0) fail("step-size-error", "step count must be positive");
    if (problem.kappa < 0.0) fail("invalid-coefficients", "kappa must be >= 0");
    const double h = problem.horizon / static_cast<double>(steps);
    const double bound = cfl_step_bound(problem);
    if (h > bound)
        fail("step-size-error",
             "time step " + format_double(h) + " violates the CFL bound " +
                 format_double(bound) + "; suggested step " +
                 format_double(suggested_step(problem)));

    // a must be positive semidefinite at samples (2x2: trace/det test).
    {
        const int d = problem.field.dim;
        std::array<double, 2> x{};
        std::vector<double> a(static_cast<std::size_t>(d * d));
        for (std::size_t c = 0; c < problem.initial.grid.size();
             c += std::max<std::size_t>(1, problem.initial.grid.size() / 64)) {
            problem.initial.grid.center(c, x);
            problem.field.a_at(0.0, std::span<const double>(x.data(),
                                                            static_cast<std::size_t>(d)), a);
            if (d == 1 && a[0] < -1e-12) fail("invalid-coefficients", "a must be PSD");
            if (d == 2) {
                const double tr = a[0] + a[3], det = a[0] * a[3] - a[1] * a[2];
                if (tr < -1e-12 || det < -1e-10) fail("invalid-coefficients", "a must be PSD");
            }
        }
    }

    FpeSolution out;
    Stepper stepper(problem);
    std::vector<double> u = problem.initial.values;
    double leakage = problem.initial.leakage;
    double clipped = 0.0;
    const int nframes = std::max(1, frames);
    out.times.reserve(static_cast<std::size_t>(nframes) + 1);
    out.frames.reserve(static_cast<std::size_t>(nframes) + 1);
    out.frames.emplace_back(problem.initial.grid, u, problem.initial.time, leakage);
    out.times.push_back(problem.initial.time);

    long next_frame = 1;
    for (long k = 0; k < steps; ++k) {
        const double t = problem.initial.time + static_cast<double>(k) * h;
        leakage += stepper.step(u, t, h, clipped);
        const long frame_step = (next_frame * steps) / nframes;
        if (k + 1 == frame_step) {
            const double tf = problem.initial.time + static_cast<double>(k + 1) * h;
            out.frames.emplace_back(problem.initial.grid, u, tf, leakage);
            out.times.push_back(tf);
            ++next_frame;
        }
    }
    out.clipped_mass = clipped;
    return out;
}

CoefficientField divergence_form_convert(const CoefficientField& field) {
    CoefficientField out = field;
    const CoefficientField base = field;
    const int d = field.dim;
    out.drift = [base, d](double t, std::span<const double> x, std::span<double> b) {
        base.drift(t, x, b);
        std::vector<double> diva(static_cast<std::size_t>(d));
        base.a_divergence(t, x, 1e-5, diva);
        for (int i = 0; i < d; ++i)
            b[static_cast<std::size_t>(i)] += 0.5 * diva[static_cast<std::size_t>(i)];
    };
    return out;
}

LqAprioriReport lq_apriori_check(const FpeSolution& solution, const CoefficientField& field,
                                 double q, double slack) {
    if (!(q >= 1.0)) fail("invalid-exponent", "lq check needs q >= 1");
    LqAprioriReport report;
    report.q = q;
    report.discretization_slack = slack;
    if (solution.frames.empty()) fail("invalid-argument", "empty solution");
    const auto& grid = solution.frames.front().grid;
    const int d = field.dim;
    const double t0 = solution.times.front(), t1 = solution.times.back();

    // time quadrature of ||(div b_t)^-||_inf
    double integral = 0.0;
    const int nt = 65;
    std::array<double, 2> x{};
    std::vector<double> grad(static_cast<std::size_t>(d * d));
    const double dt = (t1 - t0) / nt;
    for (int k = 0; k < nt; ++k) {
        const double t = t0 + (k + 0.5) * dt;
        double worst = 0.0;
        for (std::size_t c = 0; c < grid.size(); ++c) {
            grid.center(c, x);
            field.drift_gradient(t, std::span<const double>(x.data(),
                                                            static_cast<std::size_t>(d)),
                                 1e-5, grad);
            double div = 0.0;
            for (int i = 0; i < d; ++i) div += grad[static_cast<std::size_t>(i * d + i)];
            worst = std::max(worst, std::max(0.0, -div));
        }
        integral += worst * dt;
    }
    report.bound_factor = std::exp((1.0 - 1.0 / q) * integral);
    report.initial_norm = measures::lr_norm(solution.frames.front(), q);
    const double rhs = report.initial_norm * report.bound_factor * (1.0 + slack);
    for (std::size_t f = 0; f < solution.frames.size(); ++f) {
        const double lhs = measures::lr_norm(solution.frames[f], q);
        const bool ok = lhs <= rhs;
        report.frames.push_back({solution.times[f], lhs, rhs, ok});
        report.pass = report.pass && ok;
    }
    return report;
}

}  // namespace fpstab::fpe
