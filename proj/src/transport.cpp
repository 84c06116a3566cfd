#include "fpstab/transport.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace fpstab::transport {

CostSpec CostSpec::log_squared(double delta) {
    if (!(delta > 0.0)) fail("invalid-argument", "log-squared cost needs delta > 0");
    CostSpec s;
    s.kind = CostKind::LogSquared;
    s.delta = delta;
    return s;
}

CostSpec CostSpec::log_linear(double delta) {
    if (!(delta > 0.0)) fail("invalid-argument", "log-linear cost needs delta > 0");
    CostSpec s;
    s.kind = CostKind::LogLinear;
    s.delta = delta;
    return s;
}

CostSpec CostSpec::osgood(double delta,
                          std::shared_ptr<const coefficients::OsgoodModulus> modulus) {
    if (!(delta > 0.0)) fail("invalid-argument", "osgood cost needs delta > 0");
    if (!modulus) fail("invalid-argument", "osgood cost needs a registered modulus");
    CostSpec s;
    s.kind = CostKind::Osgood;
    s.delta = delta;
    s.modulus = std::move(modulus);
    return s;
}

CostSpec CostSpec::power(double p) {
    if (!(p >= 1.0)) fail("invalid-argument", "power cost needs p >= 1");
    CostSpec s;
    s.kind = CostKind::Power;
    s.p = p;
    return s;
}

double eval_cost(const CostSpec& spec, std::span<const double> x,
                 std::span<const double> y) {
    double z2 = 0.0;
    for (std::size_t a = 0; a < x.size(); ++a) z2 += sqr(x[a] - y[a]);
    switch (spec.kind) {
        case CostKind::LogSquared:
            return std::log1p(z2 / sqr(spec.delta));
        case CostKind::LogLinear:
            return std::log1p(std::sqrt(z2) / spec.delta);
        case CostKind::Osgood:
            return coefficients::osgood_psi(z2, *spec.modulus, spec.delta, 1e-8);
        case CostKind::Power:
            if (spec.p == 2.0) return z2;
            if (spec.p == 1.0) return std::sqrt(z2);
            return std::pow(z2, 0.5 * spec.p);
    }
    return 0.0;
}

double TransportPlan::marginal_error(std::span<const double> row_weights,
                                     std::span<const double> col_weights) const {
    std::vector<double> rs(rows, 0.0), cs(cols, 0.0);
    for (const auto& e : entries) {
        rs[static_cast<std::size_t>(e.i)] += e.mass;
        cs[static_cast<std::size_t>(e.j)] += e.mass;
    }
    double err = 0.0;
    for (std::size_t i = 0; i < rows; ++i) err = std::max(err, std::abs(rs[i] - row_weights[i]));
    for (std::size_t j = 0; j < cols; ++j) err = std::max(err, std::abs(cs[j] - col_weights[j]));
    return err;
}

namespace {

void check_probability(const ParticleCloud& cloud, const char* which) {
    double sum = 0.0;
    for (double w : cloud.weights) sum += w;
    if (std::abs(sum - 1.0) > 1e-9)
        fail("invalid-measure", std::string(which) + " weights sum to " + format_double(sum));
}

std::vector<double> dense_cost(const ParticleCloud& mu, const ParticleCloud& nu,
                               const CostSpec& spec) {
    const std::size_t n = mu.size(), m = nu.size();
    std::vector<double> c(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = mu.point(i);
        for (std::size_t j = 0; j < m; ++j) c[i * m + j] = eval_cost(spec, x, nu.point(j));
    }
    return c;
}

/// Transportation simplex on a dense cost matrix. Basis kept as a spanning
/// tree over row nodes [0,n) and column nodes [n,n+m).
class TransportSimplex {
public:
    TransportSimplex(std::vector<double> cost, std::vector<double> a, std::vector<double> b)
        : c_(std::move(cost)), a_(std::move(a)), b_(std::move(b)),
          n_(a_.size()), m_(b_.size()) {}

    void solve() {
        northwest_start();
        double cmax = 1e-12;
        for (double v : c_) cmax = std::max(cmax, std::abs(v));
        const double tol = 1e-13 * cmax;
        const std::size_t max_iters = 200 * (n_ + m_) * (n_ + m_) + 10000;
        std::size_t stall = 0;
        double last_obj = objective();
        bool bland = false;
        for (std::size_t it = 0; it < max_iters; ++it) {
            compute_potentials();
            int ei = -1, ej = -1;
            double best = -tol;
            for (std::size_t i = 0; i < n_ && (!bland || ei < 0); ++i) {
                for (std::size_t j = 0; j < m_; ++j) {
                    if (in_basis_[i * m_ + j]) continue;
                    const double rc = c_[i * m_ + j] - u_[i] - v_[j];
                    if (rc < best) {
                        best = rc;
                        ei = static_cast<int>(i);
                        ej = static_cast<int>(j);
                        if (bland) break;
                    }
                }
            }
            if (ei < 0) return;  // optimal
            pivot(static_cast<std::size_t>(ei), static_cast<std::size_t>(ej));
            const double obj = objective();
            if (obj < last_obj - tol) {
                stall = 0;
                last_obj = obj;
            } else if (++stall > 4 * (n_ + m_)) {
                bland = true;  // anti-cycling fallback
            }
        }
        fail("convergence-failure", "transport simplex exceeded its pivot budget");
    }

    double objective() const {
        double s = 0.0;
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < m_; ++j)
                if (in_basis_[i * m_ + j]) s += flow_[i * m_ + j] * c_[i * m_ + j];
        return s;
    }

    std::vector<TransportPlan::Entry> entries() const {
        std::vector<TransportPlan::Entry> out;
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < m_; ++j)
                if (in_basis_[i * m_ + j] && flow_[i * m_ + j] > 0.0)
                    out.push_back({static_cast<int>(i), static_cast<int>(j), flow_[i * m_ + j]});
        return out;
    }

    double dual_value() const {
        double s = 0.0;
        for (std::size_t i = 0; i < n_; ++i) s += a_[i] * u_[i];
        for (std::size_t j = 0; j < m_; ++j) s += b_[j] * v_[j];
        return s;
    }

private:
    void northwest_start() {
        flow_.assign(n_ * m_, 0.0);
        in_basis_.assign(n_ * m_, false);
        std::vector<double> ra = a_, rb = b_;
        std::size_t i = 0, j = 0;
        while (true) {
            in_basis_[i * m_ + j] = true;
            const double q = std::min(ra[i], rb[j]);
            flow_[i * m_ + j] = q;
            ra[i] -= q;
            rb[j] -= q;
            if (i == n_ - 1 && j == m_ - 1) break;
            // On ties advance one index only, leaving a zero-flow basic arc,
            // so the basis always has n+m-1 arcs.
            if (i == n_ - 1)
                ++j;
            else if (j == m_ - 1)
                ++i;
            else if (ra[i] <= rb[j])
                ++i;
            else
                ++j;
        }
    }

    void compute_potentials() {
        u_.assign(n_, 0.0);
        v_.assign(m_, 0.0);
        std::vector<char> seen_row(n_, 0), seen_col(m_, 0);
        // adjacency over basic arcs
        std::vector<std::vector<std::size_t>> row_arcs(n_), col_arcs(m_);
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < m_; ++j)
                if (in_basis_[i * m_ + j]) {
                    row_arcs[i].push_back(j);
                    col_arcs[j].push_back(i);
                }
        std::deque<std::pair<bool, std::size_t>> queue;  // (is_row, index)
        queue.emplace_back(true, 0);
        seen_row[0] = 1;
        while (!queue.empty()) {
            const auto [is_row, idx] = queue.front();
            queue.pop_front();
            if (is_row) {
                for (std::size_t j : row_arcs[idx])
                    if (!seen_col[j]) {
                        seen_col[j] = 1;
                        v_[j] = c_[idx * m_ + j] - u_[idx];
                        queue.emplace_back(false, j);
                    }
            } else {
                for (std::size_t i : col_arcs[idx])
                    if (!seen_row[i]) {
                        seen_row[i] = 1;
                        u_[i] = c_[i * m_ + idx] - v_[idx];
                        queue.emplace_back(true, i);
                    }
            }
        }
    }

    // Finds the unique basis cycle created by arc (ei, ej) and pivots on it.
    void pivot(std::size_t ei, std::size_t ej) {
        // BFS in the basis tree from column ej back to row ei.
        const std::size_t nodes = n_ + m_;
        std::vector<int> parent(nodes, -1);
        std::vector<char> seen(nodes, 0);
        std::deque<std::size_t> queue;
        const std::size_t start = n_ + ej, goal = ei;
        queue.push_back(start);
        seen[start] = 1;
        while (!queue.empty()) {
            const std::size_t nd = queue.front();
            queue.pop_front();
            if (nd == goal) break;
            if (nd < n_) {
                for (std::size_t j = 0; j < m_; ++j)
                    if (in_basis_[nd * m_ + j] && !seen[n_ + j]) {
                        seen[n_ + j] = 1;
                        parent[n_ + j] = static_cast<int>(nd);
                        queue.push_back(n_ + j);
                    }
            } else {
                const std::size_t j = nd - n_;
                for (std::size_t i = 0; i < n_; ++i)
                    if (in_basis_[i * m_ + j] && !seen[i]) {
                        seen[i] = 1;
                        parent[i] = static_cast<int>(nd);
                        queue.push_back(i);
                    }
            }
        }
        // Walk goal -> start; arcs alternate backward (-theta) / forward (+theta),
        // starting with the backward arc that shares row ei.
        std::vector<std::pair<std::size_t, int>> cycle;  // (flat arc, sign)
        std::size_t nd = goal;
        int sign = -1;
        while (nd != start) {
            const std::size_t pr = static_cast<std::size_t>(parent[nd]);
            const std::size_t i = nd < n_ ? nd : pr;
            const std::size_t j = nd < n_ ? pr - n_ : nd - n_;
            cycle.emplace_back(i * m_ + j, sign);
            sign = -sign;
            nd = pr;
        }
        double theta = kInf;
        std::size_t leave = 0;
        for (const auto& [arc, s] : cycle)
            if (s < 0 && flow_[arc] < theta) {
                theta = flow_[arc];
                leave = arc;
            }
        for (const auto& [arc, s] : cycle) flow_[arc] += s * theta;
        in_basis_[leave] = false;
        flow_[leave] = 0.0;
        in_basis_[ei * m_ + ej] = true;
        flow_[ei * m_ + ej] += theta;
    }

    std::vector<double> c_, a_, b_;
    std::size_t n_, m_;
    std::vector<double> flow_;
    std::vector<char> in_basis_;
    std::vector<double> u_, v_;

public:
    const std::vector<double>& row_potentials() const { return u_; }
    const std::vector<double>& col_potentials() const { return v_; }
};

}  // namespace

TransportPlan solve_exact(const ParticleCloud& mu, const ParticleCloud& nu,
                          const CostSpec& spec, std::size_t entry_cap) {
    check_probability(mu, "row");
    check_probability(nu, "column");
    if (mu.size() * nu.size() > entry_cap)
        fail("size-cap", "support product " + std::to_string(mu.size() * nu.size()) +
                             " exceeds the exact-solver cap; use solve_entropic");

    // Drop zero-weight atoms, keeping index maps back to the inputs.
    std::vector<int> rmap, cmap;
    std::vector<double> a, b;
    for (std::size_t i = 0; i < mu.size(); ++i)
        if (mu.weights[i] > 0.0) {
            rmap.push_back(static_cast<int>(i));
            a.push_back(mu.weights[i]);
        }
    for (std::size_t j = 0; j < nu.size(); ++j)
        if (nu.weights[j] > 0.0) {
            cmap.push_back(static_cast<int>(j));
            b.push_back(nu.weights[j]);
        }
    const std::size_t n = a.size(), m = b.size();
    std::vector<double> c(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = mu.point(static_cast<std::size_t>(rmap[i]));
        for (std::size_t j = 0; j < m; ++j)
            c[i * m + j] = eval_cost(spec, x, nu.point(static_cast<std::size_t>(cmap[j])));
    }

    TransportSimplex simplex(std::move(c), std::move(a), std::move(b));
    simplex.solve();

    TransportPlan plan;
    plan.rows = mu.size();
    plan.cols = nu.size();
    plan.solver = "exact";
    plan.cost = simplex.objective();
    plan.duality_gap = std::abs(plan.cost - simplex.dual_value());
    for (const auto& e : simplex.entries())
        plan.entries.push_back({rmap[static_cast<std::size_t>(e.i)],
                                cmap[static_cast<std::size_t>(e.j)], e.mass});
    return plan;
}

TransportPlan solve_entropic(const ParticleCloud& mu, const ParticleCloud& nu,
                             const CostSpec& spec, double epsilon, int max_iters) {
    if (!(epsilon > 0.0)) fail("invalid-argument", "entropic solver needs epsilon > 0");
    check_probability(mu, "row");
    check_probability(nu, "column");
    const std::size_t n = mu.size(), m = nu.size();
    const std::vector<double> c = dense_cost(mu, nu, spec);
    std::vector<double> f(n, 0.0), g(m, 0.0);
    std::vector<double> loga(n), logb(m);
    for (std::size_t i = 0; i < n; ++i)
        loga[i] = mu.weights[i] > 0.0 ? std::log(mu.weights[i]) : -1e300;
    for (std::size_t j = 0; j < m; ++j)
        logb[j] = nu.weights[j] > 0.0 ? std::log(nu.weights[j]) : -1e300;

    const auto lse_row = [&](std::size_t i) {
        double mx = -kInf;
        for (std::size_t j = 0; j < m; ++j)
            mx = std::max(mx, (g[j] - c[i * m + j]) / epsilon);
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j)
            s += std::exp((g[j] - c[i * m + j]) / epsilon - mx);
        return mx + std::log(s);
    };
    const auto lse_col = [&](std::size_t j) {
        double mx = -kInf;
        for (std::size_t i = 0; i < n; ++i)
            mx = std::max(mx, (f[i] - c[i * m + j]) / epsilon);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            s += std::exp((f[i] - c[i * m + j]) / epsilon - mx);
        return mx + std::log(s);
    };

    // L1 violation of the row marginals (columns are exact after a column
    // update); the rounding step inflates the cost by at most 2 max|c| times
    // this quantity.
    const auto row_violation_l1 = [&]() {
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < m; ++j)
                row += std::exp((f[i] + g[j] - c[i * m + j]) / epsilon);
            v += std::abs(row - mu.weights[i]);
        }
        return v;
    };
    const auto sweep = [&]() {
        for (std::size_t i = 0; i < n; ++i) f[i] = epsilon * loga[i] - epsilon * lse_row(i);
        for (std::size_t j = 0; j < m; ++j) g[j] = epsilon * logb[j] - epsilon * lse_col(j);
    };

    // epsilon scaling: warm-start the potentials from looser regularizations
    {
        double cmax = 0.0;
        for (double v : c) cmax = std::max(cmax, std::abs(v));
        std::vector<double> schedule;
        for (double e = std::max(epsilon, 0.25 * cmax + 1e-30); e > epsilon; e *= 0.5)
            schedule.push_back(e);
        const double target = epsilon;
        for (double e : schedule) {
            epsilon = e;
            for (int s = 0; s < 300; ++s) {
                sweep();
                if (row_violation_l1() < 1e-6) break;
            }
        }
        epsilon = target;
    }

    double violation = kInf;
    double best_violation = kInf;
    int since_improvement = 0;
    int it = 0;
    for (; it < max_iters; ++it) {
        sweep();
        violation = row_violation_l1();
        if (violation < 1e-9) break;
        if (violation < 0.99 * best_violation) {
            best_violation = std::min(best_violation, violation);
            since_improvement = 0;
        } else if (++since_improvement > 500) {
            break;  // rounding repairs the residual violation
        }
    }
    if (violation >= 0.05)
        fail("convergence-failure",
             "sinkhorn stalled after " + std::to_string(it) + " iterations, marginal violation " +
                 format_double(violation));

    std::vector<double> plan_dense(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            plan_dense[i * m + j] = std::exp((f[i] + g[j] - c[i * m + j]) / epsilon);

    // Round to the exact marginals (row scaling, column scaling, rank-one fix).
    std::vector<double> rs(n, 0.0), cs(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) rs[i] += plan_dense[i * m + j];
    for (std::size_t i = 0; i < n; ++i) {
        const double s = rs[i] > 0.0 ? std::min(1.0, mu.weights[i] / rs[i]) : 0.0;
        for (std::size_t j = 0; j < m; ++j) plan_dense[i * m + j] *= s;
    }
    for (std::size_t j = 0; j < m; ++j) {
        cs[j] = 0.0;
        for (std::size_t i = 0; i < n; ++i) cs[j] += plan_dense[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) {
        const double s = cs[j] > 0.0 ? std::min(1.0, nu.weights[j] / cs[j]) : 0.0;
        for (std::size_t i = 0; i < n; ++i) plan_dense[i * m + j] *= s;
    }
    std::vector<double> ea(n, 0.0), eb(m, 0.0);
    double ea_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < m; ++j) row += plan_dense[i * m + j];
        ea[i] = mu.weights[i] - row;
        ea_sum += ea[i];
    }
    for (std::size_t j = 0; j < m; ++j) {
        double col = 0.0;
        for (std::size_t i = 0; i < n; ++i) col += plan_dense[i * m + j];
        eb[j] = nu.weights[j] - col;
    }
    if (ea_sum > 1e-300)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j)
                plan_dense[i * m + j] += ea[i] * eb[j] / ea_sum;

    TransportPlan plan;
    plan.rows = n;
    plan.cols = m;
    plan.solver = "entropic";
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double mass = plan_dense[i * m + j];
            cost += mass * c[i * m + j];
            if (mass > 1e-16)
                plan.entries.push_back({static_cast<int>(i), static_cast<int>(j), mass});
        }
    plan.cost = cost;
    // c-transform of f gives a feasible dual pair; the gap bounds
    // suboptimality of the rounded plan.
    std::vector<double> g_tight(m, kInf);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < n; ++i)
            g_tight[j] = std::min(g_tight[j], c[i * m + j] - f[i]);
    double dual = 0.0;
    for (std::size_t i = 0; i < n; ++i) dual += mu.weights[i] * f[i];
    for (std::size_t j = 0; j < m; ++j) dual += nu.weights[j] * g_tight[j];
    plan.duality_gap = std::max(0.0, cost - dual);
    return plan;
}

DistanceRelations distance_relations(const ParticleCloud& mu, const ParticleCloud& nu,
                                     double delta) {
    DistanceRelations out;
    out.d_delta = solve_exact(mu, nu, CostSpec::log_linear(delta)).cost;
    out.tilde_d_delta = solve_exact(mu, nu, CostSpec::log_squared(delta)).cost;
    out.lhs1 = out.tilde_d_delta;
    out.rhs1 = 2.0 * out.d_delta;
    out.lhs2 = out.d_delta;
    out.rhs2 = std::sqrt(out.tilde_d_delta / std::log(2.0)) + out.tilde_d_delta;
    const double slack = 1e-12;
    out.pass = out.lhs1 <= out.rhs1 + slack && out.lhs2 <= out.rhs2 + slack;
    return out;
}

double ot_value(const ParticleCloud& mu, const ParticleCloud& nu, const CostSpec& spec) {
    return solve_exact(mu, nu, spec).cost;
}

double wasserstein_1d_quantile(const ParticleCloud& mu, const ParticleCloud& nu, double p) {
    if (mu.dim != 1 || nu.dim != 1) fail("invalid-argument", "quantile path is 1D only");
    const auto sorted = [](const ParticleCloud& c) {
        std::vector<std::pair<double, double>> atoms(c.size());
        for (std::size_t i = 0; i < c.size(); ++i) atoms[i] = {c.points[i], c.weights[i]};
        std::sort(atoms.begin(), atoms.end());
        return atoms;
    };
    const auto A = sorted(mu), B = sorted(nu);
    std::size_t i = 0, j = 0;
    double ra = A.empty() ? 0.0 : A[0].second;
    double rb = B.empty() ? 0.0 : B[0].second;
    double cost = 0.0;
    while (i < A.size() && j < B.size()) {
        const double q = std::min(ra, rb);
        cost += q * std::pow(std::abs(A[i].first - B[j].first), p);
        ra -= q;
        rb -= q;
        if (ra <= 1e-15 && i + 1 < A.size()) ra = A[++i].second;
        else if (ra <= 1e-15) ++i;
        if (rb <= 1e-15 && j + 1 < B.size()) rb = B[++j].second;
        else if (rb <= 1e-15) ++j;
    }
    return std::pow(cost, 1.0 / p);
}

double wasserstein_grid_1d(const measures::GridDensity& a, const measures::GridDensity& b,
                           double p, int quantile_samples) {
    if (a.grid.dim != 1 || b.grid.dim != 1)
        fail("invalid-argument", "grid quantile path is 1D only");
    const auto quantile_fn = [](const measures::GridDensity& d) {
        const int n = d.grid.cells[0];
        const double dx = d.grid.spacing(0);
        std::vector<double> cdf(static_cast<std::size_t>(n) + 1, 0.0);
        for (int i = 0; i < n; ++i)
            cdf[static_cast<std::size_t>(i) + 1] =
                cdf[static_cast<std::size_t>(i)] + d.values[static_cast<std::size_t>(i)] * dx;
        const double total = cdf.back();
        return [cdf = std::move(cdf), lo = d.grid.lo[0], dx, n, total](double u) {
            const double target = u * total;
            const auto it = std::lower_bound(cdf.begin(), cdf.end(), target);
            std::size_t i = it == cdf.begin() ? 1 : static_cast<std::size_t>(it - cdf.begin());
            i = std::min(i, static_cast<std::size_t>(n));
            const double seg = cdf[i] - cdf[i - 1];
            const double frac = seg > 0.0 ? (target - cdf[i - 1]) / seg : 0.0;
            return lo + (static_cast<double>(i - 1) + frac) * dx;
        };
    };
    const auto qa = quantile_fn(a), qb = quantile_fn(b);
    double acc = 0.0;
    for (int k = 0; k < quantile_samples; ++k) {
        const double u = (k + 0.5) / quantile_samples;
        acc += std::pow(std::abs(qa(u) - qb(u)), p);
    }
    return std::pow(acc / quantile_samples, 1.0 / p);
}

std::function<double(double)> make_cost_evaluator(const CostSpec& spec, double max_sq_dist) {
    switch (spec.kind) {
        case CostKind::LogSquared: {
            const double d2 = sqr(spec.delta);
            return [d2](double s) { return std::log1p(s / d2); };
        }
        case CostKind::LogLinear: {
            const double delta = spec.delta;
            return [delta](double s) { return std::log1p(std::sqrt(s) / delta); };
        }
        case CostKind::Power: {
            const double p = spec.p;
            return [p](double s) {
                if (p == 2.0) return s;
                if (p == 1.0) return std::sqrt(s);
                return std::pow(s, 0.5 * p);
            };
        }
        case CostKind::Osgood: {
            // tabulate psi_delta on a log1p grid once
            const int knots = 4096;
            const double cap = std::max(max_sq_dist, 1e-12);
            const double umax = std::log1p(cap);
            auto table = std::make_shared<std::vector<double>>(knots + 1);
            for (int k = 0; k <= knots; ++k) {
                const double s = std::expm1(umax * k / knots);
                (*table)[static_cast<std::size_t>(k)] =
                    coefficients::osgood_psi(s, *spec.modulus, spec.delta, 1e-9);
            }
            const auto modulus = spec.modulus;
            const double delta = spec.delta;
            return [table, umax, knots, modulus, delta](double s) {
                if (s <= 0.0) return 0.0;
                const double u = std::log1p(s);
                if (u >= umax)
                    return coefficients::osgood_psi(s, *modulus, delta, 1e-9);
                const double pos = u / umax * knots;
                const std::size_t k = std::min(static_cast<std::size_t>(knots) - 1,
                                               static_cast<std::size_t>(pos));
                const double w = pos - static_cast<double>(k);
                return (1.0 - w) * (*table)[k] + w * (*table)[k + 1];
            };
        }
    }
    return [](double) { return 0.0; };
}

double wasserstein(const ParticleCloud& mu, const ParticleCloud& nu, double p) {
    if (!(p >= 1.0)) fail("invalid-exponent", "wasserstein needs p >= 1");
    if (mu.dim == 1 && nu.dim == 1) return wasserstein_1d_quantile(mu, nu, p);
    const double cost = solve_exact(mu, nu, CostSpec::power(p)).cost;
    return std::pow(cost, 1.0 / p);
}

void save_plan(const TransportPlan& plan, const CostSpec& spec,
               const std::string& csv_path, const std::string& json_path) {
    std::string csv = "i,j,mass\n";
    for (const auto& e : plan.entries)
        csv += std::to_string(e.i) + "," + std::to_string(e.j) + "," +
               format_double(e.mass) + "\n";
    std::ofstream f(csv_path, std::ios::binary);
    if (!f) fail("io-error", "cannot write " + csv_path);
    f << csv;

    nlohmann::json j;
    switch (spec.kind) {
        case CostKind::LogSquared: j["cost_kind"] = "log-squared"; break;
        case CostKind::LogLinear: j["cost_kind"] = "log-linear"; break;
        case CostKind::Osgood: j["cost_kind"] = "osgood"; break;
        case CostKind::Power: j["cost_kind"] = "power"; break;
    }
    j["delta"] = spec.delta;
    j["p"] = spec.p;
    j["value"] = plan.cost;
    j["duality_gap"] = plan.duality_gap;
    j["solver"] = plan.solver;
    j["rows"] = plan.rows;
    j["cols"] = plan.cols;
    std::ofstream jf(json_path, std::ios::binary);
    if (!jf) fail("io-error", "cannot write " + json_path);
    jf << j.dump(2) << "\n";
}

}  // namespace fpstab::transport
