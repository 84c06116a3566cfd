// Test-only oracles, independent of the solver code paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "fpstab/measures.hpp"
#include "fpstab/transport.hpp"

namespace oracles {

using fpstab::measures::ParticleCloud;
using fpstab::transport::CostSpec;

/// Exact transport optimum by enumerating every basic feasible solution
/// (spanning trees of the bipartite support graph). Exponential; supports
/// up to roughly 4x4.
inline double brute_force_ot(const ParticleCloud& mu, const ParticleCloud& nu,
                             const CostSpec& spec) {
    const int n = static_cast<int>(mu.size());
    const int m = static_cast<int>(nu.size());
    const int cells = n * m;
    const int basis = n + m - 1;
    std::vector<double> cost(static_cast<std::size_t>(cells));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            cost[static_cast<std::size_t>(i * m + j)] = fpstab::transport::eval_cost(
                spec, mu.point(static_cast<std::size_t>(i)),
                nu.point(static_cast<std::size_t>(j)));

    double best = std::numeric_limits<double>::infinity();
    std::vector<int> pick(static_cast<std::size_t>(basis));
    std::iota(pick.begin(), pick.end(), 0);

    const auto evaluate = [&](const std::vector<int>& arcs) {
        // union-find acyclicity + connectivity over n+m nodes
        std::vector<int> parent(static_cast<std::size_t>(n + m));
        std::iota(parent.begin(), parent.end(), 0);
        const auto find = [&](int v) {
            while (parent[static_cast<std::size_t>(v)] != v)
                v = parent[static_cast<std::size_t>(v)] =
                    parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(v)])];
            return v;
        };
        for (int arc : arcs) {
            const int a = arc / m, b = n + arc % m;
            const int ra = find(a), rb = find(b);
            if (ra == rb) return;  // cycle
            parent[static_cast<std::size_t>(ra)] = rb;
        }
        // leaf stripping solves the unique flows on the tree
        std::vector<double> supply(mu.weights);
        supply.insert(supply.end(), nu.weights.begin(), nu.weights.end());
        std::vector<int> degree(static_cast<std::size_t>(n + m), 0);
        std::vector<std::vector<int>> incident(static_cast<std::size_t>(n + m));
        for (int arc : arcs) {
            const int a = arc / m, b = n + arc % m;
            degree[static_cast<std::size_t>(a)]++;
            degree[static_cast<std::size_t>(b)]++;
            incident[static_cast<std::size_t>(a)].push_back(arc);
            incident[static_cast<std::size_t>(b)].push_back(arc);
        }
        std::vector<char> arc_done(static_cast<std::size_t>(cells), 0);
        std::vector<double> flow(static_cast<std::size_t>(cells), 0.0);
        std::vector<int> queue;
        for (int v = 0; v < n + m; ++v)
            if (degree[static_cast<std::size_t>(v)] == 1) queue.push_back(v);
        double total_cost = 0.0;
        for (std::size_t qi = 0; qi < queue.size(); ++qi) {
            const int v = queue[qi];
            if (degree[static_cast<std::size_t>(v)] != 1) continue;
            int arc = -1;
            for (int e : incident[static_cast<std::size_t>(v)])
                if (!arc_done[static_cast<std::size_t>(e)]) arc = e;
            if (arc < 0) continue;
            const int a = arc / m, b = n + arc % m;
            const int other = (v == a) ? b : a;
            const double f = (v < n) ? supply[static_cast<std::size_t>(v)]
                                     : supply[static_cast<std::size_t>(v)];
            if (f < -1e-12) return;  // infeasible vertex
            flow[static_cast<std::size_t>(arc)] = f;
            total_cost += f * cost[static_cast<std::size_t>(arc)];
            supply[static_cast<std::size_t>(other)] -= f;
            supply[static_cast<std::size_t>(v)] = 0.0;
            arc_done[static_cast<std::size_t>(arc)] = 1;
            degree[static_cast<std::size_t>(v)]--;
            degree[static_cast<std::size_t>(other)]--;
            if (degree[static_cast<std::size_t>(other)] == 1) queue.push_back(other);
        }
        for (double f : flow)
            if (f < -1e-12) return;
        best = std::min(best, total_cost);
    };

    // enumerate all subsets of size n+m-1
    while (true) {
        evaluate(pick);
        int i = basis - 1;
        while (i >= 0 && pick[static_cast<std::size_t>(i)] == cells - basis + i) --i;
        if (i < 0) break;
        ++pick[static_cast<std::size_t>(i)];
        for (int j = i + 1; j < basis; ++j)
            pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
    }
    return best;
}

/// Midpoint Riemann integral on [a, b], used as an independent quadrature.
template <typename F>
double riemann(F&& f, double a, double b, int n = 200000) {
    double acc = 0.0;
    const double h = (b - a) / n;
    for (int k = 0; k < n; ++k) acc += f(a + (k + 0.5) * h);
    return acc * h;
}

}  // namespace oracles
