#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fpstab {

/// Error with a machine-readable kind tag (e.g. "invalid-exponent").
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

[[noreturn]] inline void fail(const std::string& kind, const std::string& message) {
    throw Error(kind, message);
}

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double sqr(double x) { return x * x; }

inline double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double dist2(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += sqr(x[i] - y[i]);
    return std::sqrt(s);
}

inline double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

/// Deterministic shortest-roundtrip decimal formatting, used by every CSV
/// writer so that reports are byte-stable across runs.
inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

/// Adaptive Simpson quadrature on [a, b].
namespace detail {
inline double simpson_step(const std::function<double(double)>& f, double a, double b,
                           double fa, double fm, double fb, double whole, double tol,
                           int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
        return left + right + delta / 15.0;
    return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}
}  // namespace detail

inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double rel_tol = 1e-10, int max_depth = 50) {
    if (a == b) return 0.0;
    const double m = 0.5 * (a + b);
    const double fa = f(a), fm = f(m), fb = f(b);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    const double scale = std::max(std::abs(whole), 1e-300);
    return detail::simpson_step(f, a, b, fa, fm, fb, whole, rel_tol * scale, max_depth);
}

/// Minimize a scalar function over [lo, hi] by log-spaced scan plus
/// golden-section refinement around the best sample.
inline double minimize_log_scan(const std::function<double(double)>& f, double lo,
                                double hi, int scan_points = 400,
                                double rel_tol = 1e-7) {
    const double llo = std::log(lo), lhi = std::log(hi);
    int best = 0;
    double best_val = kInf;
    std::vector<double> xs(static_cast<std::size_t>(scan_points));
    for (int i = 0; i < scan_points; ++i) {
        const double x = std::exp(llo + (lhi - llo) * i / (scan_points - 1));
        xs[static_cast<std::size_t>(i)] = x;
        const double v = f(x);
        if (v < best_val) {
            best_val = v;
            best = i;
        }
    }
    double a = xs[static_cast<std::size_t>(std::max(0, best - 1))];
    double b = xs[static_cast<std::size_t>(std::min(scan_points - 1, best + 1))];
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - gr * (b - a), d = a + gr * (b - a);
    double fc = f(c), fd = f(d);
    while ((b - a) > rel_tol * std::max(1.0, std::abs(a))) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = f(d);
        }
    }
    return std::min({best_val, fc, fd});
}

/// Chunked parallel loop over [0, n); deterministic as long as iterations
/// write to disjoint slots.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (hw == 1 || n < 1024) {
        body(0, n);
        return;
    }
    const std::size_t chunks = std::min<std::size_t>(hw, 4);
    const std::size_t step = (n + chunks - 1) / chunks;
    std::vector<std::thread> pool;
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t lo = c * step;
        const std::size_t hi = std::min(n, lo + step);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& t : pool) t.join();
}

/// Least-squares slope of y against x.
inline double fit_slope(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double denom = n * sxx - sx * sx;
    if (std::abs(denom) < 1e-300) return 0.0;
    return (n * sxy - sx * sy) / denom;
}

}  // namespace fpstab
