#include "fpstab/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fpstab::experiments {

namespace fs = std::filesystem;
using coefficients::CoefficientField;
using measures::BoxGrid;
using measures::GridDensity;

namespace {

[[noreturn]] void invalid(const std::string& path, const std::string& constraint) {
    fail("validation-error", path + ": " + constraint);
}

double param(const std::map<std::string, double>& params, const std::string& key,
             double fallback) {
    const auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

std::string short_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", x);
    return buf;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

CoefficientField make_drift_sigma(int dim, double horizon, const std::string& drift_name,
                                  const std::map<std::string, double>& dp,
                                  const std::string& sigma_name,
                                  const std::map<std::string, double>& sp) {
    CoefficientField f;
    f.dim = dim;
    f.noise_dim = dim;
    f.horizon = horizon;
    f.time_independent = true;  // every builtin is autonomous

    if (drift_name == "zero") {
        f.drift = [](double, std::span<const double>, std::span<double> b) {
            for (auto& v : b) v = 0.0;
        };
        f.lipschitz = 0.0;
    } else if (drift_name == "constant") {
        const double c = param(dp, "value", 1.0);
        f.drift = [c](double, std::span<const double>, std::span<double> b) {
            for (auto& v : b) v = c;
        };
        f.lipschitz = 0.0;
    } else if (drift_name == "linear") {
        const double rate = param(dp, "rate", -1.0);
        const double center = param(dp, "center", 0.0);
        f.drift = [rate, center](double, std::span<const double> x, std::span<double> b) {
            for (std::size_t a = 0; a < b.size(); ++a) b[a] = rate * (x[a] - center);
        };
        f.lipschitz = std::abs(rate);
    } else if (drift_name == "linear_shift") {
        const double rate = param(dp, "rate", -1.0);
        const double shift = param(dp, "shift", 0.0);
        f.drift = [rate, shift](double, std::span<const double> x, std::span<double> b) {
            for (std::size_t a = 0; a < b.size(); ++a) b[a] = rate * x[a] + shift;
        };
        f.lipschitz = std::abs(rate);
    } else if (drift_name == "linear_smoothstep") {
        const double rate = param(dp, "rate", -1.0);
        const double amp = param(dp, "amp", 0.05);
        const double width = param(dp, "width", 0.05);
        f.drift = [rate, amp, width](double, std::span<const double> x, std::span<double> b) {
            for (std::size_t a = 0; a < b.size(); ++a)
                b[a] = rate * x[a] + ((a == 0) ? amp * sigmoid(x[0] / width) : 0.0);
        };
        f.lipschitz = std::abs(rate) + 0.25 * std::abs(amp) / width;
    } else if (drift_name == "sin") {
        const double amp = param(dp, "amp", 1.0);
        const double freq = param(dp, "freq", 1.0);
        f.drift = [amp, freq](double, std::span<const double> x, std::span<double> b) {
            for (std::size_t a = 0; a < b.size(); ++a) b[a] = amp * std::sin(freq * x[a]);
        };
        f.lipschitz = std::abs(amp * freq);
    } else if (drift_name == "sin_shift") {
        const double amp = param(dp, "amp", 1.0);
        const double freq = param(dp, "freq", 1.0);
        const double shift = param(dp, "shift", 0.0);
        f.drift = [amp, freq, shift](double, std::span<const double> x, std::span<double> b) {
            for (std::size_t a = 0; a < b.size(); ++a)
                b[a] = amp * std::sin(freq * x[a]) + ((a == 0) ? shift : 0.0);
        };
        f.lipschitz = std::abs(amp * freq);
    } else if (drift_name == "shear") {
        if (dim != 2) fail("validation-error", "the shear drift is two-dimensional");
        const double amp = param(dp, "amp", 1.0);
        const double freq = param(dp, "freq", 1.0);
        f.drift = [amp, freq](double, std::span<const double> x, std::span<double> b) {
            b[0] = amp * std::sin(freq * x[1]);
            b[1] = 0.0;
        };
        f.lipschitz = std::abs(amp * freq);
    } else if (drift_name == "xlog") {
        // x log(x^2 + floor^2): log-modulus continuity, non-Lipschitz as the
        // floor shrinks; mollified at a configurable scale.
        const double scale = param(dp, "scale", 0.5);
        const double floor = param(dp, "floor", 0.05);
        f.drift = [scale, floor](double, std::span<const double> x, std::span<double> b) {
            for (std::size_t a = 0; a < b.size(); ++a)
                b[a] = 0.5 * scale * x[a] * std::log(x[a] * x[a] + floor * floor);
        };
    } else {
        fail("validation-error", "unknown drift builtin '" + drift_name + "'");
    }

    if (sigma_name == "zero") {
        f.sigma = [](double, std::span<const double>, std::span<double> s) {
            for (auto& v : s) v = 0.0;
        };
    } else if (sigma_name == "constant") {
        const double c = param(sp, "value", 1.0);
        const int d = dim;
        f.sigma = [c, d](double, std::span<const double>, std::span<double> s) {
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j)
                    s[static_cast<std::size_t>(i * d + j)] = (i == j) ? c : 0.0;
        };
    } else if (sigma_name == "tanh") {
        const double base = param(sp, "base", 0.3);
        const double amp = param(sp, "amp", 0.05);
        const int d = dim;
        f.sigma = [base, amp, d](double, std::span<const double> x, std::span<double> s) {
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j)
                    s[static_cast<std::size_t>(i * d + j)] =
                        (i == j) ? base + amp * std::tanh(x[static_cast<std::size_t>(i)]) : 0.0;
        };
    } else {
        fail("validation-error", "unknown sigma builtin '" + sigma_name + "'");
    }
    return f;
}

GridDensity make_initial(const BoxGrid& grid, const std::string& name,
                         const std::map<std::string, double>& params) {
    std::vector<double> vals(grid.size(), 0.0);
    std::array<double, 2> x{};
    if (name == "gaussian") {
        const double m0 = param(params, "mean", 0.0);
        const double s0 = param(params, "std", 1.0);
        const double m1 = param(params, "mean1", m0);
        const double s1 = param(params, "std1", s0);
        for (std::size_t c = 0; c < grid.size(); ++c) {
            grid.center(c, x);
            double v = std::exp(-0.5 * sqr((x[0] - m0) / s0));
            if (grid.dim == 2) v *= std::exp(-0.5 * sqr((x[1] - m1) / s1));
            vals[c] = v;
        }
    } else if (name == "uniform") {
        const double lo = param(params, "lo", -1.0);
        const double hi = param(params, "hi", 1.0);
        for (std::size_t c = 0; c < grid.size(); ++c) {
            grid.center(c, x);
            bool inside = x[0] >= lo && x[0] <= hi;
            if (grid.dim == 2) inside = inside && x[1] >= lo && x[1] <= hi;
            vals[c] = inside ? 1.0 : 0.0;
        }
    } else {
        fail("validation-error", "unknown initial builtin '" + name + "'");
    }
    double mass = 0.0;
    for (double v : vals) mass += v;
    mass *= grid.cell_volume();
    if (mass <= 0.0) fail("validation-error", "initial measure has zero mass on the grid");
    for (double& v : vals) v /= mass;
    return GridDensity(grid, std::move(vals), 0.0, 0.0);
}

namespace {

double calibrate_g_const(const CoefficientField& field,
                         const std::function<double(double)>& rho, const BoxGrid& box) {
    // dense deterministic pair scan at a few times
    const int n = 48;
    double worst = 0.0;
    const int d = field.dim;
    std::vector<double> xa(static_cast<std::size_t>(d), 0.0), xb(static_cast<std::size_t>(d), 0.0);
    std::vector<double> ba(static_cast<std::size_t>(d)), bb(static_cast<std::size_t>(d));
    std::vector<double> sa(static_cast<std::size_t>(d * d)), sb(static_cast<std::size_t>(d * d));
    for (int ti = 0; ti < 3; ++ti) {
        const double t = field.horizon * (ti + 0.5) / 3.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                xa[0] = box.lo[0] + (i + 0.5) * (box.hi[0] - box.lo[0]) / n;
                xb[0] = box.lo[0] + (j + 0.5) * (box.hi[0] - box.lo[0]) / n;
                if (d == 2) {
                    xa[1] = box.lo[1] + (j + 0.5) * (box.hi[1] - box.lo[1]) / n;
                    xb[1] = box.lo[1] + (i + 0.5) * (box.hi[1] - box.lo[1]) / n;
                }
                field.drift(t, xa, ba);
                field.drift(t, xb, bb);
                field.sigma(t, xa, sa);
                field.sigma(t, xb, sb);
                double inner = 0.0, z2 = 0.0, sg = 0.0;
                for (int a = 0; a < d; ++a) {
                    inner += (xa[static_cast<std::size_t>(a)] - xb[static_cast<std::size_t>(a)]) *
                             (ba[static_cast<std::size_t>(a)] - bb[static_cast<std::size_t>(a)]);
                    z2 += sqr(xa[static_cast<std::size_t>(a)] - xb[static_cast<std::size_t>(a)]);
                }
                for (std::size_t e = 0; e < sa.size(); ++e) sg += sqr(sa[e] - sb[e]);
                const double denom = 2.0 * std::max(rho(z2), z2);
                if (denom > 0.0)
                    worst = std::max(worst, (std::abs(inner) + sg) / denom);
            }
    }
    return 1.05 * worst;
}

}  // namespace

std::shared_ptr<coefficients::OsgoodModulus> make_modulus(const std::string& name,
                                                          double g_const, double /*horizon*/,
                                                          int /*dim*/) {
    auto modulus = std::make_shared<coefficients::OsgoodModulus>();
    modulus->name = name;
    if (name == "identity") {
        modulus->rho_raw = [](double s) { return s; };
    } else if (name == "log") {
        // r (1 + |log r|) below r1 = 1/e, continued with slope 1 beyond
        modulus->rho_raw = [](double r) {
            constexpr double r1 = 0.36787944117144233;  // 1/e
            if (r <= 0.0) return 0.0;
            if (r <= r1) return r * (1.0 - std::log(r));
            return 2.0 * r1 + (r - r1);
        };
    } else {
        fail("validation-error", "unknown osgood modulus '" + name + "'");
    }
    modulus->g = [g_const](double, std::span<const double>) { return g_const; };
    return modulus;
}

// ---------------- configuration ----------------

namespace {

Theorem theorem_from_name(const std::string& name, const std::string& path) {
    if (name == "sobolev") return Theorem::Sobolev;
    if (name == "w11") return Theorem::W11;
    if (name == "osgood") return Theorem::Osgood;
    if (name == "mixed") return Theorem::Mixed;
    if (name == "lps") return Theorem::Lps;
    if (name == "w2") return Theorem::W2;
    invalid(path, "unknown theorem tag '" + name + "'");
}

std::map<std::string, double> params_from_json(const nlohmann::json& j) {
    std::map<std::string, double> out;
    for (const auto& [k, v] : j.items())
        if (k != "name" && v.is_number()) out[k] = v.get<double>();
    return out;
}

CoefficientField field_from_json(const nlohmann::json& j, int dim, double horizon,
                                 const std::string& path) {
    if (!j.contains("drift")) invalid(path, "missing 'drift'");
    if (!j.contains("sigma")) invalid(path, "missing 'sigma'");
    auto f = make_drift_sigma(dim, horizon, j["drift"].value("name", "zero"),
                              params_from_json(j["drift"]), j["sigma"].value("name", "zero"),
                              params_from_json(j["sigma"]));
    f.sobolev_p = j.value("sobolev_p", 2.0);
    if (j.contains("lipschitz")) f.lipschitz = j["lipschitz"].get<double>();
    if (j.contains("lps")) {
        f.lps_p = j["lps"].value("p", 0.0);
        f.lps_q = j["lps"].value("q", 0.0);
    }
    if (j.contains("mixed")) {
        f.mixed_p1 = j["mixed"].value("p1", 2.0);
        f.mixed_p2 = j["mixed"].value("p2", 2.0);
    }
    return f;
}

}  // namespace

ScenarioConfig parse_config_text(const std::string& text, const std::string& origin) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail("validation-error", origin + ": " + e.what());
    }
    ScenarioConfig cfg;
    if (j.value("schema_version", 0) != 1) invalid("schema_version", "must be 1");
    cfg.name = j.value("name", "");
    if (cfg.name.empty()) invalid("name", "must be a non-empty string");
    const int dim = j.value("dimension", 0);
    if (dim != 1 && dim != 2) invalid("dimension", "must be 1 or 2");
    if (!j.contains("domain")) invalid("domain", "is required");
    const auto& dom = j["domain"];
    const auto lo = dom.value("lo", std::vector<double>{});
    const auto hi = dom.value("hi", std::vector<double>{});
    const auto cells = dom.value("cells", std::vector<int>{});
    if (static_cast<int>(lo.size()) != dim || static_cast<int>(hi.size()) != dim ||
        static_cast<int>(cells.size()) != dim)
        invalid("domain", "lo/hi/cells must have 'dimension' entries");
    for (int a = 0; a < dim; ++a) {
        if (!(hi[static_cast<std::size_t>(a)] > lo[static_cast<std::size_t>(a)]))
            invalid("domain", "upper bound must exceed lower bound");
        if (cells[static_cast<std::size_t>(a)] < 2) invalid("domain.cells", "must be >= 2");
    }
    const double T = j.value("horizon", 0.0);
    if (!(T > 0.0)) invalid("horizon", "must be positive");

    BoxGrid grid = (dim == 1) ? BoxGrid(lo[0], hi[0], cells[0])
                              : BoxGrid(lo[0], hi[0], cells[0], lo[1], hi[1], cells[1]);

    if (!j.contains("coefficients") || !j["coefficients"].contains("first") ||
        !j["coefficients"].contains("second"))
        invalid("coefficients", "needs 'first' and 'second'");
    cfg.scenario.field1 = field_from_json(j["coefficients"]["first"], dim, T,
                                          "coefficients.first");
    cfg.scenario.field2 = field_from_json(j["coefficients"]["second"], dim, T,
                                          "coefficients.second");

    if (!j.contains("initial")) invalid("initial", "is required");
    cfg.scenario.initial = make_initial(grid, j["initial"].value("name", "gaussian"),
                                        params_from_json(j["initial"]));

    cfg.scenario.name = cfg.name;
    cfg.scenario.horizon = T;
    const std::string route = j.value("route", "particles");
    if (route == "particles")
        cfg.scenario.route = Scenario::Route::Particles;
    else if (route == "grid")
        cfg.scenario.route = Scenario::Route::Grid;
    else
        invalid("route", "must be 'particles' or 'grid'");
    cfg.scenario.particles = j.value("particles", 100000);
    cfg.scenario.sde_step = j.value("sde_step", 1e-3);
    cfg.scenario.fpe_steps = j.value("fpe_steps", 0);
    cfg.scenario.seed = j.value("seed", 1);
    cfg.scenario.kappa = j.value("kappa", 1.0);
    cfg.scenario.subsample_atoms = j.value("subsample_atoms", 200);
    cfg.scenario.subsample_resamples = j.value("subsample_resamples", 5);
    if (j.contains("mixed")) {
        cfg.scenario.mixed_p1 = j["mixed"].value("p1", 2.0);
        cfg.scenario.mixed_p2 = j["mixed"].value("p2", 2.0);
    }
    if (j.contains("osgood")) {
        const double g0 = j["osgood"].value("g_const", -1.0);
        auto modulus = make_modulus(j["osgood"].value("rho", "identity"),
                                    std::max(g0, 0.0), T, dim);
        if (g0 < 0.0) {
            const double g = calibrate_g_const(cfg.scenario.field1, [m = modulus](double s) {
                return m->rho_raw(s);
            }, grid);
            modulus->g = [g](double, std::span<const double>) { return g; };
        }
        cfg.scenario.modulus = modulus;
    }

    for (const auto& t : j.value("theorems", std::vector<std::string>{}))
        cfg.theorems.push_back(theorem_from_name(t, "theorems"));
    cfg.deltas = j.value("deltas", std::vector<double>{});
    cfg.alphas = j.value("alphas", std::vector<double>{});
    cfg.kappas = j.value("kappas", std::vector<double>{});
    cfg.checkpoints = j.value("checkpoints", std::vector<double>{T / 4.0, T / 2.0, T});
    for (double c : cfg.checkpoints)
        if (!(c > 0.0) || c > T + 1e-12) invalid("checkpoints", "must lie in (0, horizon]");
    for (double dlt : cfg.deltas)
        if (!(dlt > 0.0)) invalid("deltas", "must be positive");

    // theorem-specific exponent validation
    for (Theorem t : cfg.theorems) {
        if (t == Theorem::Sobolev && !(cfg.scenario.field1.sobolev_p > 1.0))
            invalid("coefficients.first.sobolev_p", "p > 1 is required for the 'sobolev' bound");
        if ((t == Theorem::Lps || t == Theorem::W2)) {
            const double p = cfg.scenario.field1.lps_p.value_or(0.0);
            const double q = cfg.scenario.field1.lps_q.value_or(0.0);
            if (!(p > 2.0 && q > 2.0 && dim / p + 2.0 / q < 1.0))
                invalid("coefficients.first.lps",
                        "needs p, q > 2 with d/p + 2/q < 1 for '" +
                            stability::theorem_name(t) + "'");
        }
        if (t == Theorem::W2) {
            const double p = cfg.scenario.field1.lps_p.value_or(0.0);
            const double q = cfg.scenario.field1.lps_q.value_or(0.0);
            for (double a : cfg.alphas)
                if (!(a > 2.0 && a < std::min(p, q)))
                    invalid("alphas", "alpha must lie in (2, p ^ q)");
            if (cfg.alphas.empty()) invalid("alphas", "the 'w2' bound needs alphas");
        }
        if (t == Theorem::Osgood && !cfg.scenario.modulus)
            invalid("osgood", "the 'osgood' bound needs a modulus block");
        if (t != Theorem::W2 && cfg.deltas.empty())
            invalid("deltas", "at least one delta is required");
    }
    cfg.output_dir = j.value("output_dir", cfg.name);
    cfg.analytic = j.value("analytic", "");
    return cfg;
}

ScenarioConfig parse_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("io-error", "cannot open config " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), path);
}

std::string resolve_output_dir(const ScenarioConfig& config) {
    fs::path out(config.output_dir);
    if (out.is_absolute()) return out.string();
    const char* root = std::getenv("FPSTAB_OUTPUT_ROOT");
    return ((root ? fs::path(root) : fs::path("fpstab_out")) / out).string();
}

std::string default_constants_path() { return "config/constants.json"; }

int run_config(const ScenarioConfig& config, const std::string& constants_path) {
    const std::string outdir = resolve_output_dir(config);
    std::vector<std::string> files;
    try {
        fs::create_directories(outdir);
        const auto manifest = coefficients::load_manifest(constants_path);
        std::string csv = stability::report_csv_header();
        bool all_pass = true;
        for (Theorem t : config.theorems) {
            const auto& values = (t == Theorem::W2) ? config.alphas : config.deltas;
            for (double v : values) {
                auto report = stability::check_bound(config.scenario, t, v,
                                                     config.checkpoints, manifest);
                all_pass = all_pass && report.pass;
                const std::string tag =
                    stability::theorem_name(t) + "_" + short_double(v);
                const std::string jpath = outdir + "/bound_" + tag + ".json";
                stability::save_report_json(report, jpath);
                files.push_back(jpath);
                stability::append_report_csv(report, csv);
            }
        }
        {
            std::ofstream f(outdir + "/reports.csv", std::ios::binary);
            f << csv;
            files.push_back(outdir + "/reports.csv");
        }
        // final-time marginals for inspection
        {
            const auto cloud = measures::sample_from_density(config.scenario.initial, 2000,
                                                             config.scenario.seed, 71);
            measures::save_cloud(cloud, outdir + "/initial_cloud.csv",
                                 outdir + "/initial_cloud.json");
            files.push_back(outdir + "/initial_cloud.csv");
            files.push_back(outdir + "/initial_cloud.json");
        }
        nlohmann::json man;
        man["version"] = "0.1.0";
        man["name"] = config.name;
        man["seed"] = config.scenario.seed;
        man["constants_manifest"] = constants_path;
        man["constants_hash"] = coefficients::manifest_sha_like_hash(constants_path);
        man["files"] = files;
        man["pass"] = all_pass;
        std::ofstream mf(outdir + "/run_manifest.json", std::ios::binary);
        mf << man.dump(2) << "\n";
        return all_pass ? 0 : 2;
    } catch (const std::exception& e) {
        fs::create_directories(outdir);
        std::ofstream f(outdir + "/FAILED");
        f << e.what() << "\n";
        return 1;
    }
}

int sweep_config(const ScenarioConfig& config, const std::string& parameter,
                 const std::vector<double>& values, const std::string& constants_path) {
    const std::string outdir = resolve_output_dir(config);
    try {
        fs::create_directories(outdir);
        const auto manifest = coefficients::load_manifest(constants_path);
        std::string csv;
        std::vector<double> lx, ly;
        if (parameter == "kappa") {
            auto report = stability::zero_diffusivity_sweep(
                config.scenario, values, config.checkpoints, config.scenario.field1.sobolev_p,
                manifest);
            csv = "kappa";
            for (double t : report.checkpoint_times) csv += ",tilde_d_t" + format_double(t);
            csv += ",tilde_d_delta0,rhs\n";
            for (std::size_t k = 0; k < values.size(); ++k) {
                csv += format_double(values[k]);
                for (double v : report.tilde_d[k]) csv += "," + format_double(v);
                csv += "," + format_double(report.tilde_d_fixed_delta[k]) + "," +
                       format_double(report.rhs) + "\n";
            }
            csv += "slope," + format_double(report.fitted_slope) + "\n";
        } else if (parameter == "delta") {
            csv = "delta,lhs,rhs\n";
            for (double dlt : values) {
                auto report = stability::check_bound(config.scenario, config.theorems.at(0), dlt,
                                                     config.checkpoints, manifest);
                const auto& cp = report.checkpoints.back();
                csv += format_double(dlt) + "," + format_double(cp.lhs) + "," +
                       format_double(cp.rhs) + "\n";
                if (cp.rhs > 0.0) {
                    lx.push_back(std::log(dlt));
                    ly.push_back(std::log(cp.rhs));
                }
            }
            if (lx.size() > 1) csv += "slope," + format_double(fit_slope(lx, ly)) + "\n";
        } else if (parameter == "grid-resolution") {
            csv = "cells,l1_error\n";
            for (double v : values) {
                const int n = static_cast<int>(v);
                BoxGrid grid(config.scenario.initial.grid.lo[0],
                             config.scenario.initial.grid.hi[0], n);
                auto init = make_initial(grid, "gaussian", {{"mean", 0.0}, {"std",
                    config.analytic == "heat_gaussian" ? 0.316227766016838 : 1.0}});
                fpe::FpeProblem pb{config.scenario.field1, init, config.scenario.kappa,
                                   config.scenario.horizon,
                                   fpe::FpeProblem::Boundary::ZeroFlux,
                                   fpe::FpeProblem::DiffusionForm::NonDivergence};
                const double hstep = fpe::suggested_step(pb);
                const long steps = static_cast<long>(std::ceil(config.scenario.horizon / hstep));
                auto sol = fpe::solve(pb, steps, 1);
                // closed-form reference
                double m = 0.0, var = 0.0;
                if (config.analytic == "heat_gaussian") {
                    var = 0.1 + config.scenario.kappa * config.scenario.horizon;
                } else {  // ou_transport: pure advection by -x
                    var = std::exp(-2.0 * config.scenario.horizon);
                }
                double err = 0.0;
                for (std::size_t c = 0; c < grid.size(); ++c) {
                    const double x = grid.center(c, 0);
                    const double exact =
                        std::exp(-0.5 * sqr(x - m) / var) / std::sqrt(2.0 * M_PI * var);
                    err += std::abs(sol.frames.back().values[c] - exact);
                }
                err *= grid.cell_volume();
                csv += std::to_string(n) + "," + format_double(err) + "\n";
                lx.push_back(std::log(grid.spacing(0)));
                ly.push_back(std::log(err));
            }
            if (lx.size() > 1) csv += "slope," + format_double(fit_slope(lx, ly)) + "\n";
        } else if (parameter == "particle-count") {
            csv = "particles,std_error\n";
            for (double v : values) {
                Scenario sc = config.scenario;
                sc.particles = static_cast<std::size_t>(v);
                auto report = stability::check_bound(sc, config.theorems.at(0),
                                                     config.deltas.at(0), config.checkpoints,
                                                     manifest);
                const double se = report.checkpoints.back().lhs_error / 3.0;
                csv += format_double(v) + "," + format_double(se) + "\n";
                if (se > 0.0) {
                    lx.push_back(std::log(v));
                    ly.push_back(std::log(se));
                }
            }
            if (lx.size() > 1) csv += "slope," + format_double(fit_slope(lx, ly)) + "\n";
        } else if (parameter == "epsilon-mollifier") {
            csv = "epsilon,l1_change\n";
            measures::GridField base;
            base.grid = config.scenario.initial.grid;
            base.values = config.scenario.initial.values;
            for (double eps : values) {
                const auto smooth = coefficients::mollify(base, eps);
                double diff = 0.0;
                for (std::size_t c = 0; c < base.values.size(); ++c)
                    diff += std::abs(smooth.values[c] - base.values[c]);
                diff *= base.grid.cell_volume();
                csv += format_double(eps) + "," + format_double(diff) + "\n";
                if (diff > 0.0) {
                    lx.push_back(std::log(eps));
                    ly.push_back(std::log(diff));
                }
            }
            if (lx.size() > 1) csv += "slope," + format_double(fit_slope(lx, ly)) + "\n";
        } else {
            fail("validation-error",
                 "unknown sweep parameter '" + parameter +
                     "' (kappa, delta, epsilon-mollifier, grid-resolution, particle-count)");
        }
        std::ofstream f(outdir + "/sweep_" + parameter + ".csv", std::ios::binary);
        f << csv;
        return 0;
    } catch (const std::exception& e) {
        fs::create_directories(outdir);
        std::ofstream f(outdir + "/FAILED");
        f << e.what() << "\n";
        return 1;
    }
}

// ---------------- calibration and the regression family ----------------

namespace {

Scenario small_scenario(const std::string& name, const CoefficientField& f1,
                        const CoefficientField& f2, std::uint64_t seed,
                        std::size_t particles = 20000) {
    Scenario sc;
    sc.name = name;
    sc.field1 = f1;
    sc.field2 = f2;
    sc.horizon = 1.0;
    BoxGrid grid(-6.0, 6.0, 160);
    sc.initial = make_initial(grid, "gaussian", {{"mean", 0.0}, {"std", 1.0}});
    sc.route = Scenario::Route::Particles;
    sc.particles = particles;
    sc.sde_step = 2e-3;
    sc.seed = seed;
    return sc;
}

}  // namespace

std::vector<RegressionCase> regression_suite(std::uint64_t seed) {
    std::vector<RegressionCase> cases;
    const auto lin = [&](double rate, double sigma) {
        return make_drift_sigma(1, 1.0, "linear", {{"rate", rate}}, "constant",
                                {{"value", sigma}});
    };
    const auto lin_step = [&](double rate, double amp, double sigma) {
        return make_drift_sigma(1, 1.0, "linear_smoothstep",
                                {{"rate", rate}, {"amp", amp}, {"width", 0.05}}, "constant",
                                {{"value", sigma}});
    };
    {
        RegressionCase c;
        c.name = "reg-sobolev-linear";
        c.scenario = small_scenario(c.name, lin(-1.0, 0.3), lin_step(-1.0, 0.05, 0.3), seed,
                                    50000);
        c.scenario.field1.sobolev_p = 2.0;
        c.theorem = Theorem::Sobolev;
        c.delta = 0.1;
        cases.push_back(std::move(c));
    }
    {
        RegressionCase c;
        c.name = "reg-sobolev-sin";
        auto f1 = make_drift_sigma(1, 1.0, "sin", {{"amp", 1.0}, {"freq", 1.0}}, "constant",
                                   {{"value", 0.4}});
        auto f2 = make_drift_sigma(1, 1.0, "sin_shift",
                                   {{"amp", 1.0}, {"freq", 1.0}, {"shift", 0.05}}, "constant",
                                   {{"value", 0.4}});
        f1.sobolev_p = 2.0;
        c.scenario = small_scenario(c.name, f1, f2, seed + 1, 50000);
        c.theorem = Theorem::Sobolev;
        c.delta = 0.1;
        cases.push_back(std::move(c));
    }
    {
        RegressionCase c;
        c.name = "reg-w11-linear";
        c.scenario = small_scenario(c.name, lin(-1.0, 0.3), lin_step(-1.0, 0.05, 0.3), seed + 2,
                                    50000);
        c.theorem = Theorem::W11;
        c.delta = 0.1;
        cases.push_back(std::move(c));
    }
    {
        RegressionCase c;
        c.name = "reg-mixed-tanh";
        auto f1 = make_drift_sigma(1, 1.0, "linear", {{"rate", -1.0}}, "tanh",
                                   {{"base", 0.3}, {"amp", 0.05}});
        auto f2 = lin_step(-1.0, 0.05, 0.3);
        c.scenario = small_scenario(c.name, f1, f2, seed + 3, 50000);
        c.scenario.mixed_p1 = 1.5;
        c.scenario.mixed_p2 = 3.0;
        c.theorem = Theorem::Mixed;
        c.delta = 0.1;
        cases.push_back(std::move(c));
    }
    {
        RegressionCase c;
        c.name = "reg-mixed-sin";
        auto f1 = make_drift_sigma(1, 1.0, "sin", {{"amp", 0.8}, {"freq", 1.5}}, "tanh",
                                   {{"base", 0.35}, {"amp", 0.04}});
        auto f2 = make_drift_sigma(1, 1.0, "sin_shift",
                                   {{"amp", 0.8}, {"freq", 1.5}, {"shift", 0.04}}, "constant",
                                   {{"value", 0.35}});
        c.scenario = small_scenario(c.name, f1, f2, seed + 4, 50000);
        c.scenario.mixed_p1 = 2.0;
        c.scenario.mixed_p2 = 2.5;
        c.theorem = Theorem::Mixed;
        c.delta = 0.1;
        cases.push_back(std::move(c));
    }
    return cases;
}

coefficients::ConstantsManifest calibrate_constants(std::uint64_t seed) {
    auto manifest = coefficients::calibrate_analysis_constants(seed);

    // Held-out scenario family: same builders, different parameters than the
    // committed regression suite.
    const auto lin = [&](double rate, double sigma) {
        return make_drift_sigma(1, 1.0, "linear", {{"rate", rate}}, "constant",
                                {{"value", sigma}});
    };
    const auto lin_step = [&](double rate, double amp, double sigma) {
        return make_drift_sigma(1, 1.0, "linear_smoothstep",
                                {{"rate", rate}, {"amp", amp}, {"width", 0.06}}, "constant",
                                {{"value", sigma}});
    };
    const double delta = 0.08;
    const std::vector<double> times{0.25, 0.5, 1.0};
    coefficients::ConstantsManifest probe = manifest;
    probe.stability_C_dp = probe.stability_C_dT = probe.stability_C1_mixed =
        probe.stability_C2_mixed = probe.stability_C1_lps = probe.stability_C2_lps =
            probe.stability_C_alpha = 1.0;

    const auto needed_constant = [&](const stability::BoundReport& rep, double coef,
                                     double fixed) {
        double need = 0.0;
        for (const auto& cp : rep.checkpoints)
            if (coef > 0.0) need = std::max(need, (cp.lhs - fixed) / coef);
        return need;
    };

    // sobolev + w11 family
    double c_dp = 0.0, c_dT = 0.0;
    for (int v = 0; v < 2; ++v) {
        const double rate = v == 0 ? -0.8 : -1.2;
        const double amp = v == 0 ? 0.04 : 0.07;
        auto sc = small_scenario("cal-sobolev", lin(rate, 0.25 + 0.05 * v),
                                 lin_step(rate, amp, 0.25 + 0.05 * v), seed + 11 + v);
        auto rep = stability::check_bound(sc, Theorem::Sobolev, delta, times, probe);
        const double coef = rep.ingredients.at("sum_u_LinfLq") *
                            (rep.ingredients.at("grad_b1_L1Lp") +
                             rep.ingredients.at("grad_sigma1_L2L2p_sq"));
        const double fixed =
            rep.ingredients.at("initial_tilde_d") +
            2.0 * rep.ingredients.at("u2_LinfLq") *
                (rep.ingredients.at("drift_diff_L1Lp") / delta +
                 rep.ingredients.at("sigma_diff_L2L2p_sq") / (delta * delta));
        c_dp = std::max(c_dp, needed_constant(rep, coef, fixed));

        auto repw = stability::check_bound(sc, Theorem::W11, delta, times, probe);
        const double coefw =
            (1.0 + repw.ingredients.at("sum_u_LinfLinf")) *
            (repw.ingredients.at("phi_delta") * (1.0 + repw.ingredients.at("g_grad_b1_L1L1")) +
             repw.ingredients.at("grad_sigma1_L2L2_sq"));
        const double fixedw =
            repw.ingredients.at("initial_tilde_d") +
            2.0 * repw.ingredients.at("u2_LinfLinf") *
                (repw.ingredients.at("drift_diff_L1L1") / delta +
                 repw.ingredients.at("sigma_diff_L2L2_sq") / (delta * delta));
        c_dT = std::max(c_dT, needed_constant(repw, coefw, fixedw));
    }
    manifest.stability_C_dp = std::max(2.0 * c_dp, 1.0);
    manifest.stability_C_dT = std::max(2.0 * c_dT, 1.0);

    // mixed family
    double c_mixed = 0.0;
    {
        auto f1 = make_drift_sigma(1, 1.0, "linear", {{"rate", -0.9}}, "tanh",
                                   {{"base", 0.28}, {"amp", 0.04}});
        auto f2 = lin_step(-0.9, 0.05, 0.28);
        auto sc = small_scenario("cal-mixed", f1, f2, seed + 21);
        sc.mixed_p1 = 1.5;
        sc.mixed_p2 = 3.0;
        auto rep = stability::check_bound(sc, Theorem::Mixed, delta, times, probe);
        const double coef = rep.ingredients.at("sigma_diff_L2L2p1_sq") / (delta * delta) +
                            rep.ingredients.at("grad_sigma1_L2L2p1_sq") +
                            rep.ingredients.at("drift_diff_L1Lp2") / delta +
                            rep.ingredients.at("grad_b1_L1Lp2");
        c_mixed = needed_constant(rep, coef, rep.ingredients.at("initial_tilde_d"));
    }
    manifest.stability_C1_mixed = manifest.stability_C2_mixed = std::max(2.0 * c_mixed, 1.0);

    // lps + w2 family: bounded sin drift with identity diffusion
    double c_lps = 0.0, c_alpha = 0.0;
    {
        auto f1 = make_drift_sigma(1, 1.0, "sin", {{"amp", 0.6}, {"freq", 1.0}}, "constant",
                                   {{"value", 1.0}});
        auto f2 = make_drift_sigma(1, 1.0, "sin_shift",
                                   {{"amp", 0.6}, {"freq", 1.0}, {"shift", 0.05}}, "constant",
                                   {{"value", 1.0}});
        f1.lps_p = 8.0;
        f1.lps_q = 8.0;
        f2.lps_p = 8.0;
        f2.lps_q = 8.0;
        auto sc = small_scenario("cal-lps", f1, f2, seed + 31);
        auto rep = stability::check_bound(sc, Theorem::Lps, delta, times, probe);
        const double bd = rep.ingredients.at("drift_diff_LqLp");
        const double b1 = rep.ingredients.at("b1_LqLp");
        const double coef = bd * bd / (delta * delta) + b1 * b1 + bd / delta + b1;
        c_lps = needed_constant(rep, coef, rep.ingredients.at("initial_tilde_d_ninth"));

        auto repw = stability::check_bound(sc, Theorem::W2, 3.0, times, probe);
        const double coefw = repw.ingredients.at("initial_w_alpha") +
                             repw.ingredients.at("u2_norm_root") *
                                 repw.ingredients.at("drift_diff_LqLp");
        c_alpha = needed_constant(repw, coefw, 0.0);
    }
    manifest.stability_C1_lps = manifest.stability_C2_lps = std::max(2.0 * c_lps, 1.0);
    manifest.stability_C_alpha = std::max(2.0 * c_alpha, 1.0);
    return manifest;
}

}  // namespace fpstab::experiments
