#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "fpstab/experiments.hpp"
#include "fpstab/zvonkin.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace fpstab;

int main(int argc, char** argv) {
    CLI::App app{"Stability laboratory for transport and diffusion equations"};
    app.require_subcommand(1);

    std::string config_path, constants_path = experiments::default_constants_path();

    auto* run = app.add_subcommand("run", "Run every check requested by a scenario config");
    run->add_option("config", config_path, "scenario JSON")->required();
    run->add_option("--constants", constants_path, "constants manifest JSON");

    std::string sweep_param;
    std::vector<double> sweep_values;
    auto* sweep = app.add_subcommand("sweep", "Sweep one parameter and fit a rate");
    sweep->add_option("config", config_path, "scenario JSON")->required();
    sweep->add_option("--param", sweep_param,
                      "kappa | delta | epsilon-mollifier | grid-resolution | particle-count")
        ->required();
    sweep->add_option("--values", sweep_values, "sweep values")->required();
    sweep->add_option("--constants", constants_path, "constants manifest JSON");

    std::string mu_path, nu_path, cost_kind = "log-squared", out_prefix = "plan";
    double delta = 1.0, power_p = 2.0, entropic_eps = 0.0;
    auto* ot = app.add_subcommand("ot", "Optimal transport between two cloud CSVs");
    ot->add_option("muA", mu_path, "first cloud CSV (coords..., weight)")->required();
    ot->add_option("muB", nu_path, "second cloud CSV")->required();
    ot->add_option("--cost", cost_kind, "log-squared | log-linear | power");
    ot->add_option("--delta", delta, "delta of the log costs");
    ot->add_option("--p", power_p, "exponent of the power cost");
    ot->add_option("--entropic", entropic_eps, "use the entropic solver at this epsilon");
    ot->add_option("--out", out_prefix, "output prefix for plan CSV/JSON");

    auto* zv = app.add_subcommand("zvonkin", "Drift-regularization pipeline for a scenario");
    zv->add_option("config", config_path, "scenario JSON")->required();

    std::uint64_t seed = 20240317;
    std::string manifest_out = experiments::default_constants_path();
    auto* cal = app.add_subcommand("calibrate-constants",
                                   "Calibrate and freeze the constants manifest");
    cal->add_option("--seed", seed, "calibration seed");
    cal->add_option("--out", manifest_out, "manifest path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const auto cfg = experiments::parse_config(config_path);
            return experiments::run_config(cfg, constants_path);
        }
        if (*sweep) {
            const auto cfg = experiments::parse_config(config_path);
            return experiments::sweep_config(cfg, sweep_param, sweep_values, constants_path);
        }
        if (*ot) {
            const auto mu = measures::load_cloud_csv(mu_path);
            const auto nu = measures::load_cloud_csv(nu_path);
            transport::CostSpec spec = transport::CostSpec::log_squared(delta);
            if (cost_kind == "log-linear") spec = transport::CostSpec::log_linear(delta);
            else if (cost_kind == "power") spec = transport::CostSpec::power(power_p);
            else if (cost_kind != "log-squared")
                fail("validation-error", "unknown cost kind '" + cost_kind + "'");
            transport::TransportPlan plan;
            if (entropic_eps > 0.0)
                plan = transport::solve_entropic(mu, nu, spec, entropic_eps);
            else
                plan = transport::solve_exact(mu, nu, spec);
            std::cout << "value " << format_double(plan.cost) << "\n"
                      << "duality_gap " << format_double(plan.duality_gap) << "\n";
            transport::save_plan(plan, spec, out_prefix + ".csv", out_prefix + ".json");
            return 0;
        }
        if (*zv) {
            const auto cfg = experiments::parse_config(config_path);
            const std::string outdir = experiments::resolve_output_dir(cfg);
            fs::create_directories(outdir);
            const auto pick1 = zvonkin::select_lambda(cfg.scenario.field1,
                                                      cfg.scenario.initial.grid,
                                                      cfg.scenario.horizon);
            auto field2 = cfg.scenario.field2;
            field2.horizon = cfg.scenario.horizon;
            const auto sol2 = zvonkin::solve_backward(
                field2, pick1.lambda, cfg.scenario.initial.grid,
                static_cast<long>(pick1.solution.times.size()) - 1);
            zvonkin::save_solution_csv(pick1.solution, outdir + "/phi_first");
            zvonkin::save_solution_csv(sol2, outdir + "/phi_second");
            const auto cmp = zvonkin::compare_transforms(pick1.solution, sol2, 2.0, 2.0);
            const auto res = zvonkin::residual_norms(pick1.solution);
            const auto reg = zvonkin::regularity_record(pick1.solution, 2.0, 2.0);
            nlohmann::json j;
            j["lambda"] = pick1.lambda;
            j["sup_grad_norm"] = pick1.achieved_norm;
            j["max_residual_l2"] = res.empty() ? 0.0
                                               : *std::max_element(res.begin(), res.end());
            j["regularity"] = {{"dt_phi_LqLp", reg.dt_phi_LqLp},
                               {"phi_LqW2p", reg.phi_LqW2p},
                               {"b_LqLp", reg.b_LqLp},
                               {"ratio", reg.ratio}};
            j["comparison"] = {{"phi_diff_sup_w1p", cmp.phi_diff_sup_w1p},
                               {"drift_diff_LinfLp", cmp.drift_diff_LinfLp},
                               {"sigma_diff_LqLp", cmp.sigma_diff_LqLp},
                               {"source_diff_LqLp", cmp.source_diff_LqLp},
                               {"ratio_drift", cmp.ratio_drift},
                               {"ratio_sigma", cmp.ratio_sigma},
                               {"ratio_phi", cmp.ratio_phi}};
            std::ofstream f(outdir + "/zvonkin.json", std::ios::binary);
            f << j.dump(2) << "\n";
            std::cout << "lambda " << pick1.lambda << " sup_grad " << pick1.achieved_norm
                      << "\n";
            return 0;
        }
        if (*cal) {
            const auto manifest = experiments::calibrate_constants(seed);
            if (const auto dir = fs::path(manifest_out).parent_path(); !dir.empty())
                fs::create_directories(dir);
            coefficients::save_manifest(manifest, manifest_out);
            std::cout << "wrote " << manifest_out << "\n";
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
