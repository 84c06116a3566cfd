#pragma once

#include <string>
#include <vector>

#include "fpstab/stability.hpp"

namespace fpstab::experiments {

using stability::Scenario;
using stability::Theorem;

/// Parsed and validated scenario configuration (JSON, schema_version 1).
struct ScenarioConfig {
    std::string name;
    Scenario scenario;
    std::vector<Theorem> theorems;
    std::vector<double> deltas;
    std::vector<double> alphas;
    std::vector<double> kappas;
    std::vector<double> checkpoints;
    std::string output_dir;  // resolved against FPSTAB_OUTPUT_ROOT when relative
    std::string analytic;    // optional reference solution tag for sweeps
};

/// Throws Error("validation-error", ...) with a json-path message.
ScenarioConfig parse_config(const std::string& path);
ScenarioConfig parse_config_text(const std::string& text, const std::string& origin);

std::string resolve_output_dir(const ScenarioConfig& config);

/// Executes every requested check; writes reports, marginals and the run
/// manifest. Exit contract: 0 all passed, 2 some checks failed, 1 error.
int run_config(const ScenarioConfig& config, const std::string& constants_path);

/// Parameter sweep; one CSV row per value plus a log-log slope row.
int sweep_config(const ScenarioConfig& config, const std::string& parameter,
                 const std::vector<double>& values, const std::string& constants_path);

/// One-shot calibration: analysis constants on the canonical suite, then
/// stability constants on a held-out scenario family, frozen with margin.
coefficients::ConstantsManifest calibrate_constants(std::uint64_t seed);

/// The committed five-scenario regression family (sobolev x2, w11, mixed x2).
struct RegressionCase {
    std::string name;
    Scenario scenario;
    Theorem theorem;
    double delta;
};
std::vector<RegressionCase> regression_suite(std::uint64_t seed);

/// Named builders shared by configs, the regression suite and tests.
coefficients::CoefficientField make_drift_sigma(
    int dim, double horizon, const std::string& drift_name,
    const std::map<std::string, double>& drift_params, const std::string& sigma_name,
    const std::map<std::string, double>& sigma_params);

measures::GridDensity make_initial(const measures::BoxGrid& grid, const std::string& name,
                                   const std::map<std::string, double>& params);

std::shared_ptr<coefficients::OsgoodModulus> make_modulus(const std::string& name,
                                                          double g_const, double horizon,
                                                          int dim);

/// Default location of the committed constants manifest.
std::string default_constants_path();

}  // namespace fpstab::experiments
