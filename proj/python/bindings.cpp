#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fpstab/experiments.hpp"
#include "fpstab/rng.hpp"
#include "fpstab/zvonkin.hpp"
#include "json.hpp"

namespace py = pybind11;
using namespace fpstab;

namespace {

measures::ParticleCloud cloud_from_arrays(py::array_t<double> points,
                                          py::array_t<double> weights) {
    const auto pts = points.unchecked();
    std::vector<double> flat;
    int dim = 1;
    if (points.ndim() == 1) {
        flat.assign(points.data(), points.data() + points.size());
    } else if (points.ndim() == 2) {
        dim = static_cast<int>(points.shape(1));
        flat.resize(static_cast<std::size_t>(points.size()));
        for (py::ssize_t i = 0; i < points.shape(0); ++i)
            for (py::ssize_t a = 0; a < points.shape(1); ++a)
                flat[static_cast<std::size_t>(i * points.shape(1) + a)] =
                    points.ndim() == 2 ? *points.data(i, a) : 0.0;
    } else {
        throw py::value_error("points must be 1D or 2D");
    }
    (void)pts;
    if (weights.size() == 0) {
        const std::size_t n = flat.size() / static_cast<std::size_t>(dim);
        return measures::uniform_cloud(dim, std::move(flat));
    }
    std::vector<double> w(weights.data(), weights.data() + weights.size());
    return measures::ParticleCloud(dim, std::move(flat), std::move(w));
}

transport::CostSpec spec_from_name(const std::string& kind, double delta, double p) {
    if (kind == "log-squared") return transport::CostSpec::log_squared(delta);
    if (kind == "log-linear") return transport::CostSpec::log_linear(delta);
    if (kind == "power") return transport::CostSpec::power(p);
    throw py::value_error("cost kind must be log-squared, log-linear or power");
}

std::map<std::string, double> params_map(const py::dict& d) {
    std::map<std::string, double> out;
    for (const auto& item : d)
        out[py::cast<std::string>(item.first)] = py::cast<double>(item.second);
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Numerical laboratory for transport distances, coupled diffusions and "
              "stability bounds";

    m.def("log_moment",
          [](py::array_t<double> points, py::array_t<double> weights) {
              return measures::log_moment(cloud_from_arrays(points, weights));
          },
          py::arg("points"), py::arg("weights") = py::array_t<double>());

    m.def("eval_cost",
          [](const std::string& kind, double delta, double p, py::array_t<double> x,
             py::array_t<double> y) {
              const auto spec = spec_from_name(kind, delta, p);
              return transport::eval_cost(
                  spec, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                  std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
          },
          py::arg("kind"), py::arg("delta"), py::arg("p"), py::arg("x"), py::arg("y"));

    m.def("ot_exact",
          [](py::array_t<double> xa, py::array_t<double> wa, py::array_t<double> xb,
             py::array_t<double> wb, const std::string& kind, double delta, double p) {
              const auto plan = transport::solve_exact(cloud_from_arrays(xa, wa),
                                                       cloud_from_arrays(xb, wb),
                                                       spec_from_name(kind, delta, p));
              py::dict out;
              out["cost"] = plan.cost;
              out["duality_gap"] = plan.duality_gap;
              py::array_t<double> entries({static_cast<py::ssize_t>(plan.entries.size()),
                                           static_cast<py::ssize_t>(3)});
              auto e = entries.mutable_unchecked<2>();
              for (std::size_t k = 0; k < plan.entries.size(); ++k) {
                  e(static_cast<py::ssize_t>(k), 0) = plan.entries[k].i;
                  e(static_cast<py::ssize_t>(k), 1) = plan.entries[k].j;
                  e(static_cast<py::ssize_t>(k), 2) = plan.entries[k].mass;
              }
              out["entries"] = entries;
              return out;
          },
          py::arg("points_a"), py::arg("weights_a"), py::arg("points_b"), py::arg("weights_b"),
          py::arg("kind") = "log-squared", py::arg("delta") = 1.0, py::arg("p") = 2.0);

    m.def("ot_entropic",
          [](py::array_t<double> xa, py::array_t<double> wa, py::array_t<double> xb,
             py::array_t<double> wb, const std::string& kind, double delta, double p,
             double epsilon) {
              const auto plan = transport::solve_entropic(cloud_from_arrays(xa, wa),
                                                          cloud_from_arrays(xb, wb),
                                                          spec_from_name(kind, delta, p),
                                                          epsilon);
              py::dict out;
              out["cost"] = plan.cost;
              out["duality_gap"] = plan.duality_gap;
              return out;
          },
          py::arg("points_a"), py::arg("weights_a"), py::arg("points_b"), py::arg("weights_b"),
          py::arg("kind") = "log-squared", py::arg("delta") = 1.0, py::arg("p") = 2.0,
          py::arg("epsilon") = 1e-2);

    m.def("wasserstein",
          [](py::array_t<double> xa, py::array_t<double> wa, py::array_t<double> xb,
             py::array_t<double> wb, double p) {
              return transport::wasserstein(cloud_from_arrays(xa, wa),
                                            cloud_from_arrays(xb, wb), p);
          },
          py::arg("points_a"), py::arg("weights_a"), py::arg("points_b"), py::arg("weights_b"),
          py::arg("p") = 2.0);

    m.def("distance_relations",
          [](py::array_t<double> xa, py::array_t<double> wa, py::array_t<double> xb,
             py::array_t<double> wb, double delta) {
              const auto rel = transport::distance_relations(cloud_from_arrays(xa, wa),
                                                             cloud_from_arrays(xb, wb), delta);
              py::dict out;
              out["d_delta"] = rel.d_delta;
              out["tilde_d_delta"] = rel.tilde_d_delta;
              out["pass"] = rel.pass;
              return out;
          },
          py::arg("points_a"), py::arg("weights_a"), py::arg("points_b"), py::arg("weights_b"),
          py::arg("delta"));

    m.def("osgood_psi",
          [](double s, double delta, const std::string& rho) {
              const auto modulus = experiments::make_modulus(rho, 0.0, 1.0, 1);
              return coefficients::osgood_psi(s, *modulus, delta);
          },
          py::arg("s"), py::arg("delta"), py::arg("rho") = "identity");

    m.def("phi_delta",
          [](const std::function<double(double)>& G, double delta) {
              return coefficients::phi_delta(G, delta);
          },
          py::arg("G"), py::arg("delta"));

    m.def("maximal_function",
          [](py::array_t<double> values, double lo, double hi) {
              measures::GridField f(measures::BoxGrid(lo, hi,
                                                      static_cast<int>(values.size())));
              std::copy(values.data(), values.data() + values.size(), f.values.begin());
              const auto mf = coefficients::maximal_function(f);
              return py::array_t<double>(static_cast<py::ssize_t>(mf.values.size()),
                                         mf.values.data());
          },
          py::arg("values"), py::arg("lo"), py::arg("hi"));

    m.def("mollify",
          [](py::array_t<double> values, double lo, double hi, double eps) {
              measures::GridField f(measures::BoxGrid(lo, hi,
                                                      static_cast<int>(values.size())));
              std::copy(values.data(), values.data() + values.size(), f.values.begin());
              const auto sf = coefficients::mollify(f, eps);
              return py::array_t<double>(static_cast<py::ssize_t>(sf.values.size()),
                                         sf.values.data());
          },
          py::arg("values"), py::arg("lo"), py::arg("hi"), py::arg("eps"));

    m.def("fpe_solve",
          [](double lo, double hi, int cells, const std::string& drift, py::dict drift_params,
             const std::string& sigma, py::dict sigma_params, double kappa, double horizon,
             int frames) {
              fpe::FpeProblem pb;
              pb.field = experiments::make_drift_sigma(1, horizon, drift,
                                                       params_map(drift_params), sigma,
                                                       params_map(sigma_params));
              pb.initial = experiments::make_initial(measures::BoxGrid(lo, hi, cells),
                                                     "gaussian",
                                                     {{"mean", 0.0}, {"std", 1.0}});
              pb.kappa = kappa;
              pb.horizon = horizon;
              const long steps =
                  static_cast<long>(std::ceil(horizon / fpe::suggested_step(pb)));
              const auto sol = fpe::solve(pb, steps, frames);
              py::dict out;
              out["times"] = sol.times;
              py::array_t<double> values({static_cast<py::ssize_t>(sol.frames.size()),
                                          static_cast<py::ssize_t>(cells)});
              auto v = values.mutable_unchecked<2>();
              for (std::size_t f = 0; f < sol.frames.size(); ++f)
                  for (int c = 0; c < cells; ++c)
                      v(static_cast<py::ssize_t>(f), c) =
                          sol.frames[f].values[static_cast<std::size_t>(c)];
              out["values"] = values;
              out["clipped_mass"] = sol.clipped_mass;
              return out;
          },
          py::arg("lo"), py::arg("hi"), py::arg("cells"), py::arg("drift"),
          py::arg("drift_params"), py::arg("sigma"), py::arg("sigma_params"),
          py::arg("kappa") = 1.0, py::arg("horizon") = 1.0, py::arg("frames") = 4);

    m.def("coupled_cost_curve",
          [](const std::string& drift1, py::dict params1, const std::string& drift2,
             py::dict params2, double sigma, double delta, std::size_t particles,
             double step, double horizon, std::uint64_t seed) {
              auto f1 = experiments::make_drift_sigma(1, horizon, drift1, params_map(params1),
                                                      "constant", {{"value", sigma}});
              auto f2 = experiments::make_drift_sigma(1, horizon, drift2, params_map(params2),
                                                      "constant", {{"value", sigma}});
              simulate::InitialCoupling ic;
              ic.dim = 1;
              ic.count = particles;
              ic.pairs.assign(particles * 2, 0.0);
              simulate::SdeScheme scheme;
              scheme.step = step;
              scheme.steps_per_frame =
                  std::max(1, static_cast<int>(std::lround(horizon / step) / 20));
              scheme.seed = seed;
              const auto ens = simulate::evolve_coupled(f1, f2, ic, scheme, horizon);
              const auto curve =
                  simulate::coupled_cost_curve(ens, transport::CostSpec::log_squared(delta));
              py::array_t<double> out({static_cast<py::ssize_t>(curve.size()),
                                       static_cast<py::ssize_t>(3)});
              auto o = out.mutable_unchecked<2>();
              for (std::size_t k = 0; k < curve.size(); ++k) {
                  o(static_cast<py::ssize_t>(k), 0) = curve[k].t;
                  o(static_cast<py::ssize_t>(k), 1) = curve[k].mean;
                  o(static_cast<py::ssize_t>(k), 2) = curve[k].std_error;
              }
              return out;
          },
          py::arg("drift1"), py::arg("params1"), py::arg("drift2"), py::arg("params2"),
          py::arg("sigma") = 0.3, py::arg("delta") = 0.1, py::arg("particles") = 10000,
          py::arg("step") = 1e-3, py::arg("horizon") = 1.0, py::arg("seed") = 1);

    m.def("zvonkin_pipeline",
          [](double lo, double hi, int cells, const std::string& drift, py::dict drift_params,
             double horizon) {
              measures::BoxGrid grid(lo, hi, cells);
              auto field = experiments::make_drift_sigma(1, horizon, drift,
                                                         params_map(drift_params), "constant",
                                                         {{"value", 1.0}});
              auto pick = zvonkin::select_lambda(field, grid, horizon);
              const auto res = zvonkin::residual_norms(pick.solution);
              double roundtrip = 0.0;
              RngStream rng(7, 61, 0);
              for (int it = 0; it < 50; ++it) {
                  const double x =
                      lo + (hi - lo) * rng.uniform(static_cast<std::uint64_t>(it));
                  const double t = horizon * 0.5;
                  double fwd[1];
                  pick.solution.psi(t, {&x, 1}, fwd);
                  const auto back = zvonkin::invert(pick.solution, t, {fwd, 1});
                  roundtrip = std::max(roundtrip, std::abs(back[0] - x));
              }
              py::dict out;
              out["lambda"] = pick.lambda;
              out["sup_grad_norm"] = pick.achieved_norm;
              out["max_residual_l2"] =
                  res.empty() ? 0.0 : *std::max_element(res.begin(), res.end());
              out["roundtrip_error"] = roundtrip;
              return out;
          },
          py::arg("lo"), py::arg("hi"), py::arg("cells"), py::arg("drift"),
          py::arg("drift_params"), py::arg("horizon") = 1.0);

    m.def("rhs_osgood",
          [](double initial, double g, double sum_u, double u2, double bdiff, double sdiff2,
             double delta) {
              stability::OsgoodIngredients ing;
              ing.initial_d_psi = initial;
              ing.g_L1L1 = g;
              ing.sum_u_LinfLinf = sum_u;
              ing.u2_LinfLinf = u2;
              ing.drift_diff_L1L1 = bdiff;
              ing.sigma_diff_L2L2_sq = sdiff2;
              return stability::rhs_osgood(ing, delta);
          },
          py::arg("initial"), py::arg("g"), py::arg("sum_u"), py::arg("u2"), py::arg("bdiff"),
          py::arg("sdiff2"), py::arg("delta"));

    m.def("run_config_text",
          [](const std::string& text, const std::string& constants_path) {
              const auto cfg = experiments::parse_config_text(text, "python");
              return experiments::run_config(cfg, constants_path);
          },
          py::arg("config_json"), py::arg("constants_path") = "config/constants.json");

    m.def("calibration_seed", []() {
        return coefficients::load_manifest(experiments::default_constants_path()).seed;
    });
}
