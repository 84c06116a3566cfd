#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpstab/common.hpp"

namespace fpstab::measures {

/// Uniform box grid in dimension 1 or 2. Cells are indexed x-fastest.
struct BoxGrid {
    int dim = 1;
    std::array<double, 2> lo{0.0, 0.0};
    std::array<double, 2> hi{1.0, 1.0};
    std::array<int, 2> cells{2, 1};

    BoxGrid() = default;
    BoxGrid(double lo1, double hi1, int n1);
    BoxGrid(double lo1, double hi1, int n1, double lo2, double hi2, int n2);

    double spacing(int axis) const { return (hi[axis] - lo[axis]) / cells[axis]; }
    double min_spacing() const;
    double cell_volume() const;
    std::size_t size() const;
    double diameter() const;

    /// Center coordinate of the flat cell index along `axis`.
    double center(std::size_t flat, int axis) const;
    void center(std::size_t flat, std::span<double> out) const;

    /// Flat index of the cell containing x, or nullopt when out of the box.
    std::optional<std::size_t> locate(std::span<const double> x) const;

    bool operator==(const BoxGrid&) const = default;
};

/// Plain scalar samples on a grid (no probability normalization).
struct GridField {
    BoxGrid grid;
    std::vector<double> values;

    GridField() = default;
    explicit GridField(const BoxGrid& g, double fill = 0.0)
        : grid(g), values(g.size(), fill) {}
};

/// Nonnegative density on a grid; carries the mass that left the box.
struct GridDensity {
    BoxGrid grid;
    std::vector<double> values;  // probability per unit volume
    double time = 0.0;
    double leakage = 0.0;  // mass outside the box

    GridDensity() = default;
    GridDensity(BoxGrid g, std::vector<double> vals, double t = 0.0, double leak = 0.0);

    double mass() const;
    /// mass() + leakage must equal 1 within eps_mass.
    void check_mass(double eps_mass = 1e-9) const;
};

/// Weighted point set in R^d; points stored flat, row-major.
struct ParticleCloud {
    int dim = 1;
    std::vector<double> points;
    std::vector<double> weights;
    double time = 0.0;

    ParticleCloud() = default;
    ParticleCloud(int d, std::vector<double> pts, std::vector<double> w, double t = 0.0);

    std::size_t size() const { return weights.size(); }
    std::span<const double> point(std::size_t i) const {
        return {points.data() + i * static_cast<std::size_t>(dim),
                static_cast<std::size_t>(dim)};
    }
};

/// Equal-weight cloud from flat coordinates.
ParticleCloud uniform_cloud(int dim, std::vector<double> pts, double time = 0.0);

struct MeasureSummary {
    std::vector<std::pair<double, double>> lr_norms;  // (r, value), grid measures only
    double first_moment = 0.0;
    double alpha_moment = 0.0;
    double alpha = 1.0;
    double log_moment = 0.0;  // integral of log(1+|x|^2)
    bool in_p_log = true;
};

/// L^r norm of a grid density, r in [1, inf].
double lr_norm(const GridDensity& density, double r);
double lr_norm(const GridField& field, double r);

/// Integral of log(1+|x|^2) against the measure.
double log_moment(const GridDensity& density);
double log_moment(const ParticleCloud& cloud);

MeasureSummary summarize(const GridDensity& density, std::span<const double> rs,
                         double alpha = 1.0);
MeasureSummary summarize(const ParticleCloud& cloud, double alpha = 1.0);

/// Image measure under a pointwise map; weights unchanged.
using PointMap = std::function<void(std::span<const double>, std::span<double>)>;
ParticleCloud pushforward(const ParticleCloud& cloud, const PointMap& map);

/// Histogram estimate of the density of a cloud; out-of-box weight becomes
/// leakage.
GridDensity density_from_cloud(const ParticleCloud& cloud, const BoxGrid& grid);

/// Draw an equal-weight cloud from a grid density by inverse-CDF sampling
/// over cells (uniform within each cell).
ParticleCloud sample_from_density(const GridDensity& density, std::size_t n,
                                  std::uint64_t seed, std::uint64_t stream = 17);

/// 1D stratified quantile cloud: atoms at F^{-1}((k - shift)/n) for a shared
/// shift in (0,1); shared levels cancel the iid sampling noise when two
/// densities are compared.
ParticleCloud quantile_cloud_1d(const GridDensity& density, std::size_t n, double shift);

/// 2D triangular quantile cloud (marginal in y, conditional in x) on shared
/// low-discrepancy levels; the 2D counterpart of quantile_cloud_1d.
ParticleCloud quantile_cloud_2d(const GridDensity& density, std::size_t n, double shift_y,
                                double shift_x);

// CSV + JSON-header serialization.
void save_density(const GridDensity& density, const std::string& csv_path,
                  const std::string& json_path);
GridDensity load_density(const std::string& csv_path, const std::string& json_path);
void save_cloud(const ParticleCloud& cloud, const std::string& csv_path,
                const std::string& json_path);
ParticleCloud load_cloud(const std::string& csv_path, const std::string& json_path);
/// Cloud from a bare CSV (one row per particle: coords..., weight).
ParticleCloud load_cloud_csv(const std::string& csv_path);

}  // namespace fpstab::measures
