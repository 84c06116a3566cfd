#include "fpstab/measures.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fpstab/rng.hpp"
#include "json.hpp"

namespace fpstab::measures {

namespace {

void check_axis(double lo, double hi, int n) {
    if (n < 2) fail("invalid-grid", "cell count must be >= 2 per axis");
    if (!(hi > lo)) fail("invalid-grid", "upper bound must exceed lower bound");
}

}  // namespace

BoxGrid::BoxGrid(double lo1, double hi1, int n1) {
    check_axis(lo1, hi1, n1);
    dim = 1;
    lo = {lo1, 0.0};
    hi = {hi1, 1.0};
    cells = {n1, 1};
}

BoxGrid::BoxGrid(double lo1, double hi1, int n1, double lo2, double hi2, int n2) {
    check_axis(lo1, hi1, n1);
    check_axis(lo2, hi2, n2);
    dim = 2;
    lo = {lo1, lo2};
    hi = {hi1, hi2};
    cells = {n1, n2};
}

double BoxGrid::min_spacing() const {
    double s = spacing(0);
    if (dim == 2) s = std::min(s, spacing(1));
    return s;
}

double BoxGrid::cell_volume() const {
    double v = spacing(0);
    if (dim == 2) v *= spacing(1);
    return v;
}

std::size_t BoxGrid::size() const {
    std::size_t n = static_cast<std::size_t>(cells[0]);
    if (dim == 2) n *= static_cast<std::size_t>(cells[1]);
    return n;
}

double BoxGrid::diameter() const {
    double s = sqr(hi[0] - lo[0]);
    if (dim == 2) s += sqr(hi[1] - lo[1]);
    return std::sqrt(s);
}

double BoxGrid::center(std::size_t flat, int axis) const {
    if (dim == 1) return lo[0] + (static_cast<double>(flat) + 0.5) * spacing(0);
    const std::size_t nx = static_cast<std::size_t>(cells[0]);
    const std::size_t ix = flat % nx, iy = flat / nx;
    const std::size_t i = (axis == 0) ? ix : iy;
    return lo[axis] + (static_cast<double>(i) + 0.5) * spacing(axis);
}

void BoxGrid::center(std::size_t flat, std::span<double> out) const {
    for (int a = 0; a < dim; ++a) out[static_cast<std::size_t>(a)] = center(flat, a);
}

std::optional<std::size_t> BoxGrid::locate(std::span<const double> x) const {
    std::array<std::size_t, 2> idx{0, 0};
    for (int a = 0; a < dim; ++a) {
        const double t = (x[static_cast<std::size_t>(a)] - lo[a]) / spacing(a);
        if (t < 0.0 || t >= cells[a]) {
            // Points sitting exactly on the upper face belong to the last cell.
            if (t == static_cast<double>(cells[a])) {
                idx[static_cast<std::size_t>(a)] = static_cast<std::size_t>(cells[a] - 1);
                continue;
            }
            return std::nullopt;
        }
        idx[static_cast<std::size_t>(a)] = static_cast<std::size_t>(t);
    }
    if (dim == 1) return idx[0];
    return idx[1] * static_cast<std::size_t>(cells[0]) + idx[0];
}

GridDensity::GridDensity(BoxGrid g, std::vector<double> vals, double t, double leak)
    : grid(g), values(std::move(vals)), time(t), leakage(leak) {
    if (values.size() != grid.size()) fail("invalid-measure", "value count does not match grid");
    for (double& v : values) {
        if (!std::isfinite(v)) fail("invalid-measure", "non-finite density value");
        if (v < 0.0) {
            if (v < -1e-12) fail("invalid-measure", "negative density value");
            v = 0.0;
        }
    }
}

double GridDensity::mass() const {
    const double vol = grid.cell_volume();
    double m = 0.0;
    for (double v : values) m += v;
    return m * vol;
}

void GridDensity::check_mass(double eps_mass) const {
    const double total = mass() + leakage;
    if (std::abs(total - 1.0) > eps_mass)
        fail("invalid-measure", "mass + leakage = " + format_double(total) + ", expected 1");
}

ParticleCloud::ParticleCloud(int d, std::vector<double> pts, std::vector<double> w, double t)
    : dim(d), points(std::move(pts)), weights(std::move(w)), time(t) {
    if (d < 1) fail("invalid-measure", "dimension must be >= 1");
    if (points.size() != weights.size() * static_cast<std::size_t>(d))
        fail("invalid-measure", "point/weight count mismatch");
    double sum = 0.0;
    for (double w_i : weights) {
        if (!(w_i >= 0.0)) fail("invalid-measure", "negative weight");
        sum += w_i;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        fail("invalid-measure", "weights sum to " + format_double(sum) + ", expected 1");
}

ParticleCloud uniform_cloud(int dim, std::vector<double> pts, double time) {
    const std::size_t n = pts.size() / static_cast<std::size_t>(dim);
    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    // distribute rounding so weights sum to 1 exactly
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) sum += w[i];
    if (n > 0) w[n - 1] = 1.0 - sum;
    return ParticleCloud(dim, std::move(pts), std::move(w), time);
}

double lr_norm(const GridField& field, double r) {
    if (!(r >= 1.0)) fail("invalid-exponent", "L^r norm needs r >= 1");
    if (std::isinf(r)) {
        double m = 0.0;
        for (double v : field.values) m = std::max(m, std::abs(v));
        return m;
    }
    const double vol = field.grid.cell_volume();
    double s = 0.0;
    for (double v : field.values) s += std::pow(std::abs(v), r);
    return std::pow(s * vol, 1.0 / r);
}

double lr_norm(const GridDensity& density, double r) {
    GridField f;
    f.grid = density.grid;
    f.values = density.values;
    return lr_norm(f, r);
}

double log_moment(const GridDensity& density) {
    const double vol = density.grid.cell_volume();
    double s = 0.0;
    std::array<double, 2> x{};
    for (std::size_t c = 0; c < density.values.size(); ++c) {
        density.grid.center(c, x);
        double r2 = sqr(x[0]);
        if (density.grid.dim == 2) r2 += sqr(x[1]);
        s += std::log1p(r2) * density.values[c];
    }
    return s * vol;
}

double log_moment(const ParticleCloud& cloud) {
    double s = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto p = cloud.point(i);
        double r2 = 0.0;
        for (double v : p) r2 += sqr(v);
        s += cloud.weights[i] * std::log1p(r2);
    }
    return s;
}

MeasureSummary summarize(const GridDensity& density, std::span<const double> rs,
                         double alpha) {
    MeasureSummary out;
    for (double r : rs) out.lr_norms.emplace_back(r, lr_norm(density, r));
    const double vol = density.grid.cell_volume();
    std::array<double, 2> x{};
    for (std::size_t c = 0; c < density.values.size(); ++c) {
        density.grid.center(c, x);
        const double nx = norm2(std::span<const double>(x.data(),
                                static_cast<std::size_t>(density.grid.dim)));
        out.first_moment += nx * density.values[c] * vol;
        out.alpha_moment += std::pow(nx, alpha) * density.values[c] * vol;
    }
    out.alpha = alpha;
    out.log_moment = log_moment(density);
    out.in_p_log = std::isfinite(out.log_moment);
    return out;
}

MeasureSummary summarize(const ParticleCloud& cloud, double alpha) {
    MeasureSummary out;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double nx = norm2(cloud.point(i));
        out.first_moment += cloud.weights[i] * nx;
        out.alpha_moment += cloud.weights[i] * std::pow(nx, alpha);
    }
    out.alpha = alpha;
    out.log_moment = log_moment(cloud);
    out.in_p_log = std::isfinite(out.log_moment);
    return out;
}

ParticleCloud pushforward(const ParticleCloud& cloud, const PointMap& map) {
    ParticleCloud out = cloud;
    const std::size_t d = static_cast<std::size_t>(cloud.dim);
    std::vector<double> y(d);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        map(cloud.point(i), y);
        for (std::size_t a = 0; a < d; ++a) {
            if (!std::isfinite(y[a]))
                fail("transform-domain-error",
                     "map returned non-finite value at particle " + std::to_string(i));
            out.points[i * d + a] = y[a];
        }
    }
    return out;
}

GridDensity density_from_cloud(const ParticleCloud& cloud, const BoxGrid& grid) {
    if (cloud.dim != grid.dim) fail("invalid-measure", "cloud/grid dimension mismatch");
    std::vector<double> vals(grid.size(), 0.0);
    const double inv_vol = 1.0 / grid.cell_volume();
    double leak = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (auto c = grid.locate(cloud.point(i)))
            vals[*c] += cloud.weights[i] * inv_vol;
        else
            leak += cloud.weights[i];
    }
    return GridDensity(grid, std::move(vals), cloud.time, leak);
}

ParticleCloud sample_from_density(const GridDensity& density, std::size_t n,
                                  std::uint64_t seed, std::uint64_t stream) {
    // cumulative cell masses
    std::vector<double> cdf(density.values.size());
    const double vol = density.grid.cell_volume();
    double acc = 0.0;
    for (std::size_t c = 0; c < density.values.size(); ++c) {
        acc += density.values[c] * vol;
        cdf[c] = acc;
    }
    const double total = acc;
    if (total <= 0.0) fail("invalid-measure", "cannot sample from zero-mass density");
    RngStream rng(seed, stream, 0);
    const int d = density.grid.dim;
    std::vector<double> pts(n * static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform(3 * i) * total;
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
        const std::size_t c = static_cast<std::size_t>(it - cdf.begin());
        for (int a = 0; a < d; ++a) {
            const double jitter = rng.uniform(3 * i + 1 + static_cast<std::size_t>(a)) - 0.5;
            pts[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(a)] =
                density.grid.center(std::min(c, density.values.size() - 1), a) +
                jitter * density.grid.spacing(a);
        }
    }
    ParticleCloud out = uniform_cloud(d, std::move(pts), density.time);
    return out;
}

ParticleCloud quantile_cloud_1d(const GridDensity& density, std::size_t n, double shift) {
    if (density.grid.dim != 1) fail("invalid-argument", "quantile clouds are 1D only");
    if (!(shift > 0.0) || shift >= 1.0) shift = 0.5;
    const int cells = density.grid.cells[0];
    const double dx = density.grid.spacing(0);
    std::vector<double> cdf(static_cast<std::size_t>(cells) + 1, 0.0);
    for (int i = 0; i < cells; ++i)
        cdf[static_cast<std::size_t>(i) + 1] =
            cdf[static_cast<std::size_t>(i)] + density.values[static_cast<std::size_t>(i)] * dx;
    const double total = cdf.back();
    if (total <= 0.0) fail("invalid-measure", "cannot sample from zero-mass density");
    std::vector<double> pts(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double target = (static_cast<double>(k) + shift) / static_cast<double>(n) * total;
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), target);
        std::size_t i = it == cdf.begin() ? 1 : static_cast<std::size_t>(it - cdf.begin());
        i = std::min(i, static_cast<std::size_t>(cells));
        const double seg = cdf[i] - cdf[i - 1];
        const double frac = seg > 0.0 ? (target - cdf[i - 1]) / seg : 0.5;
        pts[k] = density.grid.lo[0] + (static_cast<double>(i - 1) + frac) * dx;
    }
    return uniform_cloud(1, std::move(pts), density.time);
}

ParticleCloud quantile_cloud_2d(const GridDensity& density, std::size_t n, double shift_y,
                                double shift_x) {
    if (density.grid.dim != 2) fail("invalid-argument", "triangular quantile clouds are 2D only");
    if (!(shift_y > 0.0) || shift_y >= 1.0) shift_y = 0.5;
    if (!(shift_x > 0.0) || shift_x >= 1.0) shift_x = 0.5;
    const int nx = density.grid.cells[0], ny = density.grid.cells[1];
    const double dx = density.grid.spacing(0), dy = density.grid.spacing(1);

    // y-marginal CDF over rows and per-row x CDFs
    std::vector<double> row_mass(static_cast<std::size_t>(ny), 0.0);
    for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix)
            row_mass[static_cast<std::size_t>(iy)] +=
                density.values[static_cast<std::size_t>(iy) * nx + ix];
    std::vector<double> ycdf(static_cast<std::size_t>(ny) + 1, 0.0);
    for (int iy = 0; iy < ny; ++iy)
        ycdf[static_cast<std::size_t>(iy) + 1] =
            ycdf[static_cast<std::size_t>(iy)] + row_mass[static_cast<std::size_t>(iy)];
    const double total = ycdf.back();
    if (total <= 0.0) fail("invalid-measure", "cannot sample from zero-mass density");

    constexpr double golden = 0.6180339887498949;
    std::vector<double> pts(2 * n);
    for (std::size_t k = 0; k < n; ++k) {
        const double uy = (static_cast<double>(k) + shift_y) / static_cast<double>(n);
        const double ux = std::fmod(golden * static_cast<double>(k) + shift_x, 1.0);
        // invert the y marginal
        const double ty = uy * total;
        const auto ity = std::lower_bound(ycdf.begin(), ycdf.end(), ty);
        std::size_t iy = ity == ycdf.begin() ? 1 : static_cast<std::size_t>(ity - ycdf.begin());
        iy = std::min(iy, static_cast<std::size_t>(ny));
        const double yseg = ycdf[iy] - ycdf[iy - 1];
        const double yfrac = yseg > 0.0 ? (ty - ycdf[iy - 1]) / yseg : 0.5;
        pts[2 * k + 1] = density.grid.lo[1] + (static_cast<double>(iy - 1) + yfrac) * dy;
        // invert the conditional x distribution within the selected row
        const std::size_t row = iy - 1;
        const double rmass = row_mass[row];
        double acc = 0.0;
        const double tx = ux * (rmass > 0.0 ? rmass : 1.0);
        double xpos = density.grid.lo[0] + 0.5 * nx * dx;
        if (rmass > 0.0) {
            for (int ix = 0; ix < nx; ++ix) {
                const double cellm = density.values[row * static_cast<std::size_t>(nx) +
                                                    static_cast<std::size_t>(ix)];
                if (acc + cellm >= tx || ix == nx - 1) {
                    const double xfrac = cellm > 0.0 ? (tx - acc) / cellm : 0.5;
                    xpos = density.grid.lo[0] +
                           (static_cast<double>(ix) + std::clamp(xfrac, 0.0, 1.0)) * dx;
                    break;
                }
                acc += cellm;
            }
        }
        pts[2 * k] = xpos;
    }
    return uniform_cloud(2, std::move(pts), density.time);
}

namespace {

void write_file(const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("io-error", "cannot open " + path + " for writing");
    f << body;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("io-error", "cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

void save_density(const GridDensity& density, const std::string& csv_path,
                  const std::string& json_path) {
    std::string csv;
    const int d = density.grid.dim;
    csv += (d == 1) ? "x,value\n" : "x,y,value\n";
    std::array<double, 2> x{};
    for (std::size_t c = 0; c < density.values.size(); ++c) {
        density.grid.center(c, x);
        csv += format_double(x[0]);
        if (d == 2) csv += "," + format_double(x[1]);
        csv += "," + format_double(density.values[c]) + "\n";
    }
    write_file(csv_path, csv);

    nlohmann::json j;
    j["kind"] = "grid_density";
    j["dim"] = d;
    j["lo"] = std::vector<double>(density.grid.lo.begin(), density.grid.lo.begin() + d);
    j["hi"] = std::vector<double>(density.grid.hi.begin(), density.grid.hi.begin() + d);
    j["cells"] = std::vector<int>(density.grid.cells.begin(), density.grid.cells.begin() + d);
    j["cell_volume"] = density.grid.cell_volume();
    j["time"] = density.time;
    j["leakage"] = density.leakage;
    write_file(json_path, j.dump(2) + "\n");
}

GridDensity load_density(const std::string& csv_path, const std::string& json_path) {
    const auto j = nlohmann::json::parse(read_file(json_path));
    const int d = j.at("dim").get<int>();
    BoxGrid grid = (d == 1)
        ? BoxGrid(j.at("lo")[0], j.at("hi")[0], j.at("cells")[0])
        : BoxGrid(j.at("lo")[0], j.at("hi")[0], j.at("cells")[0],
                  j.at("lo")[1], j.at("hi")[1], j.at("cells")[1]);
    std::vector<double> vals;
    vals.reserve(grid.size());
    std::istringstream in(read_file(csv_path));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto pos = line.rfind(',');
        vals.push_back(std::stod(line.substr(pos + 1)));
    }
    return GridDensity(grid, std::move(vals), j.at("time").get<double>(),
                       j.at("leakage").get<double>());
}

void save_cloud(const ParticleCloud& cloud, const std::string& csv_path,
                const std::string& json_path) {
    std::string csv;
    for (int a = 0; a < cloud.dim; ++a) csv += "x" + std::to_string(a) + ",";
    csv += "weight\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto p = cloud.point(i);
        for (double v : p) csv += format_double(v) + ",";
        csv += format_double(cloud.weights[i]) + "\n";
    }
    write_file(csv_path, csv);

    nlohmann::json j;
    j["kind"] = "particle_cloud";
    j["dim"] = cloud.dim;
    j["count"] = cloud.size();
    j["time"] = cloud.time;
    write_file(json_path, j.dump(2) + "\n");
}

namespace {

ParticleCloud parse_cloud_csv(const std::string& body, double time) {
    std::istringstream in(body);
    std::string line;
    std::getline(in, line);  // header
    std::vector<double> pts, ws;
    int dim = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream ls(line);
        std::string tok;
        while (std::getline(ls, tok, ',')) row.push_back(std::stod(tok));
        if (dim < 0) dim = static_cast<int>(row.size()) - 1;
        if (static_cast<int>(row.size()) != dim + 1)
            fail("io-error", "ragged cloud CSV row");
        for (int a = 0; a < dim; ++a) pts.push_back(row[static_cast<std::size_t>(a)]);
        ws.push_back(row.back());
    }
    if (dim < 1) fail("io-error", "empty cloud CSV");
    return ParticleCloud(dim, std::move(pts), std::move(ws), time);
}

}  // namespace

ParticleCloud load_cloud(const std::string& csv_path, const std::string& json_path) {
    const auto j = nlohmann::json::parse(read_file(json_path));
    return parse_cloud_csv(read_file(csv_path), j.at("time").get<double>());
}

ParticleCloud load_cloud_csv(const std::string& csv_path) {
    return parse_cloud_csv(read_file(csv_path), 0.0);
}

}  // namespace fpstab::measures
