#include "r2n2/deform.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "r2n2/errors.hpp"

namespace r2n2 {

void LocalDeformParams::validate() const {
    if (!(sigma_x > 0.0) || !(sigma_y > 0.0))
        throw std::invalid_argument("LocalDeformParams: sigma must be positive");
    if (alpha < 0.0 || alpha > std::numbers::pi)
        throw std::invalid_argument("LocalDeformParams: alpha outside [0, pi]");
    if (std::abs(v_x) > 1.0 || std::abs(v_y) > 1.0)
        throw std::invalid_argument("LocalDeformParams: weight outside [-1, 1]");
    if (std::abs(x) > 1.0 || std::abs(y) > 1.0)
        throw std::invalid_argument("LocalDeformParams: center outside [-1, 1]^2");
}

Mat2 covariance(double sigma_x, double sigma_y, double alpha) {
    if (!(sigma_x > 0.0) || !(sigma_y > 0.0))
        throw std::invalid_argument("covariance: sigma must be positive");
    const double c = std::cos(alpha), s = std::sin(alpha);
    // R diag(sx, sy) R^T
    return Mat2{
        c * c * sigma_x + s * s * sigma_y,
        c * s * sigma_x - s * c * sigma_y,
        s * c * sigma_x - c * s * sigma_y,
        s * s * sigma_x + c * c * sigma_y,
    };
}

namespace {

// Shared forward evaluation; optionally accumulates the seven parameter
// gradients given upstream (gu, gv) planes.
struct GaussianEval {
    double x, y, sx, sy, alpha, vx, vy;
    double c, s;

    explicit GaussianEval(const double* p)
        : x(p[0]), y(p[1]), sx(p[2]), sy(p[3]), alpha(p[4]), vx(p[5]), vy(p[6]),
          c(std::cos(p[4])), s(std::sin(p[4])) {}

    void forward(const Grid2D& g, double* u, double* v) const {
        const std::size_t n = g.pixels();
        for (std::size_t i = 0; i < n; ++i) {
            const double d1 = g.coords_x[i] - x;
            const double d2 = g.coords_y[i] - y;
            const double s1 = c * d1 + s * d2;
            const double s2 = -s * d1 + c * d2;
            const double e = std::exp(-0.5 * (s1 * s1 / sx + s2 * s2 / sy));
            u[i] = vx * e;
            v[i] = vy * e;
        }
    }

    void backward(const Grid2D& g, const double* gu, const double* gv, double* gp) const {
        const std::size_t n = g.pixels();
        for (std::size_t i = 0; i < n; ++i) {
            const double d1 = g.coords_x[i] - x;
            const double d2 = g.coords_y[i] - y;
            const double s1 = c * d1 + s * d2;
            const double s2 = -s * d1 + c * d2;
            const double e = std::exp(-0.5 * (s1 * s1 / sx + s2 * s2 / sy));
            const double G = (gu[i] * vx + gv[i] * vy) * e;  // coefficient on d(exponent term)
            const double a1 = s1 / sx;
            const double a2 = s2 / sy;
            gp[0] += G * (c * a1 - s * a2);               // d/dx center
            gp[1] += G * (s * a1 + c * a2);               // d/dy center
            gp[2] += G * 0.5 * s1 * s1 / (sx * sx);       // d/d sigma_x
            gp[3] += G * 0.5 * s2 * s2 / (sy * sy);       // d/d sigma_y
            gp[4] += -G * s1 * s2 * (1.0 / sx - 1.0 / sy);  // d/d alpha
            gp[5] += gu[i] * e;                           // d/d v_x
            gp[6] += gv[i] * e;                           // d/d v_y
        }
    }
};

}  // namespace

DisplacementField gaussian_local_field(const LocalDeformParams& p, const Grid2D& grid) {
    p.validate();
    const double packed[7] = {p.x, p.y, p.sigma_x, p.sigma_y, p.alpha, p.v_x, p.v_y};
    DisplacementField f = make_field(grid);
    GaussianEval(packed).forward(grid, f.u.data(), f.v.data());
    return f;
}

DisplacementField render_sequence(const std::vector<LocalDeformParams>& params,
                                  const Grid2D& grid) {
    DisplacementField acc = make_field(grid);
    for (const LocalDeformParams& p : params) acc = accumulate(acc, gaussian_local_field(p, grid));
    return acc;
}

long count_transform_params(const std::vector<LocalDeformParams>& params) {
    return 7L * (long)params.size();
}

ad::NodeId gaussian_field_op(ad::Tape& tape, ad::NodeId params7, const Grid2D& grid) {
    const Tensor& vp = tape.val(params7);
    if (vp.size() != 7) throw shape_error("gaussian_field_op: params node must have 7 elements");
    Tensor out({2, grid.height, grid.width});
    GaussianEval(vp.data()).forward(grid, out.data(), out.data() + grid.pixels());
    const Grid2D* gp = &grid;  // caller keeps the grid alive across backward()
    return tape.custom(std::move(out), {params7}, [params7, gp](ad::Tape& t, ad::NodeId self) {
        if (!t.needs_grad(params7)) return;
        const Tensor& g = t.grad(self);
        const std::size_t n = gp->pixels();
        GaussianEval(t.val(params7).data())
            .backward(*gp, g.data(), g.data() + n, t.grad_buf(params7).data());
    });
}

void save_params_table(const std::vector<LocalDeformParams>& params,
                       const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    out << "# x y sigma_x sigma_y alpha v_x v_y\n";
    out.precision(17);
    for (const LocalDeformParams& p : params)
        out << p.x << " " << p.y << " " << p.sigma_x << " " << p.sigma_y << " " << p.alpha
            << " " << p.v_x << " " << p.v_y << "\n";
    if (!out) throw io_error("write failed: " + path.string());
}

std::vector<LocalDeformParams> load_params_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open: " + path.string());
    std::vector<LocalDeformParams> params;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        LocalDeformParams p;
        std::istringstream row(line);
        if (!(row >> p.x >> p.y >> p.sigma_x >> p.sigma_y >> p.alpha >> p.v_x >> p.v_y))
            throw io_error("bad params table row in " + path.string() + ": " + line);
        params.push_back(p);
    }
    return params;
}

DisplacementField dense_field(const DenseModel& m) { return m.theta; }

DenseModel dense_model_from_field(const DisplacementField& f) { return DenseModel{f}; }

}  // namespace r2n2
