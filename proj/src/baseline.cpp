#include "r2n2/baseline.hpp"

#include <chrono>
#include <cmath>

#include "r2n2/errors.hpp"
#include "r2n2/kernels.hpp"
#include "r2n2/objectives.hpp"

namespace r2n2::baseline {
namespace {

double now_seconds() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

// Resample control coefficients of `prev` (built for prev_res) onto the
// lattice of `next` (built for next_res). Both lattices live on the shared
// normalized domain; displacement magnitudes carry over unchanged.
void warm_start(const BSplineModel& prev, int prev_res, BSplineModel& next, int next_res) {
    const double* pu = prev.coeffs.data();
    const double* pv = prev.coeffs.data() + prev.lattice_points();
    double* nu = next.coeffs.data();
    double* nv = next.coeffs.data() + next.lattice_points();
    auto sample = [&](const double* plane, double ty, double tx) {
        const int y0 = std::clamp((int)std::floor(ty), 0, prev.rows - 1);
        const int x0 = std::clamp((int)std::floor(tx), 0, prev.cols - 1);
        const int y1 = std::min(y0 + 1, prev.rows - 1);
        const int x1 = std::min(x0 + 1, prev.cols - 1);
        const double fy = std::clamp(ty - y0, 0.0, 1.0);
        const double fx = std::clamp(tx - x0, 0.0, 1.0);
        const double top = (1.0 - fx) * plane[(std::size_t)y0 * prev.cols + x0] +
                           fx * plane[(std::size_t)y0 * prev.cols + x1];
        const double bot = (1.0 - fx) * plane[(std::size_t)y1 * prev.cols + x0] +
                           fx * plane[(std::size_t)y1 * prev.cols + x1];
        return (1.0 - fy) * top + fy * bot;
    };
    const double scale = (double)(prev_res - 1) / (double)(next_res - 1);
    for (int i = 0; i < next.rows; ++i) {
        for (int j = 0; j < next.cols; ++j) {
            // pixel position of the new control point, mapped into the old lattice
            const double ty = i * next.spacing * scale / prev.spacing;
            const double tx = j * next.spacing * scale / prev.spacing;
            nu[(std::size_t)i * next.cols + j] = sample(pu, ty, tx);
            nv[(std::size_t)i * next.cols + j] = sample(pv, ty, tx);
        }
    }
}

struct AdamBuf {
    Tensor m, v, vmax;
    long t = 0;
};

void adam_update(Tensor& value, const Tensor& grad, AdamBuf& buf, double lr, bool amsgrad) {
    if (buf.m.empty()) {
        buf.m = Tensor(value.shape());
        buf.v = Tensor(value.shape());
        buf.vmax = Tensor(value.shape());
    }
    ++buf.t;
    const double bc1 = 1.0 - std::pow(0.9, (double)buf.t);
    const double bc2 = 1.0 - std::pow(0.999, (double)buf.t);
    kern::ops().adam_step(value.data(), grad.data(), buf.m.data(), buf.v.data(),
                          buf.vmax.data(), value.size(), lr, 0.9, 0.999, 1e-8, bc1, bc2,
                          amsgrad);
}

}  // namespace

void BaselineConfig::validate() const {
    if (resolutions.empty() || resolutions.size() != kernel_sizes.size())
        throw std::invalid_argument("BaselineConfig: resolutions/kernel_sizes length mismatch");
    for (std::size_t i = 0; i < resolutions.size(); ++i) {
        if (resolutions[i] < 4 || kernel_sizes[i] < 3)
            throw std::invalid_argument("BaselineConfig: non-positive level entries");
        if (i > 0 && resolutions[i] <= resolutions[i - 1])
            throw std::invalid_argument("BaselineConfig: resolutions must increase");
    }
    if (!(learning_rate > 0.0) || iterations_per_level < 1)
        throw std::invalid_argument("BaselineConfig: bad optimizer settings");
}

BaselineConfig BaselineConfig::scaled() {
    BaselineConfig c;
    c.resolutions = {16, 32, 64};
    c.kernel_sizes = {7, 21, 57};
    c.iterations_per_level = 100;
    return c;
}

Image2D downsample(const Image2D& img, int factor) {
    if (factor < 1) throw std::invalid_argument("downsample: factor must be >= 1");
    if (factor == 1) return img;
    const int h = img.grid.height, w = img.grid.width;
    if (h % factor != 0 || w % factor != 0)
        throw shape_error("downsample: extent not divisible by factor");
    Image2D out = make_image(make_grid(h / factor, w / factor));
    const double inv = 1.0 / (factor * factor);
    for (int y = 0; y < h / factor; ++y) {
        for (int x = 0; x < w / factor; ++x) {
            double acc = 0.0;
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx)
                    acc += img.values[(std::size_t)(y * factor + dy) * w + (x * factor + dx)];
            out.values[(std::size_t)y * (w / factor) + x] = acc * inv;
        }
    }
    return out;
}

std::pair<DisplacementField, BaselineDiagnostics> register_bspline(const Image2D& fixed,
                                                                   const Image2D& moving,
                                                                   const BaselineConfig& cfg) {
    cfg.validate();
    const int finest = cfg.resolutions.back();
    if (fixed.grid.height != fixed.grid.width)
        throw shape_error("register_bspline: fixed image must be square");
    if (!fixed.grid.same_extent(moving.grid))
        throw shape_error("register_bspline: image grids differ");
    if (fixed.grid.height != finest)
        throw shape_error("register_bspline: image resolution must match the finest level");

    const double t_start = now_seconds();
    BaselineDiagnostics diag;
    BSplineModel model;
    int prev_res = 0;

    for (std::size_t level = 0; level < cfg.resolutions.size(); ++level) {
        const int res = cfg.resolutions[level];
        if (finest % res != 0)
            throw shape_error("register_bspline: levels must divide the finest resolution");
        const Image2D f_l = downsample(fixed, finest / res);
        const Image2D m_l = downsample(moving, finest / res);
        const Grid2D& grid = f_l.grid;

        BSplineModel next = make_bspline_model(res, res, cfg.kernel_sizes[level]);
        if (level > 0) warm_start(model, prev_res, next, res);
        model = std::move(next);
        prev_res = res;

        AdamBuf adam;
        std::vector<double> losses;
        losses.reserve((std::size_t)cfg.iterations_per_level);
        for (int it = 0; it < cfg.iterations_per_level; ++it) {
            ad::Tape tape;
            const ad::NodeId coeffs = tape.leaf(model.coeffs, true);
            const ad::NodeId field = bspline_field_op(tape, coeffs, model, grid);
            const ad::NodeId warped = warp_op(tape, tape.constant(image_to_tensor(m_l)), field,
                                              grid);
            const ad::NodeId loss =
                tape.add(mse_op(tape, tape.constant(image_to_tensor(f_l)), warped),
                         tape.scale(tv_op(tape, field), cfg.lambda));
            const double value = tape.scalar_val(loss);
            if (!std::isfinite(value))
                throw training_error("register_bspline: non-finite loss at level " +
                                     std::to_string(level) + " iteration " + std::to_string(it));
            losses.push_back(value);
            tape.backward(loss);
            adam_update(model.coeffs, tape.grad(coeffs), adam, cfg.learning_rate, cfg.amsgrad);
        }
        diag.level_losses.push_back(std::move(losses));
    }

    const Grid2D grid = make_grid(finest, finest);
    DisplacementField field = bspline_field(model, grid);
    diag.parameter_count = count_transform_params(model);
    diag.final_objective = classic_objective(fixed, moving, field, cfg.lambda);
    diag.seconds = now_seconds() - t_start;
    return {std::move(field), std::move(diag)};
}

}  // namespace r2n2::baseline
