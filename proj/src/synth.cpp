#include "r2n2/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "r2n2/errors.hpp"
#include "r2n2/field_io.hpp"

namespace r2n2::data {
namespace {

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Image2D make_texture(const Grid2D& grid, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto range = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };

    // diaphragm-like interface: bright below a gently curved horizontal line
    const double amp = range(0.30, 0.45);
    const double d0 = range(-0.25, 0.25);
    const double d1 = range(-0.30, 0.30);
    const double d2 = range(-0.20, 0.20);
    const double width = range(0.04, 0.08);

    struct Blob {
        double a, cx, cy, s2;
    };
    std::vector<Blob> blobs(8);
    for (Blob& b : blobs) {
        b.a = range(-0.25, 0.30);
        b.cx = range(-0.9, 0.9);
        b.cy = range(-0.9, 0.9);
        const double s = range(0.08, 0.30);
        b.s2 = 2.0 * s * s;
    }

    Image2D img = make_image(grid);
    for (std::size_t i = 0; i < grid.pixels(); ++i) {
        const double x = grid.coords_x[i];
        const double y = grid.coords_y[i];
        double v = 0.15 + 0.25 * (y + 1.0) * 0.5;
        v += amp * logistic((y - (d0 + d1 * x + d2 * x * x)) / width);
        for (const Blob& b : blobs) {
            const double dx = x - b.cx, dy = y - b.cy;
            v += b.a * std::exp(-(dx * dx + dy * dy) / b.s2);
        }
        img.values[i] = std::clamp(v, 0.02, 0.98);
    }
    return img;
}

DisplacementField make_truth(const Grid2D& grid, double deform_scale, int n_blobs,
                             std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto range = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };

    std::vector<LocalDeformParams> params;
    for (int i = 0; i < n_blobs; ++i) {
        LocalDeformParams p;
        p.x = range(-0.6, 0.6);
        p.y = range(-0.6, 0.6);
        p.sigma_x = range(0.05, 0.2);
        p.sigma_y = range(0.05, 0.2);
        p.alpha = range(0.0, std::numbers::pi);
        p.v_x = range(-1.0, 1.0);
        p.v_y = range(-1.0, 1.0);
        params.push_back(p);
    }
    DisplacementField f = render_sequence(params, grid);
    double peak = 0.0;
    for (std::size_t i = 0; i < grid.pixels(); ++i)
        peak = std::max(peak, std::hypot(f.u[i], f.v[i]));
    if (peak > 0.0) {
        const double s = deform_scale / peak;
        for (std::size_t i = 0; i < grid.pixels(); ++i) {
            f.u[i] *= s;
            f.v[i] *= s;
        }
    }
    return f;
}

std::vector<std::size_t> pick_landmark_pixels(const Image2D& img, const DisplacementField& truth,
                                              int n, std::mt19937_64& rng) {
    const Grid2D& g = img.grid;
    const int h = g.height, w = g.width;
    const int margin = std::max(2, h / 16);
    std::vector<std::pair<double, std::size_t>> candidates;
    for (int y = margin; y < h - margin; ++y) {
        for (int x = margin; x < w - margin; ++x) {
            const std::size_t i = (std::size_t)y * w + x;
            const double gx = img.values[i + 1] - img.values[i - 1];
            const double gy = img.values[i + w] - img.values[i - w];
            const double mapped_x = g.coords_x[i] + truth.u[i];
            const double mapped_y = g.coords_y[i] + truth.v[i];
            if (std::abs(mapped_x) > 0.98 || std::abs(mapped_y) > 0.98) continue;
            candidates.emplace_back(std::hypot(gx, gy), i);
        }
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    // keep the strongest edges from the top decile, spread out spatially
    const std::size_t pool = std::max<std::size_t>((std::size_t)n * 4, candidates.size() / 10);
    std::shuffle(candidates.begin(),
                 candidates.begin() + (std::ptrdiff_t)std::min(pool, candidates.size()), rng);
    const double min_sep = std::max(2.0, h / 16.0);
    std::vector<std::size_t> chosen;
    auto far_enough = [&](std::size_t i) {
        const int yi = (int)(i / (std::size_t)w), xi = (int)(i % (std::size_t)w);
        for (std::size_t j : chosen) {
            const int yj = (int)(j / (std::size_t)w), xj = (int)(j % (std::size_t)w);
            if (std::hypot((double)(yi - yj), (double)(xi - xj)) < min_sep) return false;
        }
        return true;
    };
    for (const auto& [mag, i] : candidates) {
        if ((int)chosen.size() >= n) break;
        if (far_enough(i)) chosen.push_back(i);
    }
    for (const auto& [mag, i] : candidates) {  // relax separation if needed
        if ((int)chosen.size() >= n) break;
        if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) chosen.push_back(i);
    }
    return chosen;
}

}  // namespace

SyntheticCase generate_case(int resolution, double deform_scale, int n_blobs,
                            std::uint64_t seed, int n_landmarks) {
    if (resolution < 16) throw std::invalid_argument("generate_case: resolution must be >= 16");
    if (deform_scale < 0.0) throw std::invalid_argument("generate_case: negative deform_scale");
    std::mt19937_64 rng(seed);
    SyntheticCase c;
    c.seed = seed;
    const Grid2D grid = make_grid(resolution, resolution);
    c.moving = make_texture(grid, rng);
    c.truth = make_truth(grid, deform_scale, n_blobs, rng);
    c.fixed = warp(c.moving, c.truth);

    const auto pixels = pick_landmark_pixels(c.fixed, c.truth, n_landmarks, rng);
    for (std::size_t i : pixels) {
        const double x = grid.coords_x[i];
        const double y = grid.coords_y[i];
        double du, dv;
        sample_field(c.truth, x, y, du, dv);
        c.lm_fixed.push_back({x, y});
        c.lm_moving.push_back({x + du, y + dv});
    }
    return c;
}

void save_landmarks_csv(const std::filesystem::path& path,
                        const std::vector<std::array<double, 2>>& normalized,
                        const Grid2D& grid) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    out.precision(17);
    for (const auto& lm : normalized) {
        const double px = (lm[0] + 1.0) * 0.5 * (grid.width - 1);
        const double py = (lm[1] + 1.0) * 0.5 * (grid.height - 1);
        out << px << "," << py << "\n";
    }
    if (!out) throw io_error("write failed: " + path.string());
}

std::vector<std::array<double, 2>> load_landmarks_csv(const std::filesystem::path& path,
                                                      const Grid2D& grid) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open: " + path.string());
    std::vector<std::array<double, 2>> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        double px = 0.0, py = 0.0;
        char comma = 0;
        std::istringstream row(line);
        if (!(row >> px >> comma >> py) || comma != ',')
            throw validation_error("bad landmark row in " + path.string() + ": " + line);
        out.push_back({2.0 * px / (grid.width - 1) - 1.0, 2.0 * py / (grid.height - 1) - 1.0});
    }
    return out;
}

void save_case(const SyntheticCase& c, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_pgm(c.fixed, dir / "fixed.pgm");
    save_pgm(c.moving, dir / "moving.pgm");
    save_field(c.truth, dir / "truth.r2nf");
    save_landmarks_csv(dir / "landmarks_fixed.csv", c.lm_fixed, c.fixed.grid);
    save_landmarks_csv(dir / "landmarks_moving.csv", c.lm_moving, c.fixed.grid);
}

SyntheticCase load_case(const std::filesystem::path& dir) {
    SyntheticCase c;
    c.fixed = load_pgm(dir / "fixed.pgm");
    c.moving = load_pgm(dir / "moving.pgm");
    c.truth = load_field(dir / "truth.r2nf");
    if (!c.fixed.grid.same_extent(c.moving.grid) || !c.fixed.grid.same_extent(c.truth.grid))
        throw validation_error("case " + dir.string() + ": inconsistent resolutions");
    c.lm_fixed = load_landmarks_csv(dir / "landmarks_fixed.csv", c.fixed.grid);
    c.lm_moving = load_landmarks_csv(dir / "landmarks_moving.csv", c.fixed.grid);
    if (c.lm_fixed.size() != c.lm_moving.size())
        throw validation_error("case " + dir.string() + ": landmark count mismatch");
    return c;
}

}  // namespace r2n2::data
