#include "r2n2/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "r2n2/errors.hpp"
#include "r2n2/evalkit.hpp"
#include "r2n2/field_io.hpp"

namespace r2n2::evalkit {

void save_magnitude_heatmap(const DisplacementField& f, const std::filesystem::path& path) {
    Image2D img = make_image(f.grid);
    double peak = 0.0;
    for (std::size_t i = 0; i < f.grid.pixels(); ++i) {
        img.values[i] = std::hypot(f.u[i], f.v[i]);
        peak = std::max(peak, img.values[i]);
    }
    if (peak > 0.0)
        for (double& v : img.values) v /= peak;
    save_pgm(img, path, 8);
}

void save_quiver_svg(const DisplacementField& f, const std::filesystem::path& path, int stride) {
    if (stride < 1) throw std::invalid_argument("save_quiver_svg: stride must be >= 1");
    std::ofstream out(path);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    const int h = f.grid.height, w = f.grid.width;
    const int cell = 8;  // svg pixels per image pixel step of `stride`
    const double sw = (double)cell / stride;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << (int)(w * sw) << "\" height=\""
        << (int)(h * sw) << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    out << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"#fafafa\"/>\n";
    const double scale_x = 0.5 * (w - 1);  // normalized displacement -> pixels
    const double scale_y = 0.5 * (h - 1);
    out.precision(4);
    for (int y = stride / 2; y < h; y += stride) {
        for (int x = stride / 2; x < w; x += stride) {
            const std::size_t i = (std::size_t)y * w + x;
            const double dx = f.u[i] * scale_x;
            const double dy = f.v[i] * scale_y;
            if (std::hypot(dx, dy) < 1e-3) {
                out << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"0.15\" fill=\"#999\"/>\n";
                continue;
            }
            out << "<line x1=\"" << x << "\" y1=\"" << y << "\" x2=\"" << x + dx << "\" y2=\""
                << y + dy << "\" stroke=\"#c0392b\" stroke-width=\"0.3\"/>\n";
            out << "<circle cx=\"" << x + dx << "\" cy=\"" << y + dy
                << "\" r=\"0.35\" fill=\"#c0392b\"/>\n";
        }
    }
    out << "</svg>\n";
    if (!out) throw io_error("write failed: " + path.string());
}

void save_tre_bars_svg(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    const int n = (int)report.cases.size();
    const int group_w = 26, bar_w = 7, margin = 50, height = 240, plot_h = 180;
    const int width = margin * 2 + n * group_w;
    double peak = 1e-9;
    for (const CaseResult& c : report.cases)
        peak = std::max({peak, c.pre.mean_px, c.r2n2.mean_px, c.bspline.mean_px});
    auto bar_y = [&](double v) { return 20 + plot_h - (int)std::lround(plot_h * v / peak); };
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n";
    out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    out << "<line x1=\"" << margin - 5 << "\" y1=\"" << 20 + plot_h << "\" x2=\""
        << width - margin + 5 << "\" y2=\"" << 20 + plot_h
        << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    out << "<text x=\"4\" y=\"16\" font-size=\"10\">mean TRE [px]  (peak " << peak
        << ")</text>\n";
    const char* colors[3] = {"#888888", "#2c6fbb", "#2e8b57"};
    const char* labels[3] = {"pre", "r2n2", "bspline"};
    for (int s = 0; s < 3; ++s)
        out << "<rect x=\"" << margin + s * 60 << "\" y=\"" << height - 14
            << "\" width=\"8\" height=\"8\" fill=\"" << colors[s] << "\"/><text x=\""
            << margin + s * 60 + 12 << "\" y=\"" << height - 6 << "\" font-size=\"9\">"
            << labels[s] << "</text>\n";
    for (int i = 0; i < n; ++i) {
        const CaseResult& c = report.cases[(std::size_t)i];
        const double vals[3] = {c.pre.mean_px, c.r2n2.mean_px, c.bspline.mean_px};
        for (int s = 0; s < 3; ++s) {
            const int x = margin + i * group_w + s * bar_w;
            const int y = bar_y(vals[s]);
            out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar_w - 1
                << "\" height=\"" << 20 + plot_h - y << "\" fill=\"" << colors[s] << "\"/>\n";
        }
    }
    out << "</svg>\n";
    if (!out) throw io_error("write failed: " + path.string());
}

}  // namespace r2n2::evalkit
