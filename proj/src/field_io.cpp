#include "r2n2/field_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "r2n2/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "field containers assume a little-endian host");

namespace r2n2 {
namespace {

constexpr char kFieldMagic[4] = {'R', '2', 'N', 'F'};

void write_f32(std::ofstream& out, const std::vector<double>& src) {
    std::vector<float> buf(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) buf[i] = (float)src[i];
    out.write(reinterpret_cast<const char*>(buf.data()), (std::streamsize)(buf.size() * 4));
}

std::vector<double> read_f32(std::ifstream& in, std::size_t n, const std::string& path) {
    std::vector<float> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), (std::streamsize)(n * 4));
    if (!in) throw io_error("truncated field file: " + path);
    return std::vector<double>(buf.begin(), buf.end());
}

}  // namespace

void save_field(const DisplacementField& f, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    out.write(kFieldMagic, 4);
    const std::uint32_t h = (std::uint32_t)f.grid.height;
    const std::uint32_t w = (std::uint32_t)f.grid.width;
    out.write(reinterpret_cast<const char*>(&h), 4);
    out.write(reinterpret_cast<const char*>(&w), 4);
    write_f32(out, f.u);
    write_f32(out, f.v);
    if (!out) throw io_error("write failed: " + path.string());
}

DisplacementField load_field(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kFieldMagic, 4) != 0)
        throw io_error("not an R2NF field file: " + path.string());
    std::uint32_t h = 0, w = 0;
    in.read(reinterpret_cast<char*>(&h), 4);
    in.read(reinterpret_cast<char*>(&w), 4);
    if (!in || h < 2 || w < 2) throw io_error("bad field header: " + path.string());
    DisplacementField f;
    f.grid = make_grid((int)h, (int)w);
    f.u = read_f32(in, f.grid.pixels(), path.string());
    f.v = read_f32(in, f.grid.pixels(), path.string());
    return f;
}

void save_pgm(const Image2D& img, const std::filesystem::path& path, int bits) {
    if (bits != 8 && bits != 16) throw std::invalid_argument("save_pgm: bits must be 8 or 16");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    const int maxval = bits == 8 ? 255 : 65535;
    out << "P5\n" << img.grid.width << " " << img.grid.height << "\n" << maxval << "\n";
    for (double v : img.values) {
        const double clamped = std::clamp(v, 0.0, 1.0);
        const unsigned q = (unsigned)std::lround(clamped * maxval);
        if (bits == 8) {
            out.put((char)q);
        } else {
            out.put((char)(q >> 8));  // PGM 16-bit is big-endian
            out.put((char)(q & 0xff));
        }
    }
    if (!out) throw io_error("write failed: " + path.string());
}

Image2D load_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open: " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P5") throw io_error("not a binary PGM (P5): " + path.string());
    auto next_int = [&in, &path]() {
        // skip whitespace and '#' comment lines
        for (;;) {
            int c = in.peek();
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        long v = -1;
        in >> v;
        if (!in || v < 0) throw io_error("bad PGM header: " + path.string());
        return v;
    };
    const long w = next_int();
    const long h = next_int();
    const long maxval = next_int();
    if (w < 2 || h < 2 || (maxval != 255 && maxval != 65535))
        throw io_error("unsupported PGM geometry/depth: " + path.string());
    in.get();  // single whitespace after maxval
    Image2D img;
    img.grid = make_grid((int)h, (int)w);
    img.values.resize(img.grid.pixels());
    const std::size_t n = img.values.size();
    if (maxval == 255) {
        std::vector<unsigned char> buf(n);
        in.read(reinterpret_cast<char*>(buf.data()), (std::streamsize)n);
        if (!in) throw io_error("truncated PGM: " + path.string());
        for (std::size_t i = 0; i < n; ++i) img.values[i] = buf[i] / 255.0;
    } else {
        std::vector<unsigned char> buf(2 * n);
        in.read(reinterpret_cast<char*>(buf.data()), (std::streamsize)(2 * n));
        if (!in) throw io_error("truncated PGM: " + path.string());
        for (std::size_t i = 0; i < n; ++i) {
            const unsigned q = ((unsigned)buf[2 * i] << 8) | buf[2 * i + 1];
            img.values[i] = q / 65535.0;
        }
    }
    return img;
}

}  // namespace r2n2
