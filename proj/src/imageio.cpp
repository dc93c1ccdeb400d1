#include "conviction/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace conviction {

namespace {

// On-disk layout is little-endian; this code assumes a little-endian host
// (the supported platforms here all are).
void put_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t get_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

}  // namespace

void write_cimg(const std::string& path, const ComplexImage& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.write("CIMG", 4);
    put_u32(f, static_cast<uint32_t>(img.height));
    put_u32(f, static_cast<uint32_t>(img.width));
    put_u32(f, 0);
    for (const c64& z : img.data) {
        const double re = z.real(), im = z.imag();
        f.write(reinterpret_cast<const char*>(&re), 8);
        f.write(reinterpret_cast<const char*>(&im), 8);
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

ComplexImage read_cimg(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "CIMG", 4) != 0)
        throw std::runtime_error("not a CIMG file: " + path);
    const uint32_t h = get_u32(f), w = get_u32(f);
    get_u32(f);  // reserved
    if (h == 0 || w == 0 || h > (1u << 20) || w > (1u << 20))
        throw std::runtime_error("CIMG header out of range: " + path);
    ComplexImage img(static_cast<int>(h), static_cast<int>(w));
    for (c64& z : img.data) {
        double re = 0, im = 0;
        f.read(reinterpret_cast<char*>(&re), 8);
        f.read(reinterpret_cast<char*>(&im), 8);
        z = c64(re, im);
    }
    if (!f) throw std::runtime_error("CIMG truncated: " + path);
    return img;
}

void write_pgm_magnitude(const std::string& path, const ComplexImage& img) {
    double peak = 0.0;
    for (const c64& z : img.data) peak = std::max(peak, std::abs(z));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << "P5\n" << img.width << " " << img.height << "\n255\n";
    for (const c64& z : img.data) {
        const double v = peak > 0 ? std::abs(z) / peak : 0.0;
        const int byte = std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, 255);
        f.put(static_cast<char>(byte));
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

void write_pbm(const std::string& path, const SamplingMask& mask) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << "P4\n" << mask.width << " " << mask.height << "\n";
    const int row_bytes = (mask.width + 7) / 8;
    for (int r = 0; r < mask.height; ++r) {
        for (int b = 0; b < row_bytes; ++b) {
            unsigned char byte = 0;
            for (int bit = 0; bit < 8; ++bit) {
                const int c = b * 8 + bit;
                if (c < mask.width && mask.at(r, c)) byte |= static_cast<unsigned char>(0x80 >> bit);
            }
            f.put(static_cast<char>(byte));
        }
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace conviction
