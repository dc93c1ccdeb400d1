#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace conviction {

using c64 = std::complex<double>;

/// 2D complex-valued image, row-major, double precision.
struct ComplexImage {
    int height = 0;
    int width = 0;
    std::vector<c64> data;

    ComplexImage() = default;
    ComplexImage(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w) {
        if (h <= 0 || w <= 0) throw std::invalid_argument("ComplexImage: dimensions must be positive");
    }

    c64& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
    const c64& at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }
    size_t size() const { return data.size(); }
    bool same_shape(const ComplexImage& o) const { return height == o.height && width == o.width; }
};

/// 2D real-valued image, row-major.
struct RealImage {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    RealImage() = default;
    RealImage(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0.0) {}
    double& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
    const double& at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }
};

/// Multi-coil image stack; all coils share (height, width).
struct CoilStack {
    std::vector<ComplexImage> coils;

    CoilStack() = default;
    explicit CoilStack(std::vector<ComplexImage> cs) : coils(std::move(cs)) { validate(); }
    CoilStack(int count, int h, int w) : coils(count, ComplexImage(h, w)) {}

    int count() const { return static_cast<int>(coils.size()); }
    int height() const { return coils.empty() ? 0 : coils[0].height; }
    int width() const { return coils.empty() ? 0 : coils[0].width; }

    void validate() const {
        if (coils.empty()) throw std::invalid_argument("CoilStack: empty stack");
        for (const auto& c : coils)
            if (!c.same_shape(coils[0])) throw std::invalid_argument("CoilStack: coil shape mismatch");
    }
};

/// Feature tensor with d channel planes over an h x w grid.
/// Position j = r*width + c; "row j" is the d-vector across channel planes.
struct FeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<c64> data;  // channel-major planes, each height*width

    FeatureMap() = default;
    FeatureMap(int d, int h, int w)
        : channels(d), height(h), width(w), data(static_cast<size_t>(d) * h * w) {}

    int positions() const { return height * width; }
    c64& at(int ch, int pos) { return data[static_cast<size_t>(ch) * height * width + pos]; }
    const c64& at(int ch, int pos) const { return data[static_cast<size_t>(ch) * height * width + pos]; }
    c64* plane(int ch) { return data.data() + static_cast<size_t>(ch) * height * width; }
    const c64* plane(int ch) const { return data.data() + static_cast<size_t>(ch) * height * width; }
    bool same_shape(const FeatureMap& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

struct MetricsReport {
    double psnr = 0.0;  // dB; +infinity when images are identical
    double ssim = 0.0;
    double nmse = 0.0;
    double rmse = 0.0;
};

// Kahan-compensated accumulator. Objective values feed 1e-12-level descent
// certificates, plain summation noise at m ~ 1e3 terms would already be 1e-11.
struct KahanSum {
    double s = 0.0, c = 0.0;
    void add(double x) {
        double y = x - c;
        double t = s + y;
        c = (t - s) - y;
        s = t;
    }
    double value() const { return s; }
};

inline double norm2_sq(const std::vector<c64>& v) {
    KahanSum k;
    for (const auto& z : v) k.add(std::norm(z));
    return k.value();
}

inline double norm2(const std::vector<c64>& v) { return std::sqrt(norm2_sq(v)); }

// Real inner product of complex arrays viewed as interleaved reals:
// sum_i Re(a_i)Re(b_i) + Im(a_i)Im(b_i) = Re<a, b>.
inline double dot_re(const std::vector<c64>& a, const std::vector<c64>& b) {
    KahanSum k;
    for (size_t i = 0; i < a.size(); ++i)
        k.add(a[i].real() * b[i].real() + a[i].imag() * b[i].imag());
    return k.value();
}

inline bool all_finite(const std::vector<c64>& v) {
    for (const auto& z : v)
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
    return true;
}

}  // namespace conviction
