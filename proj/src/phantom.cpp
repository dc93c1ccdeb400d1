#include "conviction/phantom.hpp"

#include <cmath>
#include <stdexcept>

namespace conviction {

namespace {

struct Ellipse {
    double cx, cy, ax, ay, angle_deg, intensity;
};

// The classic Shepp-Logan table and the high-contrast (modified) variant.
std::vector<Ellipse> ellipse_table(PhantomVariant v) {
    if (v == PhantomVariant::Classic)
        return {
            {0.0, 0.0, 0.69, 0.92, 0.0, 2.0},
            {0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98},
            {0.22, 0.0, 0.11, 0.31, -18.0, -0.02},
            {-0.22, 0.0, 0.16, 0.41, 18.0, -0.02},
            {0.0, 0.35, 0.21, 0.25, 0.0, 0.01},
            {0.0, 0.1, 0.046, 0.046, 0.0, 0.01},
            {0.0, -0.1, 0.046, 0.046, 0.0, 0.01},
            {-0.08, -0.605, 0.046, 0.023, 0.0, 0.01},
            {0.0, -0.605, 0.023, 0.023, 0.0, 0.01},
            {0.06, -0.605, 0.023, 0.046, 0.0, 0.01},
        };
    return {
        {0.0, 0.0, 0.69, 0.92, 0.0, 1.0},
        {0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8},
        {0.22, 0.0, 0.11, 0.31, -18.0, -0.2},
        {-0.22, 0.0, 0.16, 0.41, 18.0, -0.2},
        {0.0, 0.35, 0.21, 0.25, 0.0, 0.1},
        {0.0, 0.1, 0.046, 0.046, 0.0, 0.1},
        {0.0, -0.1, 0.046, 0.046, 0.0, 0.1},
        {-0.08, -0.605, 0.046, 0.023, 0.0, 0.1},
        {0.0, -0.605, 0.023, 0.023, 0.0, 0.1},
        {0.06, -0.605, 0.023, 0.046, 0.0, 0.1},
    };
}

ComplexImage render(int n, const std::vector<Ellipse>& ellipses) {
    if (n < 8) throw std::invalid_argument("shepp_logan: n must be at least 8");
    ComplexImage img(n, n);
    const double deg = 3.141592653589793238462643 / 180.0;
    for (int r = 0; r < n; ++r) {
        // pixel centers mapped to [-1, 1]; y grows upward
        const double y = 1.0 - 2.0 * (r + 0.5) / n;
        for (int c = 0; c < n; ++c) {
            const double x = 2.0 * (c + 0.5) / n - 1.0;
            double v = 0.0;
            for (const Ellipse& e : ellipses) {
                const double ca = std::cos(e.angle_deg * deg), sa = std::sin(e.angle_deg * deg);
                const double xr = (x - e.cx) * ca + (y - e.cy) * sa;
                const double yr = -(x - e.cx) * sa + (y - e.cy) * ca;
                if (xr * xr / (e.ax * e.ax) + yr * yr / (e.ay * e.ay) <= 1.0) v += e.intensity;
            }
            img.at(r, c) = c64(v, 0.0);
        }
    }
    double peak = 0.0;
    for (const c64& z : img.data) peak = std::max(peak, std::abs(z));
    if (peak > 0.0)
        for (c64& z : img.data) z /= peak;
    return img;
}

}  // namespace

PhantomVariant phantom_variant_from_string(const std::string& s) {
    if (s == "classic") return PhantomVariant::Classic;
    if (s == "high-contrast") return PhantomVariant::HighContrast;
    throw std::invalid_argument("unknown phantom variant: " + s);
}

ComplexImage shepp_logan(int n, PhantomVariant variant) { return render(n, ellipse_table(variant)); }

ComplexImage shepp_logan_variant(int n, PhantomVariant variant, Rng& rng) {
    auto table = ellipse_table(variant);
    for (Ellipse& e : table) {
        e.intensity *= rng.uniform(0.8, 1.2);
        e.cx += rng.uniform(-0.03, 0.03);
        e.cy += rng.uniform(-0.03, 0.03);
        e.ax *= rng.uniform(0.9, 1.1);
        e.ay *= rng.uniform(0.9, 1.1);
        e.angle_deg += rng.uniform(-6.0, 6.0);
    }
    return render(n, table);
}

}  // namespace conviction
