#include "conviction/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace conviction {

RealImage rss(const CoilStack& u) {
    u.validate();
    RealImage out(u.height(), u.width());
    for (const ComplexImage& coil : u.coils)
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += std::norm(coil.data[i]);
    for (double& v : out.data) v = std::sqrt(v);
    return out;
}

double ssim_mean(const RealImage& x, const RealImage& ref, const MetricsOptions& opt,
                 RealImage* grad_x) {
    const int h = x.height, w = x.width;
    double L = 0.0;
    for (double v : ref.data) L = std::max(L, std::abs(v));
    const double C1 = (opt.k1 * L) * (opt.k1 * L);
    const double C2 = (opt.k2 * L) * (opt.k2 * L);
    int win = opt.ssim_window;
    if (win > h || win > w) win = std::min(h, w);  // whole-image fallback
    const int nwr = h - win + 1, nwc = w - win + 1;
    const double npix = static_cast<double>(win) * win;
    const double nwin = static_cast<double>(nwr) * nwc;

    if (grad_x) {
        grad_x->height = h;
        grad_x->width = w;
        grad_x->data.assign(static_cast<size_t>(h) * w, 0.0);
    }

    KahanSum total;
    for (int r0 = 0; r0 < nwr; ++r0) {
        for (int c0 = 0; c0 < nwc; ++c0) {
            double sx = 0, sy = 0;
            for (int r = r0; r < r0 + win; ++r)
                for (int c = c0; c < c0 + win; ++c) {
                    sx += x.at(r, c);
                    sy += ref.at(r, c);
                }
            const double mx = sx / npix, my = sy / npix;
            double vx = 0, vy = 0, cov = 0;
            for (int r = r0; r < r0 + win; ++r)
                for (int c = c0; c < c0 + win; ++c) {
                    const double dx = x.at(r, c) - mx, dy = ref.at(r, c) - my;
                    vx += dx * dx;
                    vy += dy * dy;
                    cov += dx * dy;
                }
            vx /= npix;
            vy /= npix;
            cov /= npix;
            const double a1 = 2 * mx * my + C1, a2 = 2 * cov + C2;
            const double b1 = mx * mx + my * my + C1, b2 = vx + vy + C2;
            const double S = (a1 * a2) / (b1 * b2);
            total.add(S);
            if (grad_x) {
                // dS/dx_i with dmx/dx_i = 1/n, dvx/dx_i = 2(x_i-mx)/n,
                // dcov/dx_i = (y_i-my)/n
                for (int r = r0; r < r0 + win; ++r)
                    for (int c = c0; c < c0 + win; ++c) {
                        const double dx = x.at(r, c) - mx, dy = ref.at(r, c) - my;
                        const double dnum = (2 * my / npix) * a2 + a1 * (2 * dy / npix);
                        double g = dnum / (b1 * b2) -
                                   S * ((2 * mx / npix) / b1 + (2 * dx / npix) / b2);
                        grad_x->at(r, c) += g / nwin;
                    }
            }
        }
    }
    return total.value() / nwin;
}

MetricsReport metrics(const ComplexImage& x, const ComplexImage& ref, const MetricsOptions& opt) {
    if (!x.same_shape(ref)) throw std::invalid_argument("metrics: dimension mismatch");
    bool ref_zero = true;
    for (const c64& z : ref.data)
        if (z != c64(0, 0)) { ref_zero = false; break; }
    if (ref_zero) throw std::invalid_argument("metrics: all-zero reference");

    const size_t n = x.data.size();
    double max_ref = 0.0;
    KahanSum err2, x2, ref2;
    for (size_t i = 0; i < n; ++i) {
        max_ref = std::max(max_ref, std::abs(ref.data[i]));
        err2.add(std::norm(x.data[i] - ref.data[i]));
        x2.add(std::norm(x.data[i]));
        ref2.add(std::norm(ref.data[i]));
    }
    MetricsReport rep;
    const double mse = err2.value() / static_cast<double>(n);
    rep.psnr = mse == 0.0 ? std::numeric_limits<double>::infinity()
                          : 20.0 * std::log10(max_ref / std::sqrt(mse));
    const double den = opt.nmse_reference_denominator ? ref2.value() : x2.value();
    rep.nmse = err2.value() == 0.0
                   ? 0.0
                   : (den == 0.0 ? std::numeric_limits<double>::infinity() : err2.value() / den);
    rep.rmse = std::sqrt(err2.value()) / std::sqrt(ref2.value());

    RealImage xm(x.height, x.width), rm(x.height, x.width);
    for (size_t i = 0; i < n; ++i) {
        xm.data[i] = std::abs(x.data[i]);
        rm.data[i] = std::abs(ref.data[i]);
    }
    rep.ssim = ssim_mean(xm, rm, opt);
    return rep;
}

}  // namespace conviction
