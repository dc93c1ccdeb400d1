#include <doctest.h>

#include <cstring>

#include "conviction/kernels.hpp"
#include "test_support.hpp"

using namespace conviction;
using namespace conviction::testing;
namespace K = conviction::kernels;

namespace {

// O(n^2) DFT straight from the definition; the oracle for the fast transform.
std::vector<c64> naive_dft(const std::vector<c64>& x, bool inverse) {
    const size_t n = x.size();
    std::vector<c64> out(n);
    const double sign = inverse ? 1.0 : -1.0;
    for (size_t k = 0; k < n; ++k) {
        c64 acc(0, 0);
        for (size_t j = 0; j < n; ++j) {
            const double ang = sign * 2.0 * 3.14159265358979323846 * k * j / n;
            acc += x[j] * c64(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    return out;
}

// naive direct convolution (cross-correlation, same padding)
std::vector<c64> naive_conv(const std::vector<c64>& x, int in_ch, int h, int w,
                            const std::vector<c64>& wts, int out_ch, int k, K::ConvMode mode) {
    std::vector<c64> y(static_cast<size_t>(out_ch) * h * w, c64(0, 0));
    const int off = k / 2;
    for (int o = 0; o < out_ch; ++o)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                c64 acc(0, 0);
                for (int i = 0; i < in_ch; ++i)
                    for (int dr = 0; dr < k; ++dr)
                        for (int dc = 0; dc < k; ++dc) {
                            const int rr = r + dr - off, cc = c + dc - off;
                            if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                            const c64 wv = wts[((static_cast<size_t>(o) * in_ch + i) * k + dr) * k + dc];
                            const c64 xv = x[(static_cast<size_t>(i) * h + rr) * w + cc];
                            if (mode == K::ConvMode::Complex)
                                acc += wv * xv;
                            else
                                acc += c64(wv.real() * xv.real(), wv.imag() * xv.imag());
                        }
                y[(static_cast<size_t>(o) * h + r) * w + c] = acc;
            }
    return y;
}

}  // namespace

TEST_CASE("fft2d matches the naive DFT definition") {
    Rng rng(42);
    for (int n : {8, 16, 12, 20}) {  // power-of-two and Bluestein paths
        std::vector<c64> row(n);
        for (c64& z : row) z = c64(rng.uniform(-1, 1), rng.uniform(-1, 1));
        std::vector<c64> want = naive_dft(row, false);
        // fft2d on a 1 x n image is a single row transform scaled by 1/sqrt(n)
        std::vector<c64> got = row;
        K::fft2d(got.data(), 1, n, false);
        const double scale = std::sqrt(static_cast<double>(n));
        double worst = 0.0;
        for (int i = 0; i < n; ++i) worst = std::max(worst, std::abs(got[i] * scale - want[i]));
        CHECK(worst < 1e-11);
    }
}

TEST_CASE("fft2d round trip and unitarity") {
    Rng rng(7);
    for (auto [h, w] : std::vector<std::pair<int, int>>{{8, 8}, {12, 20}, {9, 7}}) {
        std::vector<c64> x(static_cast<size_t>(h) * w);
        for (c64& z : x) z = c64(rng.uniform(-1, 1), rng.uniform(-1, 1));
        std::vector<c64> y = x;
        K::fft2d(y.data(), h, w, false);
        CHECK(std::abs(norm2(y) - norm2(x)) < 1e-11);
        K::fft2d(y.data(), h, w, true);
        CHECK(max_abs_diff(x, y) < 1e-12);
    }
}

TEST_CASE("parallel and serial kernels produce identical bits") {
    Rng rng(9);
    const int in_ch = 3, out_ch = 4, h = 13, w = 11, k = 3;
    std::vector<c64> x(static_cast<size_t>(in_ch) * h * w), wts(static_cast<size_t>(out_ch) * in_ch * k * k);
    for (c64& z : x) z = c64(rng.uniform(-1, 1), rng.uniform(-1, 1));
    for (c64& z : wts) z = c64(rng.uniform(-1, 1), rng.uniform(-1, 1));
    for (K::ConvMode mode : {K::ConvMode::Complex, K::ConvMode::SplitReal}) {
        std::vector<c64> yp(static_cast<size_t>(out_ch) * h * w), ys = yp;
        K::conv2d_forward(x.data(), in_ch, h, w, wts.data(), out_ch, k, yp.data(), mode);
        K::serial::conv2d_forward(x.data(), in_ch, h, w, wts.data(), out_ch, k, ys.data(), mode);
        CHECK(std::memcmp(yp.data(), ys.data(), yp.size() * sizeof(c64)) == 0);

        std::vector<c64> cxp(static_cast<size_t>(in_ch) * h * w), cxs = cxp;
        K::conv2d_adjoint_input(yp.data(), out_ch, h, w, wts.data(), in_ch, k, cxp.data(), mode);
        K::serial::conv2d_adjoint_input(yp.data(), out_ch, h, w, wts.data(), in_ch, k, cxs.data(), mode);
        CHECK(std::memcmp(cxp.data(), cxs.data(), cxp.size() * sizeof(c64)) == 0);

        std::vector<c64> gwp(wts.size()), gws(wts.size());
        K::conv2d_weight_grad(x.data(), in_ch, yp.data(), out_ch, h, w, k, gwp.data(), mode);
        K::serial::conv2d_weight_grad(x.data(), in_ch, yp.data(), out_ch, h, w, k, gws.data(), mode);
        CHECK(std::memcmp(gwp.data(), gws.data(), gwp.size() * sizeof(c64)) == 0);
    }
    std::vector<c64> fp = x, fsr = x;
    K::fft2d(fp.data(), in_ch * h, w, false);
    K::serial::fft2d(fsr.data(), in_ch * h, w, false);
    CHECK(std::memcmp(fp.data(), fsr.data(), fp.size() * sizeof(c64)) == 0);
}

TEST_CASE("conv2d_forward matches the naive loop") {
    Rng rng(5);
    const int in_ch = 2, out_ch = 3, h = 6, w = 5, k = 3;
    std::vector<c64> x(static_cast<size_t>(in_ch) * h * w), wts(static_cast<size_t>(out_ch) * in_ch * k * k);
    for (c64& z : x) z = c64(rng.uniform(-1, 1), rng.uniform(-1, 1));
    for (c64& z : wts) z = c64(rng.uniform(-1, 1), rng.uniform(-1, 1));
    for (K::ConvMode mode : {K::ConvMode::Complex, K::ConvMode::SplitReal}) {
        std::vector<c64> got(static_cast<size_t>(out_ch) * h * w);
        K::conv2d_forward(x.data(), in_ch, h, w, wts.data(), out_ch, k, got.data(), mode);
        std::vector<c64> want = naive_conv(x, in_ch, h, w, wts, out_ch, k, mode);
        CHECK(max_abs_diff(got, want) < 1e-13);
    }
}

TEST_CASE("conv adjoint satisfies the dot-product identity") {
    Rng rng(13);
    const int in_ch = 2, out_ch = 3, h = 7, w = 6, k = 3;
    std::vector<c64> x(static_cast<size_t>(in_ch) * h * w), wts(static_cast<size_t>(out_ch) * in_ch * k * k),
        cot(static_cast<size_t>(out_ch) * h * w);
    for (c64& z : x) z = c64(rng.uniform(-1, 1), rng.uniform(-1, 1));
    for (c64& z : wts) z = c64(rng.uniform(-1, 1), rng.uniform(-1, 1));
    for (c64& z : cot) z = c64(rng.uniform(-1, 1), rng.uniform(-1, 1));
    for (K::ConvMode mode : {K::ConvMode::Complex, K::ConvMode::SplitReal}) {
        std::vector<c64> y(cot.size());
        K::conv2d_forward(x.data(), in_ch, h, w, wts.data(), out_ch, k, y.data(), mode);
        std::vector<c64> cx(x.size());
        K::conv2d_adjoint_input(cot.data(), out_ch, h, w, wts.data(), in_ch, k, cx.data(), mode);
        CHECK(std::abs(dot_re(cot, y) - dot_re(cx, x)) < 1e-10);

        // weight-grad is the gradient of <cot, W*x>_Re in the flat pairing
        std::vector<c64> gw(wts.size());
        K::conv2d_weight_grad(x.data(), in_ch, cot.data(), out_ch, h, w, k, gw.data(), mode);
        CHECK(std::abs(dot_re(cot, y) - dot_re(gw, wts)) < 1e-10);
    }
}

TEST_CASE("smooth_relu scalar pieces") {
    const double d = 0.01;
    CHECK(K::smooth_relu_scalar(2 * d, d) == doctest::Approx(2 * d));
    CHECK(K::smooth_relu_scalar(0.0, d) == doctest::Approx(d / 4));
    CHECK(K::smooth_relu_deriv_scalar(0.0, d) == doctest::Approx(0.5));
    CHECK(K::smooth_relu_scalar(-2 * d, d) == 0.0);
    CHECK(K::smooth_relu_deriv_scalar(5 * d, d) == 1.0);
}
