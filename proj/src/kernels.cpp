#include "conviction/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace conviction::kernels {

namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_max_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

void configure_threads_from_env() {
    const char* v = std::getenv("CONVICTION_THREADS");
    if (!v) return;
    int n = std::atoi(v);
    if (n > 0) set_max_threads(n);
}

double smooth_relu_scalar(double x, double delta) {
    if (x <= -delta) return 0.0;
    if (x >= delta) return x;
    return x * x / (4.0 * delta) + 0.5 * x + 0.25 * delta;
}

double smooth_relu_deriv_scalar(double x, double delta) {
    if (x <= -delta) return 0.0;
    if (x >= delta) return 1.0;
    return x / (2.0 * delta) + 0.5;
}

double smooth_relu_second_deriv_scalar(double x, double delta) {
    if (x <= -delta || x >= delta) return 0.0;
    return 1.0 / (2.0 * delta);
}

namespace {

// ---------------------------------------------------------------------------
// Convolution cores. `par` toggles the OpenMP team; the arithmetic (and hence
// the bit pattern of the result) is identical either way: every output element
// is accumulated by exactly one thread in a fixed serial order.
// ---------------------------------------------------------------------------

void conv_forward_core(const c64* x, int in_ch, int h, int w,
                       const c64* wts, int out_ch, int k, c64* y, ConvMode mode, bool par) {
    if (k % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
    const int off = k / 2;
    const size_t plane = static_cast<size_t>(h) * w;
    const long total = static_cast<long>(out_ch) * h;
#pragma omp parallel for if (par) schedule(static)
    for (long t = 0; t < total; ++t) {
        const int o = static_cast<int>(t / h);
        const int r = static_cast<int>(t % h);
        for (int c = 0; c < w; ++c) {
            double acc_re = 0.0, acc_im = 0.0;
            for (int i = 0; i < in_ch; ++i) {
                const c64* xi = x + static_cast<size_t>(i) * plane;
                const c64* wk = wts + (static_cast<size_t>(o) * in_ch + i) * k * k;
                for (int dr = 0; dr < k; ++dr) {
                    const int rr = r + dr - off;
                    if (rr < 0 || rr >= h) continue;
                    for (int dc = 0; dc < k; ++dc) {
                        const int cc = c + dc - off;
                        if (cc < 0 || cc >= w) continue;
                        const c64 wv = wk[dr * k + dc];
                        const c64 xv = xi[static_cast<size_t>(rr) * w + cc];
                        if (mode == ConvMode::Complex) {
                            acc_re += wv.real() * xv.real() - wv.imag() * xv.imag();
                            acc_im += wv.real() * xv.imag() + wv.imag() * xv.real();
                        } else {
                            acc_re += wv.real() * xv.real();
                            acc_im += wv.imag() * xv.imag();
                        }
                    }
                }
            }
            y[static_cast<size_t>(o) * plane + static_cast<size_t>(r) * w + c] = c64(acc_re, acc_im);
        }
    }
}

void conv_adjoint_core(const c64* cot_y, int out_ch, int h, int w,
                       const c64* wts, int in_ch, int k, c64* cot_x, ConvMode mode, bool par) {
    const int off = k / 2;
    const size_t plane = static_cast<size_t>(h) * w;
    const long total = static_cast<long>(in_ch) * h;
#pragma omp parallel for if (par) schedule(static)
    for (long t = 0; t < total; ++t) {
        const int i = static_cast<int>(t / h);
        const int r = static_cast<int>(t % h);
        for (int c = 0; c < w; ++c) {
            double acc_re = 0.0, acc_im = 0.0;
            for (int o = 0; o < out_ch; ++o) {
                const c64* co = cot_y + static_cast<size_t>(o) * plane;
                const c64* wk = wts + (static_cast<size_t>(o) * in_ch + i) * k * k;
                for (int dr = 0; dr < k; ++dr) {
                    const int rr = r - dr + off;
                    if (rr < 0 || rr >= h) continue;
                    for (int dc = 0; dc < k; ++dc) {
                        const int cc = c - dc + off;
                        if (cc < 0 || cc >= w) continue;
                        const c64 wv = wk[dr * k + dc];
                        const c64 cv = co[static_cast<size_t>(rr) * w + cc];
                        if (mode == ConvMode::Complex) {
                            // conj(w) * cot
                            acc_re += wv.real() * cv.real() + wv.imag() * cv.imag();
                            acc_im += wv.real() * cv.imag() - wv.imag() * cv.real();
                        } else {
                            acc_re += wv.real() * cv.real();
                            acc_im += wv.imag() * cv.imag();
                        }
                    }
                }
            }
            cot_x[static_cast<size_t>(i) * plane + static_cast<size_t>(r) * w + c] = c64(acc_re, acc_im);
        }
    }
}

void conv_wgrad_core(const c64* x, int in_ch, const c64* cot_y, int out_ch,
                     int h, int w, int k, c64* gw, ConvMode mode, bool par) {
    const int off = k / 2;
    const size_t plane = static_cast<size_t>(h) * w;
    const long total = static_cast<long>(out_ch) * in_ch * k * k;
#pragma omp parallel for if (par) schedule(static)
    for (long t = 0; t < total; ++t) {
        const int dc = static_cast<int>(t % k);
        const int dr = static_cast<int>((t / k) % k);
        const int i = static_cast<int>((t / (static_cast<long>(k) * k)) % in_ch);
        const int o = static_cast<int>(t / (static_cast<long>(k) * k * in_ch));
        const c64* xi = x + static_cast<size_t>(i) * plane;
        const c64* co = cot_y + static_cast<size_t>(o) * plane;
        double acc_re = 0.0, acc_im = 0.0;
        for (int r = 0; r < h; ++r) {
            const int rr = r + dr - off;
            if (rr < 0 || rr >= h) continue;
            for (int c = 0; c < w; ++c) {
                const int cc = c + dc - off;
                if (cc < 0 || cc >= w) continue;
                const c64 xv = xi[static_cast<size_t>(rr) * w + cc];
                const c64 cv = co[static_cast<size_t>(r) * w + c];
                if (mode == ConvMode::Complex) {
                    // conj(x) * cot
                    acc_re += xv.real() * cv.real() + xv.imag() * cv.imag();
                    acc_im += xv.real() * cv.imag() - xv.imag() * cv.real();
                } else {
                    acc_re += xv.real() * cv.real();
                    acc_im += xv.imag() * cv.imag();
                }
            }
        }
        gw[t] = c64(acc_re, acc_im);
    }
}

// ---------------------------------------------------------------------------
// FFT. Unnormalized length-n passes (sign -1 forward); fft2d applies the
// unitary 1/sqrt(h*w) once. Power-of-two lengths use iterative radix-2,
// everything else goes through Bluestein's chirp-z with a power-of-two
// cyclic convolution.
// ---------------------------------------------------------------------------

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

int next_pow2(int n) {
    int m = 1;
    while (m < n) m <<= 1;
    return m;
}

struct FftPlan {
    int n = 0;
    bool pow2 = false;
    // radix-2 pieces
    std::vector<int> bitrev;
    std::vector<c64> tw_fwd;  // exp(-2*pi*i*j/n), j < n/2
    // Bluestein pieces
    int m = 0;
    std::vector<c64> chirp_fwd;      // exp(-i*pi*j^2/n)
    std::vector<c64> chirp_fft_fwd;  // FFT_m of conj chirp (cyclically extended)
    std::vector<c64> chirp_fft_inv;
    std::shared_ptr<const FftPlan> sub;  // pow2 plan of length m
};

void radix2_pass(c64* a, const FftPlan& p, bool inverse) {
    const int n = p.n;
    for (int i = 0; i < n; ++i) {
        int j = p.bitrev[i];
        if (j > i) std::swap(a[i], a[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        const int half = len >> 1;
        const int step = n / len;
        for (int i = 0; i < n; i += len) {
            for (int j = 0; j < half; ++j) {
                c64 tw = p.tw_fwd[static_cast<size_t>(j) * step];
                if (inverse) tw = std::conj(tw);
                c64 u = a[i + j];
                c64 v = a[i + j + half] * tw;
                a[i + j] = u + v;
                a[i + j + half] = u - v;
            }
        }
    }
}

void transform_1d(c64* a, const FftPlan& p, bool inverse);

void bluestein_pass(c64* a, const FftPlan& p, bool inverse) {
    const int n = p.n, m = p.m;
    std::vector<c64> buf(m, c64(0, 0));
    for (int j = 0; j < n; ++j) {
        c64 ch = inverse ? std::conj(p.chirp_fwd[j]) : p.chirp_fwd[j];
        buf[j] = a[j] * ch;
    }
    radix2_pass(buf.data(), *p.sub, false);
    const std::vector<c64>& bf = inverse ? p.chirp_fft_inv : p.chirp_fft_fwd;
    for (int j = 0; j < m; ++j) buf[j] *= bf[j];
    radix2_pass(buf.data(), *p.sub, true);
    const double scale = 1.0 / m;  // undo unnormalized radix-2 round trip
    for (int j = 0; j < n; ++j) {
        c64 ch = inverse ? std::conj(p.chirp_fwd[j]) : p.chirp_fwd[j];
        a[j] = buf[j] * ch * scale;
    }
}

void transform_1d(c64* a, const FftPlan& p, bool inverse) {
    if (p.n == 1) return;
    if (p.pow2)
        radix2_pass(a, p, inverse);
    else
        bluestein_pass(a, p, inverse);
}

std::shared_ptr<const FftPlan> make_pow2_plan(int n) {
    auto p = std::make_shared<FftPlan>();
    p->n = n;
    p->pow2 = true;
    p->bitrev.assign(n, 0);
    int lg = 0;
    while ((1 << lg) < n) ++lg;
    for (int i = 0; i < n; ++i) {
        int r = 0;
        for (int b = 0; b < lg; ++b)
            if (i & (1 << b)) r |= 1 << (lg - 1 - b);
        p->bitrev[i] = r;
    }
    p->tw_fwd.resize(n / 2);
    for (int j = 0; j < n / 2; ++j) {
        double ang = -2.0 * kPi * j / n;
        p->tw_fwd[j] = c64(std::cos(ang), std::sin(ang));
    }
    return p;
}

std::shared_ptr<const FftPlan> make_plan(int n) {
    if (is_pow2(n)) return make_pow2_plan(n);
    auto p = std::make_shared<FftPlan>();
    p->n = n;
    p->pow2 = false;
    p->m = next_pow2(2 * n - 1);
    p->sub = make_pow2_plan(p->m);
    p->chirp_fwd.resize(n);
    for (int j = 0; j < n; ++j) {
        // angle = -pi * j^2 / n, with j^2 reduced mod 2n to preserve precision
        long long q = (static_cast<long long>(j) * j) % (2LL * n);
        double ang = -kPi * static_cast<double>(q) / n;
        p->chirp_fwd[j] = c64(std::cos(ang), std::sin(ang));
    }
    auto build = [&](bool inverse) {
        std::vector<c64> b(p->m, c64(0, 0));
        for (int j = 0; j < n; ++j) {
            c64 ch = inverse ? p->chirp_fwd[j] : std::conj(p->chirp_fwd[j]);
            b[j] = ch;
            if (j > 0) b[p->m - j] = ch;
        }
        radix2_pass(b.data(), *p->sub, false);
        return b;
    };
    p->chirp_fft_fwd = build(false);
    p->chirp_fft_inv = build(true);
    return p;
}

std::shared_ptr<const FftPlan> get_plan(int n) {
    static std::mutex mu;
    static std::map<int, std::shared_ptr<const FftPlan>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    auto p = make_plan(n);
    cache.emplace(n, p);
    return p;
}

void fft2d_core(c64* data, int h, int w, bool inverse, bool par) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("fft2d: bad dimensions");
    auto prow = get_plan(w);
    auto pcol = get_plan(h);
#pragma omp parallel for if (par) schedule(static)
    for (int r = 0; r < h; ++r) transform_1d(data + static_cast<size_t>(r) * w, *prow, inverse);
#pragma omp parallel for if (par) schedule(static)
    for (int c = 0; c < w; ++c) {
        std::vector<c64> col(h);
        for (int r = 0; r < h; ++r) col[r] = data[static_cast<size_t>(r) * w + c];
        transform_1d(col.data(), *pcol, inverse);
        for (int r = 0; r < h; ++r) data[static_cast<size_t>(r) * w + c] = col[r];
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(h) * w);
    const size_t n = static_cast<size_t>(h) * w;
#pragma omp parallel for if (par) schedule(static)
    for (long i = 0; i < static_cast<long>(n); ++i) data[i] *= scale;
}

void smooth_relu_core(const c64* x, size_t n, double delta, c64* y, c64* dy, bool par) {
    if (delta <= 0.0) throw std::invalid_argument("smooth_relu: delta must be positive");
#pragma omp parallel for if (par) schedule(static)
    for (long i = 0; i < static_cast<long>(n); ++i) {
        const double re = x[i].real(), im = x[i].imag();
        y[i] = c64(smooth_relu_scalar(re, delta), smooth_relu_scalar(im, delta));
        if (dy) dy[i] = c64(smooth_relu_deriv_scalar(re, delta), smooth_relu_deriv_scalar(im, delta));
    }
}

}  // namespace

void conv2d_forward(const c64* x, int in_ch, int h, int w,
                    const c64* wts, int out_ch, int k, c64* y, ConvMode mode) {
    conv_forward_core(x, in_ch, h, w, wts, out_ch, k, y, mode, true);
}

void conv2d_adjoint_input(const c64* cot_y, int out_ch, int h, int w,
                          const c64* wts, int in_ch, int k, c64* cot_x, ConvMode mode) {
    conv_adjoint_core(cot_y, out_ch, h, w, wts, in_ch, k, cot_x, mode, true);
}

void conv2d_weight_grad(const c64* x, int in_ch, const c64* cot_y, int out_ch,
                        int h, int w, int k, c64* gw, ConvMode mode) {
    conv_wgrad_core(x, in_ch, cot_y, out_ch, h, w, k, gw, mode, true);
}

void fft2d(c64* data, int h, int w, bool inverse) { fft2d_core(data, h, w, inverse, true); }

void smooth_relu_map(const c64* x, size_t n, double delta, c64* y, c64* dy) {
    smooth_relu_core(x, n, delta, y, dy, true);
}

namespace serial {

void conv2d_forward(const c64* x, int in_ch, int h, int w,
                    const c64* wts, int out_ch, int k, c64* y, ConvMode mode) {
    conv_forward_core(x, in_ch, h, w, wts, out_ch, k, y, mode, false);
}

void conv2d_adjoint_input(const c64* cot_y, int out_ch, int h, int w,
                          const c64* wts, int in_ch, int k, c64* cot_x, ConvMode mode) {
    conv_adjoint_core(cot_y, out_ch, h, w, wts, in_ch, k, cot_x, mode, false);
}

void conv2d_weight_grad(const c64* x, int in_ch, const c64* cot_y, int out_ch,
                        int h, int w, int k, c64* gw, ConvMode mode) {
    conv_wgrad_core(x, in_ch, cot_y, out_ch, h, w, k, gw, mode, false);
}

void fft2d(c64* data, int h, int w, bool inverse) { fft2d_core(data, h, w, inverse, false); }

void smooth_relu_map(const c64* x, size_t n, double delta, c64* y, c64* dy) {
    smooth_relu_core(x, n, delta, y, dy, false);
}

}  // namespace serial

}  // namespace conviction::kernels
