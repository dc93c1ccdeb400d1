#pragma once

#include "conviction/types.hpp"

namespace conviction::kernels {

/// Kernel arithmetic over complex data.
///   Complex   - true complex multiply-accumulate (one complex kernel tensor)
///   SplitReal - real/imaginary planes convolved independently; Re(w) acts on
///               Re(x), Im(w) on Im(x)
enum class ConvMode { Complex, SplitReal };

int max_threads();
void set_max_threads(int n);
/// Reads CONVICTION_THREADS and caps the OpenMP pool accordingly (no-op if unset).
void configure_threads_from_env();

// 2D cross-correlation with "same" zero padding, stride 1, odd k.
// x: in_ch planes of h*w, w: out_ch * in_ch * k * k (kernel-major rows), y: out_ch planes.
void conv2d_forward(const c64* x, int in_ch, int h, int w,
                    const c64* wts, int out_ch, int k, c64* y, ConvMode mode);

// Adjoint of conv2d_forward with respect to the input (real-pair inner product):
// cot_y (out_ch planes) -> cot_x (in_ch planes).
void conv2d_adjoint_input(const c64* cot_y, int out_ch, int h, int w,
                          const c64* wts, int in_ch, int k, c64* cot_x, ConvMode mode);

// Gradient of <cot_y, conv2d_forward(x, w)>_Re with respect to the weights.
void conv2d_weight_grad(const c64* x, int in_ch, const c64* cot_y, int out_ch,
                        int h, int w, int k, c64* gw, ConvMode mode);

// Unitary 2D DFT (forward) / inverse, in place. Radix-2 for power-of-two
// extents, Bluestein otherwise. Row/column passes parallelize over transforms.
void fft2d(c64* data, int h, int w, bool inverse);

// y_j = phi(Re x_j) + i phi(Im x_j), smoothed ReLU with parameter delta,
// optionally also writing phi'(Re x_j) + i phi'(Im x_j) into dy.
void smooth_relu_map(const c64* x, size_t n, double delta, c64* y, c64* dy);

namespace serial {
void conv2d_forward(const c64* x, int in_ch, int h, int w,
                    const c64* wts, int out_ch, int k, c64* y, ConvMode mode);
void conv2d_adjoint_input(const c64* cot_y, int out_ch, int h, int w,
                          const c64* wts, int in_ch, int k, c64* cot_x, ConvMode mode);
void conv2d_weight_grad(const c64* x, int in_ch, const c64* cot_y, int out_ch,
                        int h, int w, int k, c64* gw, ConvMode mode);
void fft2d(c64* data, int h, int w, bool inverse);
void smooth_relu_map(const c64* x, size_t n, double delta, c64* y, c64* dy);
}  // namespace serial

// Scalar smoothed ReLU pieces (exposed for tests and scalar call sites).
double smooth_relu_scalar(double x, double delta);
double smooth_relu_deriv_scalar(double x, double delta);
double smooth_relu_second_deriv_scalar(double x, double delta);

}  // namespace conviction::kernels
