#pragma once

#include "conviction/types.hpp"

namespace conviction {

/// Pointwise root of sum of squares across coils.
RealImage rss(const CoilStack& u);

struct MetricsOptions {
    int ssim_window = 7;  // uniform window side
    double k1 = 0.01;
    double k2 = 0.03;
    // NMSE denominator is ||x||^2 (the reconstruction) as printed in the
    // source formula; set true for the conventional ||ref||^2.
    bool nmse_reference_denominator = false;
};

/// PSNR = 20 log10(max|ref| / sqrt(MSE)), +inf sentinel when x == ref.
/// SSIM over uniform windows on magnitudes, L = max|ref|.
/// NMSE = ||x - ref||^2 / ||x||^2 (see MetricsOptions), RMSE = ||x - ref|| / ||ref||.
MetricsReport metrics(const ComplexImage& x, const ComplexImage& ref,
                      const MetricsOptions& opt = {});

/// Mean SSIM over valid windows of two real images (magnitudes), plus the
/// gradient with respect to `x` when grad != nullptr. Shared by the metric
/// and the differentiable loss term.
double ssim_mean(const RealImage& x, const RealImage& ref, const MetricsOptions& opt,
                 RealImage* grad_x = nullptr);

}  // namespace conviction
