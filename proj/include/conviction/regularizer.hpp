#pragma once

#include "conviction/conv_stack.hpp"
#include "conviction/types.hpp"

namespace conviction {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Smoothed l2,1: sum_j sqrt(||F_j||^2 + eps^2) - eps over positions j,
/// row norm over channels with complex modulus. eps = 0 gives the exact l2,1.
double l21_smoothed(const FeatureMap& F, double eps);

/// Row norms s_j = sqrt(||F_j||^2 + eps^2).
std::vector<double> row_norms_smoothed(const FeatureMap& F, double eps);

/// Rowwise F_j * max(1 - alpha/||F_j||, 0); zero rows stay zero.
FeatureMap soft_shrink(const FeatureMap& F, double alpha);

/// Lipschitz constant of grad r_eps: m * (L_g + 2 M^2 / eps).
double lipschitz_bound(double eps, double L_g, double M, double m);

/// R(x) = kappa * r_eps(x) with kappa = sigmoid(omega) and
/// r_eps(x) = l21_smoothed(extractor(x), eps).
struct RegularizerSpec {
    ConvStack extractor;
    double eps = 1e-3;
    double omega = 0.0;

    double kappa() const { return sigmoid(omega); }
    void validate() const;
};

struct RegValue {
    double value = 0.0;
    ComplexImage grad;
};

/// Value and gradient of R = kappa * r_eps at x. The gradient is one
/// conv_stack_vjp with cotangent rows g_j / sqrt(||g_j||^2 + eps^2).
RegValue r_eps(const RegularizerSpec& spec, const ComplexImage& x);

/// Value-only path (skips the backward pass).
double r_eps_value(const RegularizerSpec& spec, const ComplexImage& x);

/// Multimodal fusion: stack applied to the channel concatenation [F1, F2].
struct SynthesisOperator {
    ConvStack fusion;
};

ComplexImage synthesis_fuse(const SynthesisOperator& op, const FeatureMap& F1,
                            const FeatureMap& F2);

struct SynthesisVjp {
    FeatureMap grad_f1;
    FeatureMap grad_f2;
    std::vector<std::vector<c64>> grad_weights;
};

SynthesisVjp synthesis_vjp(const SynthesisOperator& op, const FeatureMap& F1,
                           const FeatureMap& F2, const ComplexImage& cotangent);

FeatureMap concat_channels(const FeatureMap& F1, const FeatureMap& F2);

}  // namespace conviction
