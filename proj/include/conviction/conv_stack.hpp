#pragma once

#include <vector>

#include "conviction/kernels.hpp"
#include "conviction/rng.hpp"
#include "conviction/types.hpp"

namespace conviction {

using kernels::ConvMode;

/// One bias-free convolution layer. `linear` skips the activation that
/// otherwise follows the convolution.
struct ConvLayer {
    int in_ch = 1;
    int out_ch = 1;
    int k = 3;
    bool linear = false;
    std::vector<c64> w;  // out_ch * in_ch * k * k, kernel-row-major

    size_t weight_count() const {
        return static_cast<size_t>(out_ch) * in_ch * k * k;
    }
};

/// Ordered bias-free complex convolution layers with smoothed-ReLU
/// activations between them; the last layer closes the composition linearly.
struct ConvStack {
    std::vector<ConvLayer> layers;
    double delta = 1e-3;  // activation smoothing
    ConvMode mode = ConvMode::Complex;

    void validate() const;
    int in_channels() const { return layers.empty() ? 0 : layers.front().in_ch; }
    int out_channels() const { return layers.empty() ? 0 : layers.back().out_ch; }
    size_t parameter_count() const {
        size_t n = 0;
        for (const auto& l : layers) n += l.weight_count();
        return n;
    }
};

/// Plain l-layer stack: in_ch -> d -> ... -> d (or -> out_ch_last when given),
/// kernel size k, last layer linear, Xavier-initialized from rng.
ConvStack make_stack(int layers, int in_ch, int d, int k, double delta, Rng& rng,
                     int out_ch_last = -1, ConvMode mode = ConvMode::Complex);

void xavier_init(ConvLayer& layer, Rng& rng);

// Tape of intermediates from one forward pass, enough to run the backward
// pass (and to be differentiated again by the training module).
struct StackTape {
    std::vector<FeatureMap> inputs;  // a_0 .. a_{l-1}, conv inputs
    std::vector<FeatureMap> pre;     // p_1 .. p_l, conv outputs pre-activation
    std::vector<FeatureMap> dact;    // phi'(pre) for non-linear layers (empty map otherwise)
};

FeatureMap feature_from_image(const ComplexImage& x);
FeatureMap feature_from_coils(const CoilStack& u);
ComplexImage image_from_feature(const FeatureMap& f);  // requires 1 channel
CoilStack coils_from_feature(const FeatureMap& f);

FeatureMap conv_stack_forward(const ConvStack& stack, const FeatureMap& x,
                              StackTape* tape = nullptr);
FeatureMap conv_stack_forward(const ConvStack& stack, const ComplexImage& x,
                              StackTape* tape = nullptr);

struct StackVjpResult {
    FeatureMap grad_input;
    std::vector<std::vector<c64>> grad_weights;  // per layer, same layout as ConvLayer::w
};

/// Vector-Jacobian product of the stack at x for the given output cotangent.
StackVjpResult conv_stack_vjp(const ConvStack& stack, const FeatureMap& x,
                              const FeatureMap& cotangent);
StackVjpResult conv_stack_vjp_with_tape(const ConvStack& stack, const StackTape& tape,
                                        const FeatureMap& cotangent);

}  // namespace conviction
