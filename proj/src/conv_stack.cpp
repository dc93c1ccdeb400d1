#include "conviction/conv_stack.hpp"

#include <cmath>
#include <stdexcept>

namespace conviction {

void ConvStack::validate() const {
    if (layers.empty()) throw std::invalid_argument("ConvStack: no layers");
    if (!(delta > 0.0)) throw std::invalid_argument("ConvStack: delta must be positive");
    for (size_t i = 0; i < layers.size(); ++i) {
        const ConvLayer& l = layers[i];
        if (l.k <= 0 || l.k % 2 == 0) throw std::invalid_argument("ConvStack: kernel size must be odd");
        if (l.w.size() != l.weight_count()) throw std::invalid_argument("ConvStack: weight size mismatch");
        if (i + 1 < layers.size() && l.out_ch != layers[i + 1].in_ch)
            throw std::invalid_argument("ConvStack: channel mismatch between layers");
    }
}

void xavier_init(ConvLayer& layer, Rng& rng) {
    layer.w.resize(layer.weight_count());
    const double fan_in = static_cast<double>(layer.in_ch) * layer.k * layer.k;
    const double fan_out = static_cast<double>(layer.out_ch) * layer.k * layer.k;
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (c64& w : layer.w) w = c64(rng.uniform(-bound, bound), rng.uniform(-bound, bound));
}

ConvStack make_stack(int layers, int in_ch, int d, int k, double delta, Rng& rng,
                     int out_ch_last, ConvMode mode) {
    if (layers <= 0) throw std::invalid_argument("make_stack: need at least one layer");
    ConvStack s;
    s.delta = delta;
    s.mode = mode;
    for (int i = 0; i < layers; ++i) {
        ConvLayer l;
        l.in_ch = i == 0 ? in_ch : d;
        l.out_ch = (i == layers - 1 && out_ch_last > 0) ? out_ch_last : d;
        l.k = k;
        l.linear = i == layers - 1;
        xavier_init(l, rng);
        s.layers.push_back(std::move(l));
    }
    s.validate();
    return s;
}

FeatureMap feature_from_image(const ComplexImage& x) {
    FeatureMap f(1, x.height, x.width);
    f.data = x.data;
    return f;
}

FeatureMap feature_from_coils(const CoilStack& u) {
    u.validate();
    FeatureMap f(u.count(), u.height(), u.width());
    for (int i = 0; i < u.count(); ++i)
        std::copy(u.coils[i].data.begin(), u.coils[i].data.end(), f.plane(i));
    return f;
}

ComplexImage image_from_feature(const FeatureMap& f) {
    if (f.channels != 1) throw std::invalid_argument("image_from_feature: expected 1 channel");
    ComplexImage img(f.height, f.width);
    img.data = f.data;
    return img;
}

CoilStack coils_from_feature(const FeatureMap& f) {
    CoilStack u(f.channels, f.height, f.width);
    for (int i = 0; i < f.channels; ++i)
        std::copy(f.plane(i), f.plane(i) + static_cast<size_t>(f.height) * f.width,
                  u.coils[i].data.begin());
    return u;
}

FeatureMap conv_stack_forward(const ConvStack& stack, const FeatureMap& x, StackTape* tape) {
    stack.validate();
    if (x.channels != stack.in_channels())
        throw std::invalid_argument("conv_stack_forward: input channel mismatch");
    if (tape) {
        tape->inputs.clear();
        tape->pre.clear();
        tape->dact.clear();
    }
    FeatureMap a = x;
    for (const ConvLayer& l : stack.layers) {
        FeatureMap p(l.out_ch, a.height, a.width);
        kernels::conv2d_forward(a.data.data(), l.in_ch, a.height, a.width, l.w.data(), l.out_ch,
                                l.k, p.data.data(), stack.mode);
        if (tape) tape->inputs.push_back(std::move(a));
        if (l.linear) {
            if (tape) {
                tape->pre.push_back(p);
                tape->dact.emplace_back();
            }
            a = std::move(p);
        } else {
            FeatureMap act(l.out_ch, p.height, p.width);
            FeatureMap dact(l.out_ch, p.height, p.width);
            kernels::smooth_relu_map(p.data.data(), p.data.size(), stack.delta, act.data.data(),
                                     dact.data.data());
            if (tape) {
                tape->pre.push_back(std::move(p));
                tape->dact.push_back(std::move(dact));
            }
            a = std::move(act);
        }
    }
    return a;
}

FeatureMap conv_stack_forward(const ConvStack& stack, const ComplexImage& x, StackTape* tape) {
    return conv_stack_forward(stack, feature_from_image(x), tape);
}

StackVjpResult conv_stack_vjp_with_tape(const ConvStack& stack, const StackTape& tape,
                                        const FeatureMap& cotangent) {
    const int n_layers = static_cast<int>(stack.layers.size());
    if (static_cast<int>(tape.inputs.size()) != n_layers)
        throw std::invalid_argument("conv_stack_vjp: tape/stack mismatch");
    const ConvLayer& last = stack.layers.back();
    if (cotangent.channels != last.out_ch || cotangent.height != tape.pre.back().height ||
        cotangent.width != tape.pre.back().width)
        throw std::invalid_argument("conv_stack_vjp: cotangent shape mismatch");

    StackVjpResult out;
    out.grad_weights.resize(n_layers);
    FeatureMap c = cotangent;
    for (int li = n_layers - 1; li >= 0; --li) {
        const ConvLayer& l = stack.layers[li];
        if (!l.linear) {
            // cot_pre = cot_act .* phi'(pre), re/im independently
            const FeatureMap& d = tape.dact[li];
            for (size_t i = 0; i < c.data.size(); ++i)
                c.data[i] = c64(c.data[i].real() * d.data[i].real(),
                                c.data[i].imag() * d.data[i].imag());
        }
        const FeatureMap& a = tape.inputs[li];
        out.grad_weights[li].assign(l.weight_count(), c64(0, 0));
        kernels::conv2d_weight_grad(a.data.data(), l.in_ch, c.data.data(), l.out_ch, a.height,
                                    a.width, l.k, out.grad_weights[li].data(), stack.mode);
        FeatureMap cin(l.in_ch, a.height, a.width);
        kernels::conv2d_adjoint_input(c.data.data(), l.out_ch, a.height, a.width, l.w.data(),
                                      l.in_ch, l.k, cin.data.data(), stack.mode);
        c = std::move(cin);
    }
    out.grad_input = std::move(c);
    return out;
}

StackVjpResult conv_stack_vjp(const ConvStack& stack, const FeatureMap& x,
                              const FeatureMap& cotangent) {
    StackTape tape;
    conv_stack_forward(stack, x, &tape);
    return conv_stack_vjp_with_tape(stack, tape, cotangent);
}

}  // namespace conviction
