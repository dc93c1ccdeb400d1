#include "conviction/regularizer.hpp"

#include <cmath>
#include <stdexcept>

namespace conviction {

std::vector<double> row_norms_smoothed(const FeatureMap& F, double eps) {
    const int m = F.positions();
    std::vector<double> s(m);
    for (int j = 0; j < m; ++j) {
        KahanSum k;
        for (int ch = 0; ch < F.channels; ++ch) k.add(std::norm(F.at(ch, j)));
        s[j] = std::sqrt(k.value() + eps * eps);
    }
    return s;
}

double l21_smoothed(const FeatureMap& F, double eps) {
    if (eps < 0.0) throw std::invalid_argument("l21_smoothed: eps must be nonnegative");
    std::vector<double> s = row_norms_smoothed(F, eps);
    KahanSum total;
    for (double v : s) total.add(v - eps);
    return total.value();
}

FeatureMap soft_shrink(const FeatureMap& F, double alpha) {
    if (alpha < 0.0) throw std::invalid_argument("soft_shrink: alpha must be nonnegative");
    FeatureMap out(F.channels, F.height, F.width);
    const int m = F.positions();
    for (int j = 0; j < m; ++j) {
        double n2 = 0.0;
        for (int ch = 0; ch < F.channels; ++ch) n2 += std::norm(F.at(ch, j));
        const double n = std::sqrt(n2);
        const double scale = n > alpha ? 1.0 - alpha / n : 0.0;
        for (int ch = 0; ch < F.channels; ++ch) out.at(ch, j) = F.at(ch, j) * scale;
    }
    return out;
}

double lipschitz_bound(double eps, double L_g, double M, double m) {
    if (!(eps > 0.0) || !(L_g > 0.0) || !(M > 0.0) || !(m > 0.0))
        throw std::invalid_argument("lipschitz_bound: all arguments must be positive");
    return m * (L_g + 2.0 * M * M / eps);
}

void RegularizerSpec::validate() const {
    extractor.validate();
    if (!(eps > 0.0)) throw std::invalid_argument("RegularizerSpec: eps must be positive");
    if (extractor.in_channels() != 1)
        throw std::invalid_argument("RegularizerSpec: extractor must take a single channel");
}

double r_eps_value(const RegularizerSpec& spec, const ComplexImage& x) {
    spec.validate();
    FeatureMap F = conv_stack_forward(spec.extractor, x);
    return spec.kappa() * l21_smoothed(F, spec.eps);
}

RegValue r_eps(const RegularizerSpec& spec, const ComplexImage& x) {
    spec.validate();
    StackTape tape;
    FeatureMap F = conv_stack_forward(spec.extractor, x, &tape);
    const double kappa = spec.kappa();
    std::vector<double> s = row_norms_smoothed(F, spec.eps);

    RegValue out;
    KahanSum val;
    for (double v : s) val.add(v - spec.eps);
    out.value = kappa * val.value();

    FeatureMap cot(F.channels, F.height, F.width);
    const int m = F.positions();
    for (int j = 0; j < m; ++j)
        for (int ch = 0; ch < F.channels; ++ch) cot.at(ch, j) = F.at(ch, j) / s[j];
    StackVjpResult vjp = conv_stack_vjp_with_tape(spec.extractor, tape, cot);
    out.grad = image_from_feature(vjp.grad_input);
    for (c64& g : out.grad.data) g *= kappa;
    return out;
}

FeatureMap concat_channels(const FeatureMap& F1, const FeatureMap& F2) {
    if (F1.height != F2.height || F1.width != F2.width)
        throw std::invalid_argument("concat_channels: spatial shape mismatch");
    FeatureMap out(F1.channels + F2.channels, F1.height, F1.width);
    std::copy(F1.data.begin(), F1.data.end(), out.data.begin());
    std::copy(F2.data.begin(), F2.data.end(), out.data.begin() + F1.data.size());
    return out;
}

ComplexImage synthesis_fuse(const SynthesisOperator& op, const FeatureMap& F1,
                            const FeatureMap& F2) {
    FeatureMap cat = concat_channels(F1, F2);
    if (op.fusion.in_channels() != cat.channels)
        throw std::invalid_argument("synthesis_fuse: fusion input channels != 2d");
    if (op.fusion.out_channels() != 1)
        throw std::invalid_argument("synthesis_fuse: fusion must output one channel");
    return image_from_feature(conv_stack_forward(op.fusion, cat));
}

SynthesisVjp synthesis_vjp(const SynthesisOperator& op, const FeatureMap& F1,
                           const FeatureMap& F2, const ComplexImage& cotangent) {
    FeatureMap cat = concat_channels(F1, F2);
    StackVjpResult r = conv_stack_vjp(op.fusion, cat, feature_from_image(cotangent));
    SynthesisVjp out;
    out.grad_f1 = FeatureMap(F1.channels, F1.height, F1.width);
    out.grad_f2 = FeatureMap(F2.channels, F2.height, F2.width);
    std::copy(r.grad_input.data.begin(), r.grad_input.data.begin() + out.grad_f1.data.size(),
              out.grad_f1.data.begin());
    std::copy(r.grad_input.data.begin() + out.grad_f1.data.size(), r.grad_input.data.end(),
              out.grad_f2.data.begin());
    out.grad_weights = std::move(r.grad_weights);
    return out;
}

}  // namespace conviction
