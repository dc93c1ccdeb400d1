#include "conviction/gradients.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace conviction {

// ---------------------------------------------------------------------------
// Layout / packing
// ---------------------------------------------------------------------------

namespace {

std::vector<std::pair<std::string, const ConvStack*>> scheme_stacks(const PhaseOps& p,
                                                                    UnrollScheme scheme) {
    switch (scheme) {
        case UnrollScheme::TwoStepGrad: return {{"g", &*p.g}};
        case UnrollScheme::HybridDomain:
            return {{"J", &*p.J}, {"G", &*p.G}, {"Gt", &*p.Gt}, {"Jt", &*p.Jt}, {"K", &*p.K}};
        case UnrollScheme::CombineShrink:
            return {{"J", &*p.J}, {"G", &*p.G}, {"Gt", &*p.Gt}, {"Jt", &*p.Jt}};
    }
    return {};
}

std::vector<std::string> scheme_scalars(UnrollScheme scheme) {
    switch (scheme) {
        case UnrollScheme::TwoStepGrad: return {"alpha", "tau"};
        case UnrollScheme::HybridDomain: return {"alpha"};
        case UnrollScheme::CombineShrink: return {"alpha", "shrink"};
    }
    return {};
}

}  // namespace

const ParamEntry& ParamLayout::find(const std::string& key) const {
    for (const ParamEntry& e : entries)
        if (e.key == key) return e;
    throw std::invalid_argument("ParamLayout: unknown key " + key);
}

bool ParamLayout::has(const std::string& key) const {
    for (const ParamEntry& e : entries)
        if (e.key == key) return true;
    return false;
}

ParamLayout build_layout(const UnrolledParams& p) {
    p.validate();
    ParamLayout lay;
    size_t off = 0;
    auto push = [&](const std::string& key, size_t count) {
        lay.entries.push_back({key, off, count});
        off += count;
    };
    for (size_t i = 0; i < p.phases.size(); ++i) {
        const std::string pre = "phase" + std::to_string(i) + ".";
        for (auto& [name, stack] : scheme_stacks(p.phases[i], p.scheme))
            for (size_t li = 0; li < stack->layers.size(); ++li)
                push(pre + name + ".w" + std::to_string(li),
                     2 * stack->layers[li].weight_count());
    }
    for (size_t t = 0; t < p.steps.size(); ++t)
        for (const std::string& s : scheme_scalars(p.scheme))
            push("step" + std::to_string(t) + "." + s, 1);
    if (p.k0)
        for (size_t li = 0; li < p.k0->layers.size(); ++li)
            push("k0.w" + std::to_string(li), 2 * p.k0->layers[li].weight_count());
    lay.total = off;
    return lay;
}

namespace {

void copy_weights_out(const std::vector<c64>& w, double* dst) {
    for (size_t i = 0; i < w.size(); ++i) {
        dst[2 * i] = w[i].real();
        dst[2 * i + 1] = w[i].imag();
    }
}

void copy_weights_in(std::vector<c64>& w, const double* src) {
    for (size_t i = 0; i < w.size(); ++i) w[i] = c64(src[2 * i], src[2 * i + 1]);
}

}  // namespace

std::vector<double> pack_params(const UnrolledParams& p) {
    ParamLayout lay = build_layout(p);
    std::vector<double> flat(lay.total, 0.0);
    size_t e = 0;
    for (size_t i = 0; i < p.phases.size(); ++i)
        for (auto& [name, stack] : scheme_stacks(p.phases[i], p.scheme))
            for (const ConvLayer& l : stack->layers)
                copy_weights_out(l.w, flat.data() + lay.entries[e++].offset);
    for (size_t t = 0; t < p.steps.size(); ++t)
        for (const std::string& s : scheme_scalars(p.scheme)) {
            double v = s == "alpha" ? p.steps[t].alpha
                                    : (s == "tau" ? p.steps[t].tau : p.steps[t].shrink);
            flat[lay.entries[e++].offset] = v;
        }
    if (p.k0)
        for (const ConvLayer& l : p.k0->layers)
            copy_weights_out(l.w, flat.data() + lay.entries[e++].offset);
    return flat;
}

void unpack_params(UnrolledParams& p, const std::vector<double>& flat) {
    ParamLayout lay = build_layout(p);
    if (flat.size() != lay.total) throw std::invalid_argument("unpack_params: size mismatch");
    size_t e = 0;
    for (size_t i = 0; i < p.phases.size(); ++i)
        for (auto& [name, stack] : scheme_stacks(p.phases[i], p.scheme)) {
            ConvStack* mut = const_cast<ConvStack*>(stack);
            for (ConvLayer& l : mut->layers)
                copy_weights_in(l.w, flat.data() + lay.entries[e++].offset);
        }
    for (size_t t = 0; t < p.steps.size(); ++t)
        for (const std::string& s : scheme_scalars(p.scheme)) {
            const double v = flat[lay.entries[e++].offset];
            if (s == "alpha")
                p.steps[t].alpha = v;
            else if (s == "tau")
                p.steps[t].tau = v;
            else
                p.steps[t].shrink = v;
        }
    if (p.k0)
        for (ConvLayer& l : p.k0->layers)
            copy_weights_in(l.w, flat.data() + lay.entries[e++].offset);
}

double* GradientBundle::view(const std::string& key) { return values.data() + layout.find(key).offset; }
const double* GradientBundle::view(const std::string& key) const {
    return values.data() + layout.find(key).offset;
}

void GradientBundle::add_scaled(const GradientBundle& other, double c) {
    if (other.values.size() != values.size())
        throw std::invalid_argument("GradientBundle: layout mismatch");
    for (size_t i = 0; i < values.size(); ++i) values[i] += c * other.values[i];
    d_omega += c * other.d_omega;
}

double GradientBundle::inf_norm() const {
    double m = std::abs(d_omega);
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
}

GradientBundle zero_bundle(const UnrolledParams& p) {
    GradientBundle g;
    g.layout = build_layout(p);
    g.values.assign(g.layout.total, 0.0);
    return g;
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace {

double dot_re_img(const ComplexImage& a, const ComplexImage& b) { return dot_re(a.data, b.data); }

double dot_re_coils(const CoilStack& a, const CoilStack& b) {
    KahanSum k;
    for (int i = 0; i < a.count(); ++i) k.add(dot_re(a.coils[i].data, b.coils[i].data));
    return k.value();
}

// F^H P^T P F x (self-adjoint data-consistency operator)
ComplexImage masked_projection(const ComplexImage& x, const SamplingMask& mask) {
    ComplexImage k = fft2(x);
    for (size_t i = 0; i < k.data.size(); ++i)
        if (!mask.cells[i]) k.data[i] = c64(0, 0);
    return ifft2(k);
}

void accumulate_stack_grads(GradientBundle& gb, const std::string& prefix,
                            const std::vector<std::vector<c64>>& gw) {
    for (size_t li = 0; li < gw.size(); ++li) {
        double* dst = gb.view(prefix + ".w" + std::to_string(li));
        for (size_t i = 0; i < gw[li].size(); ++i) {
            dst[2 * i] += gw[li][i].real();
            dst[2 * i + 1] += gw[li][i].imag();
        }
    }
}

FeatureMap coil_fft_stack(const CoilStack& u) {
    FeatureMap out(u.count(), u.height(), u.width());
    for (int i = 0; i < u.count(); ++i) {
        ComplexImage k = fft2(u.coils[i]);
        std::copy(k.data.begin(), k.data.end(), out.plane(i));
    }
    return out;
}

CoilStack coil_ifft_stack(const FeatureMap& f) {
    CoilStack out(f.channels, f.height, f.width);
    for (int i = 0; i < f.channels; ++i) {
        ComplexImage k(f.height, f.width);
        std::copy(f.plane(i), f.plane(i) + k.data.size(), k.data.begin());
        out.coils[i] = ifft2(k);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// TwoStepGrad phase reverse pass.
//
// The phase computes (see unrolled.cpp):
//   gf = F^H P^T (P F x - y);  z = x - alpha gf
//   forward stack: a_0 = z, p_li = W_li * a_li, a_{li+1} = act(p_li), F = a_L
//   rows: s_j = sqrt(||F_j||^2 + eps^2), N = F_j / s_j
//   inner chain: cots[L] = N; cp_li = mask(cots[li+1]); cots[li] = W_li^T cp_li
//   d = cots[0];  x+ = z - tau kappa d
// Reversing the inner chain requires the second derivative of the activation
// (phi'' inside the mask) and the adjoint of the row normalization.
// ---------------------------------------------------------------------------

ComplexImage twostep_phase_vjp(const UnrolledParams& params, const TwoStepPhaseTape& t,
                               const KSpaceData& y, double omega, const ComplexImage& cot_out,
                               GradientBundle& gb) {
    const PhaseOps& ops = params.phases[t.slot];
    const ConvStack& g = *ops.g;
    const int L = static_cast<int>(g.layers.size());
    const std::string pre = "phase" + std::to_string(t.slot) + ".";
    const std::string step = "step" + std::to_string(t.t) + ".";
    const double kappa = sigmoid(omega);
    const double ddot = dot_re_img(cot_out, t.reg_grad);

    gb.view(step + "tau")[0] += -kappa * ddot;
    gb.d_omega += -t.tau_t * ddot * kappa * (1.0 - kappa);

    ComplexImage cot_z = cot_out;

    // reverse the inner backward chain, walking up from cots[0]
    FeatureMap rc(1, t.z.height, t.z.width);
    for (size_t i = 0; i < rc.data.size(); ++i) rc.data[i] = -t.tau_t * kappa * cot_out.data[i];

    std::vector<FeatureMap> rcot_p(L);  // cotangents injected at pre-activations
    for (int li = 0; li < L; ++li) {
        const ConvLayer& l = g.layers[li];
        // recompute cp_li = mask(cots[li+1])
        FeatureMap cp = t.cots[li + 1];
        if (!l.linear) {
            const FeatureMap& d = t.stack.dact[li];
            for (size_t i = 0; i < cp.data.size(); ++i)
                cp.data[i] = c64(cp.data[i].real() * d.data[i].real(),
                                 cp.data[i].imag() * d.data[i].imag());
        }
        // cots[li] = adjoint_input(cp, W): reverse wrt cp is the forward conv,
        // reverse wrt W is weight_grad with (input = rc, cotangent = cp)
        FeatureMap r_cp(l.out_ch, rc.height, rc.width);
        kernels::conv2d_forward(rc.data.data(), l.in_ch, rc.height, rc.width, l.w.data(),
                                l.out_ch, l.k, r_cp.data.data(), g.mode);
        std::vector<c64> gw(l.weight_count(), c64(0, 0));
        kernels::conv2d_weight_grad(rc.data.data(), l.in_ch, cp.data.data(), l.out_ch, rc.height,
                                    rc.width, l.k, gw.data(), g.mode);
        double* dst = gb.view(pre + "g.w" + std::to_string(li));
        for (size_t i = 0; i < gw.size(); ++i) {
            dst[2 * i] += gw[i].real();
            dst[2 * i + 1] += gw[i].imag();
        }
        if (!l.linear) {
            const FeatureMap& d = t.stack.dact[li];
            const FeatureMap& p = t.stack.pre[li];
            const FeatureMap& c_up = t.cots[li + 1];
            FeatureMap up(l.out_ch, rc.height, rc.width);
            rcot_p[li] = FeatureMap(l.out_ch, rc.height, rc.width);
            for (size_t i = 0; i < up.data.size(); ++i) {
                up.data[i] = c64(r_cp.data[i].real() * d.data[i].real(),
                                 r_cp.data[i].imag() * d.data[i].imag());
                const double ppre_re =
                    kernels::smooth_relu_second_deriv_scalar(p.data[i].real(), g.delta);
                const double ppre_im =
                    kernels::smooth_relu_second_deriv_scalar(p.data[i].imag(), g.delta);
                rcot_p[li].data[i] = c64(r_cp.data[i].real() * c_up.data[i].real() * ppre_re,
                                         r_cp.data[i].imag() * c_up.data[i].imag() * ppre_im);
            }
            rc = std::move(up);
        } else {
            rc = std::move(r_cp);
        }
    }

    // rc is now the cotangent on N = rownormalize(F); the map is self-adjoint
    // in the real pairing: cot_F_j = rc_j/s_j - F_j Re<rc_j, F_j>/s_j^3
    const FeatureMap& F = t.feat;
    FeatureMap cot_F(F.channels, F.height, F.width);
    for (int j = 0; j < F.positions(); ++j) {
        double dot = 0.0;
        for (int ch = 0; ch < F.channels; ++ch) {
            const c64 a = rc.at(ch, j), b = F.at(ch, j);
            dot += a.real() * b.real() + a.imag() * b.imag();
        }
        const double s = t.s[j], s3 = s * s * s;
        for (int ch = 0; ch < F.channels; ++ch)
            cot_F.at(ch, j) = rc.at(ch, j) / s - F.at(ch, j) * (dot / s3);
    }

    // reverse the forward stack with the injected pre-activation cotangents
    FeatureMap cc = std::move(cot_F);
    for (int li = L - 1; li >= 0; --li) {
        const ConvLayer& l = g.layers[li];
        FeatureMap cot_p = std::move(cc);
        if (!l.linear) {
            const FeatureMap& d = t.stack.dact[li];
            for (size_t i = 0; i < cot_p.data.size(); ++i)
                cot_p.data[i] = c64(cot_p.data[i].real() * d.data[i].real(),
                                    cot_p.data[i].imag() * d.data[i].imag());
        }
        if (rcot_p[li].channels > 0)
            for (size_t i = 0; i < cot_p.data.size(); ++i) cot_p.data[i] += rcot_p[li].data[i];
        std::vector<c64> gw(l.weight_count(), c64(0, 0));
        const FeatureMap& a = t.stack.inputs[li];
        kernels::conv2d_weight_grad(a.data.data(), l.in_ch, cot_p.data.data(), l.out_ch, a.height,
                                    a.width, l.k, gw.data(), g.mode);
        double* dst = gb.view(pre + "g.w" + std::to_string(li));
        for (size_t i = 0; i < gw.size(); ++i) {
            dst[2 * i] += gw[i].real();
            dst[2 * i + 1] += gw[i].imag();
        }
        FeatureMap down(l.in_ch, a.height, a.width);
        kernels::conv2d_adjoint_input(cot_p.data.data(), l.out_ch, a.height, a.width, l.w.data(),
                                      l.in_ch, l.k, down.data.data(), g.mode);
        cc = std::move(down);
    }
    for (size_t i = 0; i < cot_z.data.size(); ++i) cot_z.data[i] += cc.data[i];

    // reverse z = x - alpha gf
    gb.view(step + "alpha")[0] += -dot_re_img(cot_z, t.gradf);
    ComplexImage cot_x = cot_z;
    ComplexImage back = masked_projection(cot_z, y.mask);
    for (size_t i = 0; i < cot_x.data.size(); ++i) cot_x.data[i] -= t.alpha_t * back.data[i];
    return cot_x;
}

// ---------------------------------------------------------------------------
// Multi-coil phase reverse passes (first order).
// ---------------------------------------------------------------------------

namespace {

// reverse of b = u - rho (F^H P^T P F u - F^H P^T f): self-adjoint linear map
CoilStack landweber_vjp(const CoilStack& cot_b, const CoilStack& gradf,
                        const std::vector<KSpaceData>& f, double rho, double* g_rho) {
    if (g_rho) *g_rho += -dot_re_coils(cot_b, gradf);
    CoilStack cot_u = cot_b;
    for (size_t i = 0; i < f.size(); ++i) {
        ComplexImage back = masked_projection(cot_b.coils[i], f[i].mask);
        for (size_t j = 0; j < back.data.size(); ++j) cot_u.coils[i].data[j] -= rho * back.data[j];
    }
    return cot_u;
}

}  // namespace

CoilStack hybrid_phase_vjp(const UnrolledParams& params, const HybridPhaseTape& t,
                           const std::vector<KSpaceData>& f, const CoilStack& cot_out,
                           const CoilStack* cot_ubar_extra, GradientBundle& gb) {
    const PhaseOps& ops = params.phases[t.slot];
    const std::string pre = "phase" + std::to_string(t.slot) + ".";
    const std::string step = "step" + std::to_string(t.t) + ".";

    // u_out = u_bar + coil_ifft(kout)
    FeatureMap cot_kout = coil_fft_stack(cot_out);  // adjoint of coil_ifft
    StackVjpResult vK = conv_stack_vjp_with_tape(*ops.K, t.tK, cot_kout);
    accumulate_stack_grads(gb, pre + "K", vK.grad_weights);
    CoilStack cot_ubar = cot_out;
    {
        CoilStack from_k = coil_ifft_stack(vK.grad_input);  // adjoint of coil_fft
        for (int i = 0; i < cot_ubar.count(); ++i)
            for (size_t j = 0; j < cot_ubar.coils[i].data.size(); ++j)
                cot_ubar.coils[i].data[j] += from_k.coils[i].data[j];
    }
    if (cot_ubar_extra)
        for (int i = 0; i < cot_ubar.count(); ++i)
            for (size_t j = 0; j < cot_ubar.coils[i].data.size(); ++j)
                cot_ubar.coils[i].data[j] += cot_ubar_extra->coils[i].data[j];

    // u_bar = b + Jt(Gt(G(J(b))))
    StackVjpResult vJt = conv_stack_vjp_with_tape(*ops.Jt, t.tJt, feature_from_coils(cot_ubar));
    accumulate_stack_grads(gb, pre + "Jt", vJt.grad_weights);
    StackVjpResult vGt = conv_stack_vjp_with_tape(*ops.Gt, t.tGt, vJt.grad_input);
    accumulate_stack_grads(gb, pre + "Gt", vGt.grad_weights);
    StackVjpResult vG = conv_stack_vjp_with_tape(*ops.G, t.tG, vGt.grad_input);
    accumulate_stack_grads(gb, pre + "G", vG.grad_weights);
    StackVjpResult vJ = conv_stack_vjp_with_tape(*ops.J, t.tJ, vG.grad_input);
    accumulate_stack_grads(gb, pre + "J", vJ.grad_weights);

    CoilStack cot_b = cot_ubar;
    CoilStack through_m = coils_from_feature(vJ.grad_input);
    for (int i = 0; i < cot_b.count(); ++i)
        for (size_t j = 0; j < cot_b.coils[i].data.size(); ++j)
            cot_b.coils[i].data[j] += through_m.coils[i].data[j];

    return landweber_vjp(cot_b, t.gradf, f, t.rho_t, gb.view(step + "alpha"));
}

CoilStack combine_phase_vjp(const UnrolledParams& params, const CombinePhaseTape& t,
                            const std::vector<KSpaceData>& f, const CoilStack& cot_out,
                            GradientBundle& gb) {
    const PhaseOps& ops = params.phases[t.slot];
    const std::string pre = "phase" + std::to_string(t.slot) + ".";
    const std::string step = "step" + std::to_string(t.t) + ".";

    // u_out = b + Jt(Gt(shrunk))
    StackVjpResult vJt = conv_stack_vjp_with_tape(*ops.Jt, t.tJt, feature_from_coils(cot_out));
    accumulate_stack_grads(gb, pre + "Jt", vJt.grad_weights);
    StackVjpResult vGt = conv_stack_vjp_with_tape(*ops.Gt, t.tGt, vJt.grad_input);
    accumulate_stack_grads(gb, pre + "Gt", vGt.grad_weights);

    // shrunk = S_alpha(mG), rowwise
    const FeatureMap& F = t.mG;
    const FeatureMap& cs = vGt.grad_input;
    FeatureMap cot_F(F.channels, F.height, F.width);
    double g_shrink = 0.0;
    for (int j = 0; j < F.positions(); ++j) {
        double n2 = 0.0;
        for (int ch = 0; ch < F.channels; ++ch) n2 += std::norm(F.at(ch, j));
        const double n = std::sqrt(n2);
        if (n > t.shrink_t) {
            const double beta = 1.0 - t.shrink_t / n;
            double dot = 0.0;
            for (int ch = 0; ch < F.channels; ++ch) {
                const c64 a = cs.at(ch, j), b = F.at(ch, j);
                dot += a.real() * b.real() + a.imag() * b.imag();
            }
            for (int ch = 0; ch < F.channels; ++ch)
                cot_F.at(ch, j) = cs.at(ch, j) * beta + F.at(ch, j) * (t.shrink_t * dot / (n2 * n));
            g_shrink += -dot / n;
        }
    }
    gb.view(step + "shrink")[0] += g_shrink;

    StackVjpResult vG = conv_stack_vjp_with_tape(*ops.G, t.tG, cot_F);
    accumulate_stack_grads(gb, pre + "G", vG.grad_weights);
    StackVjpResult vJ = conv_stack_vjp_with_tape(*ops.J, t.tJ, vG.grad_input);
    accumulate_stack_grads(gb, pre + "J", vJ.grad_weights);

    CoilStack cot_b = cot_out;
    CoilStack through = coils_from_feature(vJ.grad_input);
    for (int i = 0; i < cot_b.count(); ++i)
        for (size_t j = 0; j < cot_b.coils[i].data.size(); ++j)
            cot_b.coils[i].data[j] += through.coils[i].data[j];

    return landweber_vjp(cot_b, t.gradf, f, t.rho_t, gb.view(step + "alpha"));
}

void init_vjp(const UnrolledParams& params, const InitTape& t, const CoilStack& cot_u0,
              GradientBundle& gb) {
    // u0 = coil_ifft(f_grid + K0(f_grid))
    FeatureMap cot_sum = coil_fft_stack(cot_u0);
    StackVjpResult v = conv_stack_vjp_with_tape(*params.k0, t.tK0, cot_sum);
    accumulate_stack_grads(gb, "k0", v.grad_weights);
}

// ---------------------------------------------------------------------------
// Batch drivers
// ---------------------------------------------------------------------------

namespace {

void check_batch_nonempty(size_t n) {
    if (n == 0) throw std::invalid_argument("gradient batch must be nonempty");
}

}  // namespace

BatchGrad backprop_unrolled(const UnrolledParams& params, const std::vector<Sample>& batch,
                            double omega, const LossSpec& loss, int T) {
    check_batch_nonempty(batch.size());
    BatchGrad out;
    out.grad = zero_bundle(params);
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const Sample& s : batch) {
        UnrolledTape tape;
        ComplexImage xT = unrolled_forward(params, s.y, omega, T, &tape);
        LossImage l = loss_eval(loss, xT, s.ref);
        out.loss += inv * l.value;
        GradientBundle gb = zero_bundle(params);
        ComplexImage cot = l.cot;
        for (int t = T - 1; t >= 0; --t)
            cot = twostep_phase_vjp(params, tape.phases[t], s.y, omega, cot, gb);
        out.grad.add_scaled(gb, inv);
    }
    return out;
}

BatchGrad mlm_gradients(const UnrolledParams& params, const std::vector<Sample>& batch,
                        double omega, const LossSpec& loss, int T) {
    check_batch_nonempty(batch.size());
    BatchGrad out;
    out.grad = zero_bundle(params);
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const Sample& s : batch) {
        UnrolledTape tape;
        ComplexImage xT = unrolled_forward(params, s.y, omega, T, &tape);
        LossImage l = loss_eval(loss, xT, s.ref);
        out.loss += inv * l.value;

        // multipliers: lambda(T) = -dl/du(T); lambda(t) from the recursion
        std::vector<ComplexImage> lambda(T + 1);
        lambda[T] = l.cot;
        for (c64& z : lambda[T].data) z = -z;
        GradientBundle scratch = zero_bundle(params);
        for (int t = T - 1; t >= 0; --t)
            lambda[t] = twostep_phase_vjp(params, tape.phases[t], s.y, omega, lambda[t + 1], scratch);

        // dTheta l = -<lambda(t), dtheta g(.)>: one parameter sweep per phase
        GradientBundle gb = zero_bundle(params);
        for (int t = T - 1; t >= 0; --t)
            (void)twostep_phase_vjp(params, tape.phases[t], s.y, omega, lambda[t + 1], gb);
        for (double& v : gb.values) v = -v;
        gb.d_omega = -gb.d_omega;
        out.grad.add_scaled(gb, inv);
    }
    return out;
}

BatchGrad backprop_unrolled(const UnrolledParams& params, const std::vector<CoilSample>& batch,
                            const LossSpec& loss, int T) {
    check_batch_nonempty(batch.size());
    BatchGrad out;
    out.grad = zero_bundle(params);
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const CoilSample& s : batch) {
        MultiCoilTape tape;
        CoilStack uT = multicoil_forward(params, s.f, T, &tape);
        const bool hybrid = params.scheme == UnrollScheme::HybridDomain;
        LossCoil l = hybrid ? loss_eval(loss, uT, tape.u_bar_last, s.ref)
                            : loss_eval(loss, uT, uT, s.ref);
        out.loss += inv * l.value;
        GradientBundle gb = zero_bundle(params);
        CoilStack cot = l.cot;
        for (int t = T - 1; t >= 0; --t) {
            if (hybrid) {
                const CoilStack* extra = (l.has_ubar && t == T - 1) ? &l.cot_ubar : nullptr;
                cot = hybrid_phase_vjp(params, tape.hybrid[t], s.f, cot, extra, gb);
            } else {
                cot = combine_phase_vjp(params, tape.combine[t], s.f, cot, gb);
            }
        }
        if (params.k0 && tape.init) init_vjp(params, *tape.init, cot, gb);
        out.grad.add_scaled(gb, inv);
    }
    return out;
}

BatchGrad mlm_gradients(const UnrolledParams& params, const std::vector<CoilSample>& batch,
                        const LossSpec& loss, int T) {
    check_batch_nonempty(batch.size());
    BatchGrad out;
    out.grad = zero_bundle(params);
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const CoilSample& s : batch) {
        MultiCoilTape tape;
        CoilStack uT = multicoil_forward(params, s.f, T, &tape);
        const bool hybrid = params.scheme == UnrollScheme::HybridDomain;
        LossCoil l = hybrid ? loss_eval(loss, uT, tape.u_bar_last, s.ref)
                            : loss_eval(loss, uT, uT, s.ref);
        out.loss += inv * l.value;

        auto negate = [](CoilStack c) {
            for (auto& coil : c.coils)
                for (c64& z : coil.data) z = -z;
            return c;
        };

        std::vector<CoilStack> lambda(T + 1);
        lambda[T] = negate(l.cot);
        CoilStack neg_ubar;
        if (l.has_ubar) neg_ubar = negate(l.cot_ubar);
        GradientBundle scratch = zero_bundle(params);
        for (int t = T - 1; t >= 0; --t) {
            if (hybrid) {
                const CoilStack* extra = (l.has_ubar && t == T - 1) ? &neg_ubar : nullptr;
                lambda[t] = hybrid_phase_vjp(params, tape.hybrid[t], s.f, lambda[t + 1], extra, scratch);
            } else {
                lambda[t] = combine_phase_vjp(params, tape.combine[t], s.f, lambda[t + 1], scratch);
            }
        }

        GradientBundle gb = zero_bundle(params);
        for (int t = T - 1; t >= 0; --t) {
            if (hybrid) {
                const CoilStack* extra = (l.has_ubar && t == T - 1) ? &neg_ubar : nullptr;
                (void)hybrid_phase_vjp(params, tape.hybrid[t], s.f, lambda[t + 1], extra, gb);
            } else {
                (void)combine_phase_vjp(params, tape.combine[t], s.f, lambda[t + 1], gb);
            }
        }
        if (params.k0 && tape.init) init_vjp(params, *tape.init, lambda[0], gb);
        for (double& v : gb.values) v = -v;
        gb.d_omega = -gb.d_omega;
        out.grad.add_scaled(gb, inv);
    }
    return out;
}

}  // namespace conviction
