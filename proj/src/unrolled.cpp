#include "conviction/unrolled.hpp"

#include <cmath>
#include <stdexcept>

namespace conviction {

Sharing sharing_from_string(const std::string& s) {
    if (s == "per-phase") return Sharing::PerPhase;
    if (s == "shared") return Sharing::Shared;
    if (s == "shared-pairs") return Sharing::SharedPairs;
    throw std::invalid_argument("unknown sharing policy: " + s);
}

std::string to_string(Sharing s) {
    switch (s) {
        case Sharing::PerPhase: return "per-phase";
        case Sharing::Shared: return "shared";
        case Sharing::SharedPairs: return "shared-pairs";
    }
    return "?";
}

int UnrolledParams::slots_for(int T, Sharing s) {
    switch (s) {
        case Sharing::PerPhase: return T;
        case Sharing::Shared: return 1;
        case Sharing::SharedPairs: return (T + 1) / 2;
    }
    return 1;
}

int UnrolledParams::slot_of(int t) const {
    switch (sharing) {
        case Sharing::PerPhase: return t;
        case Sharing::Shared: return 0;
        case Sharing::SharedPairs: return t / 2;
    }
    return 0;
}

void UnrolledParams::validate() const {
    if (T < 0) throw std::invalid_argument("UnrolledParams: T must be nonnegative");
    if (static_cast<int>(phases.size()) < slots_for(T, sharing))
        throw std::invalid_argument("UnrolledParams: not enough phase slots for T");
    if (static_cast<int>(steps.size()) < T)
        throw std::invalid_argument("UnrolledParams: need a StepSizes entry per phase");
    if (!(eps0 > 0.0) || !(eps_gamma > 0.0 && eps_gamma < 1.0))
        throw std::invalid_argument("UnrolledParams: bad eps schedule");
    for (const PhaseOps& p : phases) {
        switch (scheme) {
            case UnrollScheme::TwoStepGrad:
                if (!p.g) throw std::invalid_argument("UnrolledParams: TwoStepGrad needs g");
                p.g->validate();
                break;
            case UnrollScheme::HybridDomain:
                if (!p.J || !p.G || !p.Gt || !p.Jt || !p.K)
                    throw std::invalid_argument("UnrolledParams: HybridDomain needs J,G,Gt,Jt,K");
                for (const auto* s : {&*p.J, &*p.G, &*p.Gt, &*p.Jt, &*p.K}) s->validate();
                break;
            case UnrollScheme::CombineShrink:
                if (!p.J || !p.G || !p.Gt || !p.Jt)
                    throw std::invalid_argument("UnrolledParams: CombineShrink needs J,G,Gt,Jt");
                for (const auto* s : {&*p.J, &*p.G, &*p.Gt, &*p.Jt}) s->validate();
                break;
        }
    }
    if (k0) k0->validate();
}

UnrolledParams default_combine_params(int coils, Rng& rng, int filters) {
    UnrolledParams p;
    p.scheme = UnrollScheme::CombineShrink;
    p.T = 5;
    p.sharing = Sharing::PerPhase;
    for (int t = 0; t < p.T; ++t) {
        PhaseOps ops;
        ops.J = make_stack(4, coils, filters, 3, 1e-3, rng, 1);
        ops.G = make_stack(3, 1, filters, 9, 1e-3, rng);
        ops.Gt = make_stack(3, filters, filters, 9, 1e-3, rng, 1);
        ops.Jt = make_stack(4, 1, filters, 3, 1e-3, rng, coils);
        p.phases.push_back(std::move(ops));
        p.steps.push_back(StepSizes{0.1, 0.01, 0.0});
    }
    p.validate();
    return p;
}

UnrolledParams default_hybrid_params(int coils, Rng& rng, int filters) {
    UnrolledParams p;
    p.scheme = UnrollScheme::HybridDomain;
    p.T = 4;
    p.sharing = Sharing::SharedPairs;
    const int slots = UnrolledParams::slots_for(p.T, p.sharing);
    for (int i = 0; i < slots; ++i) {
        PhaseOps ops;
        ops.J = make_stack(4, coils, filters, 3, 1e-3, rng, 1);
        ops.G = make_stack(3, 1, filters, 9, 1e-3, rng);
        ops.Gt = make_stack(3, filters, filters, 9, 1e-3, rng, 1);
        ops.Jt = make_stack(4, 1, filters, 3, 1e-3, rng, coils);
        ops.K = make_stack(4, coils, filters, 3, 1e-3, rng, coils);
        p.phases.push_back(std::move(ops));
    }
    for (int t = 0; t < p.T; ++t) p.steps.push_back(StepSizes{1.0, 0.01, 0.0});
    p.k0 = make_stack(4, coils, coils, 3, 1e-3, rng);
    p.validate();
    return p;
}

// ---------------------------------------------------------------------------
// TwoStepGrad forward
// ---------------------------------------------------------------------------

namespace {

// F^H P^T (P F x - y)
ComplexImage fidelity_grad(const ComplexImage& x, const KSpaceData& y) {
    ComplexImage k = fft2(x);
    ComplexImage resid(x.height, x.width);
    size_t j = 0;
    for (size_t i = 0; i < k.data.size(); ++i)
        if (y.mask.cells[i]) resid.data[i] = k.data[i] - y.values[j++];
    return ifft2(resid);
}

}  // namespace

ComplexImage unrolled_forward(const UnrolledParams& params, const KSpaceData& y, double omega,
                              int T, UnrolledTape* tape, const UnrolledOptions& opt) {
    params.validate();
    if (params.scheme != UnrollScheme::TwoStepGrad)
        throw std::invalid_argument("unrolled_forward: TwoStepGrad scheme required");
    if (T < 0) throw std::invalid_argument("unrolled_forward: T must be nonnegative");
    if (T > 0 && static_cast<int>(params.phases.size()) < UnrolledParams::slots_for(T, params.sharing))
        throw std::invalid_argument("unrolled_forward: not enough phase slots for T");

    const double kappa = sigmoid(omega);
    ComplexImage x = zero_filled(y);
    if (tape) {
        tape->y = y;
        tape->omega = omega;
        tape->x0 = x;
        tape->phases.clear();
    }

    double eps = params.eps0;
    for (int t = 0; t < T; ++t) {
        const PhaseOps& ops = params.phase(t);
        const StepSizes& st = params.steps[t];
        const double eps_t =
            t < static_cast<int>(opt.eps_override.size()) ? opt.eps_override[t] : eps;
        const double alpha_t =
            t < static_cast<int>(opt.alpha_override.size()) ? opt.alpha_override[t] : st.alpha;

        TwoStepPhaseTape pt;
        pt.t = t;
        pt.slot = params.slot_of(t);
        pt.eps_t = eps_t;
        pt.alpha_t = alpha_t;
        pt.tau_t = st.tau;
        pt.x_in = x;
        pt.gradf = fidelity_grad(x, y);

        if (opt.joint_step) {
            // x+ = x - alpha (grad f + kappa grad r_eps)(x); forward-only mode
            RegularizerSpec rs{*ops.g, eps_t, omega};
            RegValue rv = r_eps(rs, x);
            ComplexImage xn(x.height, x.width);
            for (size_t i = 0; i < x.data.size(); ++i)
                xn.data[i] = x.data[i] - alpha_t * (pt.gradf.data[i] + rv.grad.data[i]);
            x = std::move(xn);
            eps *= params.eps_gamma;
            continue;
        }

        pt.z = ComplexImage(x.height, x.width);
        for (size_t i = 0; i < x.data.size(); ++i)
            pt.z.data[i] = x.data[i] - alpha_t * pt.gradf.data[i];

        // extractor forward and the gradient of r_eps at z, recorded step by
        // step so the whole phase stays reversible
        pt.feat = conv_stack_forward(*ops.g, pt.z, &pt.stack);
        pt.s = row_norms_smoothed(pt.feat, eps_t);
        const int L = static_cast<int>(ops.g->layers.size());
        pt.cots.resize(L + 1);
        FeatureMap n(pt.feat.channels, pt.feat.height, pt.feat.width);
        for (int j = 0; j < pt.feat.positions(); ++j)
            for (int ch = 0; ch < pt.feat.channels; ++ch) n.at(ch, j) = pt.feat.at(ch, j) / pt.s[j];
        pt.cots[L] = std::move(n);
        for (int li = L - 1; li >= 0; --li) {
            const ConvLayer& l = ops.g->layers[li];
            FeatureMap cp = pt.cots[li + 1];
            if (!l.linear) {
                const FeatureMap& d = pt.stack.dact[li];
                for (size_t i = 0; i < cp.data.size(); ++i)
                    cp.data[i] = c64(cp.data[i].real() * d.data[i].real(),
                                     cp.data[i].imag() * d.data[i].imag());
            }
            FeatureMap down(l.in_ch, cp.height, cp.width);
            kernels::conv2d_adjoint_input(cp.data.data(), l.out_ch, cp.height, cp.width,
                                          l.w.data(), l.in_ch, l.k, down.data.data(),
                                          ops.g->mode);
            pt.cots[li] = std::move(down);
        }
        pt.reg_grad = image_from_feature(pt.cots[0]);

        ComplexImage xn(x.height, x.width);
        const double scale = st.tau * kappa;
        for (size_t i = 0; i < x.data.size(); ++i)
            xn.data[i] = pt.z.data[i] - scale * pt.reg_grad.data[i];
        x = std::move(xn);
        if (tape) tape->phases.push_back(std::move(pt));
        eps *= params.eps_gamma;
    }
    if (tape) tape->x_out = x;
    return x;
}

// ---------------------------------------------------------------------------
// Multi-coil phases
// ---------------------------------------------------------------------------

CoilStack landweber_step(const CoilStack& u, const std::vector<KSpaceData>& f, double rho) {
    u.validate();
    if (u.coils.size() != f.size())
        throw std::invalid_argument("landweber_step: coil count mismatch");
    CoilStack b = u;
    for (size_t i = 0; i < f.size(); ++i) {
        ComplexImage g = fidelity_grad(u.coils[i], f[i]);
        for (size_t j = 0; j < g.data.size(); ++j) b.coils[i].data[j] -= rho * g.data[j];
    }
    return b;
}

namespace {

CoilStack landweber_with_grad(const CoilStack& u, const std::vector<KSpaceData>& f, double rho,
                              CoilStack* gradf_out) {
    CoilStack b = u;
    CoilStack g(u.count(), u.height(), u.width());
    for (size_t i = 0; i < f.size(); ++i) {
        g.coils[i] = fidelity_grad(u.coils[i], f[i]);
        for (size_t j = 0; j < b.coils[i].data.size(); ++j)
            b.coils[i].data[j] -= rho * g.coils[i].data[j];
    }
    if (gradf_out) *gradf_out = std::move(g);
    return b;
}

FeatureMap coil_fft(const CoilStack& u) {
    FeatureMap out(u.count(), u.height(), u.width());
    for (int i = 0; i < u.count(); ++i) {
        ComplexImage k = fft2(u.coils[i]);
        std::copy(k.data.begin(), k.data.end(), out.plane(i));
    }
    return out;
}

CoilStack coil_ifft(const FeatureMap& f) {
    CoilStack out(f.channels, f.height, f.width);
    for (int i = 0; i < f.channels; ++i) {
        ComplexImage k(f.height, f.width);
        std::copy(f.plane(i), f.plane(i) + k.data.size(), k.data.begin());
        out.coils[i] = ifft2(k);
    }
    return out;
}

}  // namespace

CoilStack prox_phase_combine(const CoilStack& b, const PhaseOps& ops) {
    if (!ops.J || !ops.G || !ops.Gt || !ops.Jt)
        throw std::invalid_argument("prox_phase_combine: needs J, G, Gt, Jt");
    FeatureMap enc = conv_stack_forward(*ops.G, conv_stack_forward(*ops.J, feature_from_coils(b)));
    FeatureMap shr = soft_shrink(enc, ops.shrink);
    FeatureMap dec = conv_stack_forward(*ops.Jt, conv_stack_forward(*ops.Gt, shr));
    if (dec.channels != b.count())
        throw std::invalid_argument("prox_phase_combine: Jt output channels != coil count");
    CoilStack out = b;
    for (int i = 0; i < b.count(); ++i) {
        const c64* plane = dec.plane(i);
        for (size_t j = 0; j < out.coils[i].data.size(); ++j) out.coils[i].data[j] += plane[j];
    }
    return out;
}

CoilStack hybrid_phase(const CoilStack& u, const std::vector<KSpaceData>& f, const PhaseOps& ops,
                       CoilStack* u_bar_out) {
    if (!ops.J || !ops.G || !ops.Gt || !ops.Jt || !ops.K)
        throw std::invalid_argument("hybrid_phase: needs J, G, Gt, Jt, K");
    CoilStack b = landweber_step(u, f, ops.alpha);
    FeatureMap m = conv_stack_forward(
        *ops.Jt, conv_stack_forward(*ops.Gt, conv_stack_forward(
                                                 *ops.G, conv_stack_forward(*ops.J, feature_from_coils(b)))));
    CoilStack ubar = b;
    for (int i = 0; i < b.count(); ++i) {
        const c64* plane = m.plane(i);
        for (size_t j = 0; j < ubar.coils[i].data.size(); ++j) ubar.coils[i].data[j] += plane[j];
    }
    if (u_bar_out) *u_bar_out = ubar;
    FeatureMap kin = coil_fft(ubar);
    FeatureMap kout = conv_stack_forward(*ops.K, kin);
    if (kout.channels != b.count())
        throw std::invalid_argument("hybrid_phase: K output channels != coil count");
    CoilStack refine = coil_ifft(kout);
    CoilStack out = ubar;
    for (int i = 0; i < out.count(); ++i)
        for (size_t j = 0; j < out.coils[i].data.size(); ++j)
            out.coils[i].data[j] += refine.coils[i].data[j];
    return out;
}

CoilStack learned_init(const std::vector<KSpaceData>& f, const ConvStack& k0) {
    if (f.empty()) throw std::invalid_argument("learned_init: empty k-space list");
    k0.validate();
    if (k0.in_channels() != static_cast<int>(f.size()) ||
        k0.out_channels() != static_cast<int>(f.size()))
        throw std::invalid_argument("learned_init: k0 channels must match coil count");
    FeatureMap grid(static_cast<int>(f.size()), f[0].mask.height, f[0].mask.width);
    for (size_t i = 0; i < f.size(); ++i) {
        ComplexImage g = zero_fill_grid(f[i]);
        std::copy(g.data.begin(), g.data.end(), grid.plane(static_cast<int>(i)));
    }
    FeatureMap interp = conv_stack_forward(k0, grid);
    for (size_t i = 0; i < grid.data.size(); ++i) interp.data[i] += grid.data[i];
    return coil_ifft(interp);
}

// ---------------------------------------------------------------------------
// Multi-coil forward with tape
// ---------------------------------------------------------------------------

namespace {

CoilStack add_feature(const CoilStack& base, const FeatureMap& f) {
    CoilStack out = base;
    for (int i = 0; i < base.count(); ++i) {
        const c64* plane = f.plane(i);
        for (size_t j = 0; j < out.coils[i].data.size(); ++j) out.coils[i].data[j] += plane[j];
    }
    return out;
}

HybridPhaseTape hybrid_phase_taped(const CoilStack& u, const std::vector<KSpaceData>& f,
                                   const PhaseOps& ops, const StepSizes& st, int slot, int phase) {
    HybridPhaseTape t;
    t.t = phase;
    t.slot = slot;
    t.rho_t = st.alpha;
    t.u_in = u;
    t.b = landweber_with_grad(u, f, t.rho_t, &t.gradf);
    t.mJ = conv_stack_forward(*ops.J, feature_from_coils(t.b), &t.tJ);
    t.mG = conv_stack_forward(*ops.G, t.mJ, &t.tG);
    t.mGt = conv_stack_forward(*ops.Gt, t.mG, &t.tGt);
    t.mJt = conv_stack_forward(*ops.Jt, t.mGt, &t.tJt);
    t.u_bar = add_feature(t.b, t.mJt);
    t.kin = coil_fft(t.u_bar);
    t.kout = conv_stack_forward(*ops.K, t.kin, &t.tK);
    t.u_out = t.u_bar;
    CoilStack refine = coil_ifft(t.kout);
    for (int i = 0; i < t.u_out.count(); ++i)
        for (size_t j = 0; j < t.u_out.coils[i].data.size(); ++j)
            t.u_out.coils[i].data[j] += refine.coils[i].data[j];
    return t;
}

CombinePhaseTape combine_phase_taped(const CoilStack& u, const std::vector<KSpaceData>& f,
                                     const PhaseOps& ops, const StepSizes& st, int slot,
                                     int phase) {
    CombinePhaseTape t;
    t.t = phase;
    t.slot = slot;
    t.rho_t = st.alpha;
    t.shrink_t = st.shrink;
    t.u_in = u;
    t.b = landweber_with_grad(u, f, t.rho_t, &t.gradf);
    t.mJ = conv_stack_forward(*ops.J, feature_from_coils(t.b), &t.tJ);
    t.mG = conv_stack_forward(*ops.G, t.mJ, &t.tG);
    t.shrunk = soft_shrink(t.mG, t.shrink_t);
    t.mGt = conv_stack_forward(*ops.Gt, t.shrunk, &t.tGt);
    t.mJt = conv_stack_forward(*ops.Jt, t.mGt, &t.tJt);
    t.u_out = add_feature(t.b, t.mJt);
    return t;
}

InitTape init_taped(const std::vector<KSpaceData>& f, const ConvStack& k0) {
    InitTape t;
    t.f_grid = FeatureMap(static_cast<int>(f.size()), f[0].mask.height, f[0].mask.width);
    for (size_t i = 0; i < f.size(); ++i) {
        ComplexImage g = zero_fill_grid(f[i]);
        std::copy(g.data.begin(), g.data.end(), t.f_grid.plane(static_cast<int>(i)));
    }
    t.k0_out = conv_stack_forward(k0, t.f_grid, &t.tK0);
    FeatureMap sum = t.k0_out;
    for (size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += t.f_grid.data[i];
    t.u0 = coil_ifft(sum);
    return t;
}

}  // namespace

CoilStack multicoil_forward(const UnrolledParams& params, const std::vector<KSpaceData>& f,
                            int T, MultiCoilTape* tape) {
    params.validate();
    if (params.scheme == UnrollScheme::TwoStepGrad)
        throw std::invalid_argument("multicoil_forward: HybridDomain or CombineShrink scheme required");
    if (f.empty()) throw std::invalid_argument("multicoil_forward: no k-space data");

    CoilStack u(static_cast<int>(f.size()), f[0].mask.height, f[0].mask.width);
    if (params.k0) {
        if (tape) {
            tape->init = init_taped(f, *params.k0);
            u = tape->init->u0;
        } else {
            u = learned_init(f, *params.k0);
        }
    } else {
        for (size_t i = 0; i < f.size(); ++i) u.coils[i] = zero_filled(f[i]);
    }
    if (tape) {
        tape->scheme = params.scheme;
        tape->f = f;
        tape->hybrid.clear();
        tape->combine.clear();
    }

    for (int t = 0; t < T; ++t) {
        const PhaseOps& ops = params.phase(t);
        const StepSizes& st = params.steps[t];
        if (params.scheme == UnrollScheme::HybridDomain) {
            if (tape) {
                tape->hybrid.push_back(hybrid_phase_taped(u, f, ops, st, params.slot_of(t), t));
                u = tape->hybrid.back().u_out;
                if (t == T - 1) tape->u_bar_last = tape->hybrid.back().u_bar;
            } else {
                PhaseOps stepped = ops;
                stepped.alpha = st.alpha;
                stepped.shrink = st.shrink;
                CoilStack ubar;
                u = hybrid_phase(u, f, stepped, &ubar);
            }
        } else {
            if (tape) {
                tape->combine.push_back(combine_phase_taped(u, f, ops, st, params.slot_of(t), t));
                u = tape->combine.back().u_out;
            } else {
                PhaseOps stepped = ops;
                stepped.alpha = st.alpha;
                stepped.shrink = st.shrink;
                u = prox_phase_combine(landweber_step(u, f, st.alpha), stepped);
            }
        }
    }
    if (tape) tape->u_out = u;
    return u;
}

}  // namespace conviction
