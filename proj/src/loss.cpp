#include "conviction/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace conviction {

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "recon-l2") return LossKind::ReconL2;
    if (s == "rss-magnitude") return LossKind::RssMagnitude;
    if (s == "multi-term-coil") return LossKind::MultiTermCoil;
    if (s == "joint-synthesis") return LossKind::JointSynthesis;
    throw std::invalid_argument("unknown loss kind: " + s);
}

double LossSpec::weight(const std::string& name) const {
    auto it = weights.find(name);
    if (it == weights.end())
        throw std::invalid_argument("loss: missing required weight '" + name + "'");
    return it->second;
}

LossSpec make_loss(LossKind kind) {
    LossSpec s;
    s.kind = kind;
    switch (kind) {
        case LossKind::ReconL2: break;
        case LossKind::RssMagnitude: s.weights["gamma"] = 1e5; break;
        case LossKind::MultiTermCoil:
            s.weights["gamma"] = 1e-3;
            s.weights["eta"] = 1e-4;
            break;
        case LossKind::JointSynthesis: s.weights["mu"] = 0.1; break;
    }
    return s;
}

namespace {

// ||a - b|| over real images plus the cotangent (a - b)/||a - b|| on a.
double l2_diff(const RealImage& a, const RealImage& b, RealImage* cot) {
    KahanSum k;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        k.add(d * d);
    }
    const double n = std::sqrt(k.value());
    if (cot) {
        *cot = RealImage(a.height, a.width);
        if (n > 0)
            for (size_t i = 0; i < a.data.size(); ++i)
                cot->data[i] = (a.data[i] - b.data[i]) / n;
    }
    return n;
}

double l2_diff_complex(const ComplexImage& a, const ComplexImage& b, ComplexImage* cot) {
    KahanSum k;
    for (size_t i = 0; i < a.data.size(); ++i) k.add(std::norm(a.data[i] - b.data[i]));
    const double n = std::sqrt(k.value());
    if (cot) {
        *cot = ComplexImage(a.height, a.width);
        if (n > 0)
            for (size_t i = 0; i < a.data.size(); ++i) cot->data[i] = (a.data[i] - b.data[i]) / n;
    }
    return n;
}

RealImage magnitude(const ComplexImage& x) {
    RealImage m(x.height, x.width);
    for (size_t i = 0; i < x.data.size(); ++i) m.data[i] = std::abs(x.data[i]);
    return m;
}

// chain a real cotangent on |x| back to x: cot_x = cot_mag * x / |x|
ComplexImage chain_modulus(const RealImage& cot_mag, const ComplexImage& x) {
    ComplexImage out(x.height, x.width);
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double m = std::abs(x.data[i]);
        if (m > 0) out.data[i] = cot_mag.data[i] * x.data[i] / m;
    }
    return out;
}

// chain a real cotangent on rss(u) back to every coil: cot_ui = cot_s * u_i / s
void chain_rss(const RealImage& cot_s, const CoilStack& u, const RealImage& s, CoilStack& cot_u) {
    for (int i = 0; i < u.count(); ++i)
        for (size_t p = 0; p < u.coils[i].data.size(); ++p)
            if (s.data[p] > 0)
                cot_u.coils[i].data[p] += cot_s.data[p] * u.coils[i].data[p] / s.data[p];
}

void add_scaled(CoilStack& dst, const CoilStack& src, double c) {
    for (int i = 0; i < dst.count(); ++i)
        for (size_t p = 0; p < dst.coils[i].data.size(); ++p)
            dst.coils[i].data[p] += c * src.coils[i].data[p];
}

}  // namespace

LossImage loss_eval(const LossSpec& spec, const ComplexImage& out, const ComplexImage& ref) {
    if (spec.kind != LossKind::ReconL2)
        throw std::invalid_argument("loss_eval(image): only ReconL2 takes a single image");
    if (!out.same_shape(ref)) throw std::invalid_argument("loss_eval: shape mismatch");
    LossImage r;
    r.cot = ComplexImage(out.height, out.width);
    KahanSum k;
    for (size_t i = 0; i < out.data.size(); ++i) {
        const c64 d = out.data[i] - ref.data[i];
        k.add(std::norm(d));
        r.cot.data[i] = d;
    }
    r.value = 0.5 * k.value();
    return r;
}

LossCoil loss_eval(const LossSpec& spec, const CoilStack& u, const CoilStack& u_bar,
                   const CoilStack& ref) {
    if (spec.kind != LossKind::RssMagnitude && spec.kind != LossKind::MultiTermCoil)
        throw std::invalid_argument("loss_eval(coil): RssMagnitude or MultiTermCoil required");
    if (!spec.combiner) throw std::invalid_argument("loss_eval: combiner stack J required");
    u.validate();
    ref.validate();

    LossCoil r;
    r.cot = CoilStack(u.count(), u.height(), u.width());
    const RealImage s_ref = rss(ref);

    if (spec.kind == LossKind::RssMagnitude) {
        const double gamma = spec.weight("gamma");
        const RealImage s_u = rss(u);
        RealImage cot_s;
        r.value = l2_diff(s_u, s_ref, &cot_s);
        chain_rss(cot_s, u, s_u, r.cot);

        FeatureMap uf = feature_from_coils(u);
        StackTape tape;
        FeatureMap jf = conv_stack_forward(*spec.combiner, uf, &tape);
        ComplexImage j_img = image_from_feature(jf);
        RealImage j_mag = magnitude(j_img);
        RealImage cot_mag;
        const double t2 = l2_diff(j_mag, s_ref, &cot_mag);
        r.value += gamma * t2;
        for (double& v : cot_mag.data) v *= gamma;
        ComplexImage cot_j = chain_modulus(cot_mag, j_img);
        StackVjpResult vj = conv_stack_vjp_with_tape(*spec.combiner, tape, feature_from_image(cot_j));
        add_scaled(r.cot, coils_from_feature(vj.grad_input), 1.0);
        return r;
    }

    // MultiTermCoil: per-coil misfit on u, magnitude and RSS terms on u_bar
    u_bar.validate();
    const double gamma = spec.weight("gamma");
    const double eta = spec.weight("eta");
    r.has_ubar = true;
    r.cot_ubar = CoilStack(u.count(), u.height(), u.width());

    KahanSum value;
    for (int i = 0; i < u.count(); ++i) {
        ComplexImage cot_i;
        const double t = l2_diff_complex(u.coils[i], ref.coils[i], &cot_i);
        value.add(gamma * t);
        for (size_t p = 0; p < cot_i.data.size(); ++p)
            r.cot.coils[i].data[p] += gamma * cot_i.data[p];
    }

    FeatureMap ubf = feature_from_coils(u_bar);
    StackTape tape;
    FeatureMap jf = conv_stack_forward(*spec.combiner, ubf, &tape);
    ComplexImage j_img = image_from_feature(jf);
    RealImage j_mag = magnitude(j_img);
    RealImage cot_mag;
    value.add(l2_diff(j_mag, s_ref, &cot_mag));
    ComplexImage cot_j = chain_modulus(cot_mag, j_img);
    StackVjpResult vj = conv_stack_vjp_with_tape(*spec.combiner, tape, feature_from_image(cot_j));
    add_scaled(r.cot_ubar, coils_from_feature(vj.grad_input), 1.0);

    const RealImage s_ubar = rss(u_bar);
    RealImage cot_s;
    value.add(eta * l2_diff(s_ubar, s_ref, &cot_s));
    for (double& v : cot_s.data) v *= eta;
    chain_rss(cot_s, u_bar, s_ubar, r.cot_ubar);

    r.value = value.value();
    return r;
}

LossTriple loss_eval(const LossSpec& spec, const std::vector<ComplexImage>& out,
                     const std::vector<ComplexImage>& ref) {
    if (spec.kind != LossKind::JointSynthesis)
        throw std::invalid_argument("loss_eval(triple): JointSynthesis required");
    if (out.size() != 3 || ref.size() != 3)
        throw std::invalid_argument("loss_eval: JointSynthesis needs three variables");
    if (!spec.h1 || !spec.h2 || !spec.fuser)
        throw std::invalid_argument("loss_eval: JointSynthesis needs h1, h2 and the fuser");
    const double mu = spec.weight("mu");

    LossTriple r;
    r.cots.reserve(3);
    MetricsOptions mopt;
    KahanSum value;
    for (int j = 0; j < 3; ++j) {
        ComplexImage cot(out[j].height, out[j].width);
        KahanSum l2;
        for (size_t i = 0; i < out[j].data.size(); ++i) {
            const c64 d = out[j].data[i] - ref[j].data[i];
            l2.add(std::norm(d));
            cot.data[i] = d;
        }
        value.add(0.5 * l2.value());

        RealImage xm = magnitude(out[j]), rm = magnitude(ref[j]);
        RealImage ssim_grad;
        const double s = ssim_mean(xm, rm, mopt, &ssim_grad);
        value.add(1.0 - s);
        for (double& v : ssim_grad.data) v = -v;
        ComplexImage cot_ssim = chain_modulus(ssim_grad, out[j]);
        for (size_t i = 0; i < cot.data.size(); ++i) cot.data[i] += cot_ssim.data[i];
        r.cots.push_back(std::move(cot));
    }

    // synthesis consistency on the references; independent of the network output
    FeatureMap f1 = conv_stack_forward(*spec.h1, ref[0]);
    FeatureMap f2 = conv_stack_forward(*spec.h2, ref[1]);
    ComplexImage syn = synthesis_fuse(*spec.fuser, f1, f2);
    KahanSum sterm;
    for (size_t i = 0; i < syn.data.size(); ++i) sterm.add(std::norm(syn.data[i] - ref[2].data[i]));
    value.add(0.5 * mu * sterm.value());

    r.value = value.value();
    return r;
}

}  // namespace conviction
