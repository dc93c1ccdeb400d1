#include "conviction/objective.hpp"

#include <stdexcept>

namespace conviction {

void ObjectiveSpec::validate() const {
    if (num_variables != 1 && num_variables != 3)
        throw std::invalid_argument("ObjectiveSpec: 1 or 3 variables");
    if (static_cast<int>(data_terms.size()) != num_variables ||
        static_cast<int>(regularizers.size()) != num_variables)
        throw std::invalid_argument("ObjectiveSpec: per-variable lists must match num_variables");
    if (coupling) {
        if (num_variables != 3)
            throw std::invalid_argument("ObjectiveSpec: coupling requires 3-variable mode");
        if (!(coupling->gamma > 0.0))
            throw std::invalid_argument("ObjectiveSpec: coupling gamma must be positive");
        if (coupling->target < 0 || coupling->target >= num_variables)
            throw std::invalid_argument("ObjectiveSpec: coupling target out of range");
    }
    for (const auto& r : regularizers)
        if (r) r->validate();
}

int ObjectiveSpec::position_count(const std::vector<ComplexImage>& state) const {
    int m = 0;
    for (int i = 0; i < num_variables; ++i)
        if (regularizers[i]) m += state[i].height * state[i].width;
    return m;
}

namespace {

void check_state(const ObjectiveSpec& spec, const std::vector<ComplexImage>& state) {
    spec.validate();
    if (static_cast<int>(state.size()) != spec.num_variables)
        throw std::invalid_argument("objective: state size mismatch");
    for (int i = 0; i < spec.num_variables; ++i) {
        if (spec.data_terms[i]) {
            const SamplingMask& m = spec.data_terms[i]->mask;
            if (state[i].height != m.height || state[i].width != m.width)
                throw std::invalid_argument("objective: state/mask shape mismatch");
        }
    }
}

std::vector<ComplexImage> zero_like(const std::vector<ComplexImage>& state) {
    std::vector<ComplexImage> g;
    g.reserve(state.size());
    for (const auto& x : state) g.emplace_back(x.height, x.width);
    return g;
}

// Extractor stacks and residual for the synthesis coupling term.
struct CouplingEval {
    double value = 0.0;
    ComplexImage residual;  // g_theta([h1(x1), h2(x2)]) - x_target
    FeatureMap f_a, f_b;
    StackTape tape_a, tape_b;
};

CouplingEval coupling_forward(const ObjectiveSpec& spec, const std::vector<ComplexImage>& state) {
    const auto& cp = *spec.coupling;
    const RegularizerSpec& ra = *spec.regularizers[cp.source_a];
    const RegularizerSpec& rb = *spec.regularizers[cp.source_b];
    CouplingEval ev;
    ev.f_a = conv_stack_forward(ra.extractor, state[cp.source_a], &ev.tape_a);
    ev.f_b = conv_stack_forward(rb.extractor, state[cp.source_b], &ev.tape_b);
    ComplexImage syn = synthesis_fuse(cp.op, ev.f_a, ev.f_b);
    ev.residual = ComplexImage(syn.height, syn.width);
    KahanSum v;
    for (size_t i = 0; i < syn.data.size(); ++i) {
        ev.residual.data[i] = syn.data[i] - state[cp.target].data[i];
        v.add(std::norm(ev.residual.data[i]));
    }
    ev.value = 0.5 * cp.gamma * v.value();
    return ev;
}

}  // namespace

ObjectiveEval smooth_part_eval(const ObjectiveSpec& spec, const std::vector<ComplexImage>& state) {
    check_state(spec, state);
    ObjectiveEval out;
    out.grads = zero_like(state);
    KahanSum value;
    for (int i = 0; i < spec.num_variables; ++i) {
        if (!spec.data_terms[i]) continue;
        FidelityResult fr = data_fidelity(state[i], *spec.data_terms[i]);
        value.add(fr.value);
        for (size_t j = 0; j < fr.grad.data.size(); ++j) out.grads[i].data[j] += fr.grad.data[j];
    }
    if (spec.coupling) {
        const auto& cp = *spec.coupling;
        CouplingEval ev = coupling_forward(spec, state);
        value.add(ev.value);
        // d/dx_target = -gamma * residual
        for (size_t j = 0; j < ev.residual.data.size(); ++j)
            out.grads[cp.target].data[j] -= cp.gamma * ev.residual.data[j];
        // chain through g_theta and the feature extractors for the sources
        ComplexImage cot = ev.residual;
        for (c64& z : cot.data) z *= cp.gamma;
        SynthesisVjp sv = synthesis_vjp(cp.op, ev.f_a, ev.f_b, cot);
        StackVjpResult va = conv_stack_vjp_with_tape(spec.regularizers[cp.source_a]->extractor,
                                                     ev.tape_a, sv.grad_f1);
        StackVjpResult vb = conv_stack_vjp_with_tape(spec.regularizers[cp.source_b]->extractor,
                                                     ev.tape_b, sv.grad_f2);
        for (size_t j = 0; j < va.grad_input.data.size(); ++j)
            out.grads[cp.source_a].data[j] += va.grad_input.data[j];
        for (size_t j = 0; j < vb.grad_input.data.size(); ++j)
            out.grads[cp.source_b].data[j] += vb.grad_input.data[j];
    }
    out.value = value.value();
    return out;
}

double smooth_part_value(const ObjectiveSpec& spec, const std::vector<ComplexImage>& state) {
    check_state(spec, state);
    KahanSum value;
    for (int i = 0; i < spec.num_variables; ++i) {
        if (!spec.data_terms[i]) continue;
        ComplexImage k = fft2(state[i]);
        const KSpaceData& y = *spec.data_terms[i];
        size_t j = 0;
        KahanSum v;
        for (size_t c = 0; c < k.data.size(); ++c)
            if (y.mask.cells[c]) v.add(std::norm(k.data[c] - y.values[j++]));
        value.add(0.5 * v.value());
    }
    if (spec.coupling) value.add(coupling_forward(spec, state).value);
    return value.value();
}

ObjectiveEval reg_part_eval(const ObjectiveSpec& spec, const std::vector<ComplexImage>& state,
                            double eps) {
    check_state(spec, state);
    ObjectiveEval out;
    out.grads = zero_like(state);
    KahanSum value;
    for (int i = 0; i < spec.num_variables; ++i) {
        if (!spec.regularizers[i]) continue;
        RegularizerSpec rs = *spec.regularizers[i];
        rs.eps = eps;
        RegValue rv = r_eps(rs, state[i]);
        value.add(rv.value);
        for (size_t j = 0; j < rv.grad.data.size(); ++j) out.grads[i].data[j] += rv.grad.data[j];
    }
    out.value = value.value();
    return out;
}

double reg_part_value(const ObjectiveSpec& spec, const std::vector<ComplexImage>& state,
                      double eps) {
    check_state(spec, state);
    KahanSum value;
    for (int i = 0; i < spec.num_variables; ++i) {
        if (!spec.regularizers[i]) continue;
        RegularizerSpec rs = *spec.regularizers[i];
        rs.eps = eps;
        value.add(r_eps_value(rs, state[i]));
    }
    return value.value();
}

ObjectiveEval objective_eval(const ObjectiveSpec& spec, const std::vector<ComplexImage>& state,
                             double eps) {
    ObjectiveEval a = smooth_part_eval(spec, state);
    ObjectiveEval b = reg_part_eval(spec, state, eps);
    a.value += b.value;
    for (size_t i = 0; i < a.grads.size(); ++i)
        for (size_t j = 0; j < a.grads[i].data.size(); ++j) a.grads[i].data[j] += b.grads[i].data[j];
    return a;
}

double objective_value(const ObjectiveSpec& spec, const std::vector<ComplexImage>& state,
                       double eps) {
    return smooth_part_value(spec, state) + reg_part_value(spec, state, eps);
}

}  // namespace conviction
