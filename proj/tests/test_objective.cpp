#include <doctest.h>

#include "conviction/objective.hpp"
#include "conviction/phantom.hpp"
#include "test_support.hpp"

using namespace conviction;
using namespace conviction::testing;

namespace {

ObjectiveSpec single_var_spec(const KSpaceData& y, Rng& rng, bool with_reg) {
    ObjectiveSpec spec;
    spec.num_variables = 1;
    spec.data_terms.push_back(y);
    if (with_reg)
        spec.regularizers.push_back(RegularizerSpec{make_stack(2, 1, 2, 3, 0.05, rng), 0.1, 0.2});
    else
        spec.regularizers.emplace_back();
    return spec;
}

ObjectiveSpec joint_spec(const KSpaceData& y1, const KSpaceData& y2, Rng& rng) {
    ObjectiveSpec spec;
    spec.num_variables = 3;
    spec.data_terms = {y1, y2, std::nullopt};
    for (int i = 0; i < 3; ++i)
        spec.regularizers.push_back(RegularizerSpec{make_stack(2, 1, 2, 3, 0.05, rng), 0.1,
                                                    rng.uniform(-0.5, 0.5)});
    ObjectiveSpec::Coupling cp;
    cp.op = SynthesisOperator{make_stack(2, 4, 2, 3, 0.05, rng, 1)};
    cp.gamma = 0.8;
    cp.target = 2;
    spec.coupling = cp;
    return spec;
}

}  // namespace

TEST_CASE("no regularizers and zero residual give zero value and gradients") {
    Rng rng(21);
    ComplexImage x = random_image(6, 6, rng);
    SamplingMask mask = make_mask(MaskPattern::Radial, 0.5, 6, 6, 1);
    KSpaceData y = forward_op(x, mask);
    ObjectiveSpec spec = single_var_spec(y, rng, false);
    ObjectiveEval ev = objective_eval(spec, {x}, 0.1);
    CHECK(ev.value < 1e-24);
    CHECK(norm2(ev.grads[0].data) < 1e-12);
}

TEST_CASE("one-variable objective is exactly fidelity plus regularizer") {
    Rng rng(22);
    ComplexImage x = random_image(6, 6, rng);
    KSpaceData y = forward_op(random_image(6, 6, rng), make_mask(MaskPattern::Radial, 0.5, 6, 6, 2));
    ObjectiveSpec spec = single_var_spec(y, rng, true);
    const double eps = 0.07;
    const double direct = objective_value(spec, {x}, eps);
    RegularizerSpec rs = *spec.regularizers[0];
    rs.eps = eps;
    CHECK(direct ==
          doctest::Approx(data_fidelity(x, y).value + r_eps_value(rs, x)).epsilon(1e-14));
    // split halves agree with the combined evaluation
    ObjectiveEval full = objective_eval(spec, {x}, eps);
    ObjectiveEval s = smooth_part_eval(spec, {x});
    ObjectiveEval r = reg_part_eval(spec, {x}, eps);
    CHECK(full.value == doctest::Approx(s.value + r.value).epsilon(1e-14));
}

TEST_CASE("full 3-variable gradient matches finite differences") {
    Rng rng(23);
    SamplingMask mask = make_mask(MaskPattern::Radial, 0.55, 6, 6, 3);
    KSpaceData y1 = forward_op(random_image(6, 6, rng), mask);
    KSpaceData y2 = forward_op(random_image(6, 6, rng), mask);
    ObjectiveSpec spec = joint_spec(y1, y2, rng);
    std::vector<ComplexImage> state{random_image(6, 6, rng), random_image(6, 6, rng),
                                    random_image(6, 6, rng)};
    const double eps = 0.1;
    ObjectiveEval ev = objective_eval(spec, state, eps);
    const double h = 1e-6;
    double worst = 0.0;
    for (int var = 0; var < 3; ++var) {
        for (int t = 0; t < 12; ++t) {
            const size_t i = rng.next_below(state[var].data.size());
            for (int part = 0; part < 2; ++part) {
                auto sp = state, sm = state;
                const c64 dz = part == 0 ? c64(h, 0) : c64(0, h);
                sp[var].data[i] += dz;
                sm[var].data[i] -= dz;
                const double fd =
                    (objective_value(spec, sp, eps) - objective_value(spec, sm, eps)) / (2 * h);
                const double an =
                    part == 0 ? ev.grads[var].data[i].real() : ev.grads[var].data[i].imag();
                worst = std::max(worst, rel_err(an, fd));
            }
        }
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("coupling requires 3 variables and positive gamma") {
    Rng rng(24);
    KSpaceData y = forward_op(random_image(6, 6, rng), make_mask(MaskPattern::Full, 1, 6, 6, 0));
    ObjectiveSpec spec = single_var_spec(y, rng, true);
    ObjectiveSpec::Coupling cp;
    cp.op = SynthesisOperator{make_stack(2, 4, 2, 3, 0.05, rng, 1)};
    spec.coupling = cp;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}
