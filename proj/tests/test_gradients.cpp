#include <doctest.h>

#include "conviction/gradients.hpp"
#include "test_support.hpp"

using namespace conviction;
using namespace conviction::testing;

namespace {

UnrolledParams twostep_params(Rng& rng, int T, Sharing sharing) {
    UnrolledParams p;
    p.scheme = UnrollScheme::TwoStepGrad;
    p.T = T;
    p.sharing = sharing;
    const int slots = UnrolledParams::slots_for(T, sharing);
    for (int i = 0; i < slots; ++i) {
        PhaseOps ops;
        ops.g = make_stack(2, 1, 2, 3, 0.05, rng);
        p.phases.push_back(std::move(ops));
    }
    for (int t = 0; t < T; ++t)
        p.steps.push_back(StepSizes{0.06 + 0.01 * t, 0.05 + 0.01 * t, 0.0});
    return p;
}

UnrolledParams coil_params(Rng& rng, UnrollScheme scheme, int T, int coils, bool with_k0) {
    UnrolledParams p;
    p.scheme = scheme;
    p.T = T;
    p.sharing = Sharing::PerPhase;
    for (int i = 0; i < T; ++i) {
        PhaseOps ops;
        ops.J = make_stack(2, coils, 3, 3, 0.05, rng, 1);
        ops.G = make_stack(2, 1, 3, 3, 0.05, rng);
        ops.Gt = make_stack(2, 3, 3, 3, 0.05, rng, 1);
        ops.Jt = make_stack(2, 1, 3, 3, 0.05, rng, coils);
        if (scheme == UnrollScheme::HybridDomain)
            ops.K = make_stack(2, coils, 3, 3, 0.05, rng, coils);
        p.phases.push_back(std::move(ops));
        p.steps.push_back(StepSizes{0.08, 0.01, 0.15});
    }
    if (with_k0) p.k0 = make_stack(2, coils, coils, 3, 0.05, rng);
    return p;
}

Sample make_sample(Rng& rng, int n, uint64_t mask_seed) {
    Sample s;
    s.ref = random_image(n, n, rng);
    s.y = forward_op(random_image(n, n, rng),
                     make_mask(MaskPattern::UniformRandom, 0.5, n, n, mask_seed));
    return s;
}

CoilSample make_coil_sample(Rng& rng, int coils, int n, uint64_t mask_seed) {
    CoilSample s;
    SamplingMask mask = make_mask(MaskPattern::UniformRandom, 0.5, n, n, mask_seed);
    s.ref = CoilStack(coils, n, n);
    for (auto& c : s.ref.coils) c = random_image(n, n, rng);
    for (int i = 0; i < coils; ++i) s.f.push_back(forward_op(random_image(n, n, rng), mask));
    return s;
}

}  // namespace

TEST_CASE("layout, pack and unpack round trip") {
    Rng rng(61);
    UnrolledParams p = twostep_params(rng, 2, Sharing::PerPhase);
    ParamLayout lay = build_layout(p);
    CHECK(lay.total > 0);
    CHECK(lay.has("phase0.g.w0"));
    CHECK(lay.has("step1.alpha"));
    CHECK(lay.has("step1.tau"));
    std::vector<double> flat = pack_params(p);
    CHECK(flat.size() == lay.total);
    UnrolledParams q = p;
    for (auto& l : q.phases[0].g->layers) std::fill(l.w.begin(), l.w.end(), c64(0, 0));
    q.steps[0].alpha = 0.0;
    unpack_params(q, flat);
    CHECK(pack_params(q) == flat);
    CHECK(q.steps[0].alpha == p.steps[0].alpha);
}

TEST_CASE("T = 0 and zero-cotangent batches give zero bundles") {
    Rng rng(62);
    UnrolledParams p = twostep_params(rng, 1, Sharing::Shared);
    Sample s = make_sample(rng, 8, 3);
    LossSpec loss = make_loss(LossKind::ReconL2);
    SUBCASE("T = 0") {
        BatchGrad bg = backprop_unrolled(p, {s}, 0.0, loss, 0);
        CHECK(bg.grad.inf_norm() == 0.0);
    }
    SUBCASE("output equal to reference (zero cotangent)") {
        Sample t = s;
        t.ref = unrolled_forward(p, t.y, 0.0, 1);
        BatchGrad bg = backprop_unrolled(p, {t}, 0.0, loss, 1);
        CHECK(bg.loss == 0.0);
        CHECK(bg.grad.inf_norm() == 0.0);
    }
}

TEST_CASE("unrolled parameter gradients match finite differences (8x8, T=2)") {
    for (Sharing sharing : {Sharing::PerPhase, Sharing::Shared}) {
        Rng rng(sharing == Sharing::PerPhase ? 63 : 64);
        UnrolledParams p = twostep_params(rng, 2, sharing);
        std::vector<Sample> batch{make_sample(rng, 8, 5), make_sample(rng, 8, 6)};
        LossSpec loss = make_loss(LossKind::ReconL2);
        const double omega = 0.25;
        BatchGrad bg = backprop_unrolled(p, batch, omega, loss, 2);

        std::vector<double> flat = pack_params(p);
        auto loss_at = [&](const std::vector<double>& th, double om) {
            UnrolledParams q = p;
            unpack_params(q, th);
            double acc = 0.0;
            for (const Sample& s : batch)
                acc += loss_eval(loss, unrolled_forward(q, s.y, om, 2), s.ref).value;
            return acc / static_cast<double>(batch.size());
        };

        const double h = 1e-6;
        double worst = 0.0;
        Rng pick(99);
        for (int t = 0; t < 60; ++t) {
            const size_t i = pick.next_below(flat.size());
            std::vector<double> tp = flat, tm = flat;
            tp[i] += h;
            tm[i] -= h;
            const double fd = (loss_at(tp, omega) - loss_at(tm, omega)) / (2 * h);
            worst = std::max(worst, rel_err(bg.grad.values[i], fd));
        }
        {
            const double fd = (loss_at(flat, omega + h) - loss_at(flat, omega - h)) / (2 * h);
            worst = std::max(worst, rel_err(bg.grad.d_omega, fd));
        }
        CAPTURE(to_string(sharing));
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("unrolled gradients hold for split-real mode, pair sharing and 1-layer stacks") {
    struct Case {
        Sharing sharing;
        ConvMode mode;
        int layers;
        int T;
    };
    for (const Case cs : {Case{Sharing::SharedPairs, ConvMode::Complex, 2, 3},
                          Case{Sharing::PerPhase, ConvMode::SplitReal, 2, 2},
                          Case{Sharing::Shared, ConvMode::Complex, 1, 2}}) {
        Rng rng(80 + cs.layers + static_cast<int>(cs.mode));
        UnrolledParams p;
        p.scheme = UnrollScheme::TwoStepGrad;
        p.T = cs.T;
        p.sharing = cs.sharing;
        const int slots = UnrolledParams::slots_for(cs.T, cs.sharing);
        for (int i = 0; i < slots; ++i) {
            PhaseOps ops;
            ops.g = make_stack(cs.layers, 1, 2, 3, 0.05, rng, -1, cs.mode);
            p.phases.push_back(std::move(ops));
        }
        for (int t = 0; t < cs.T; ++t) p.steps.push_back(StepSizes{0.06, 0.05, 0.0});

        std::vector<Sample> batch{make_sample(rng, 8, 90 + cs.T)};
        LossSpec loss = make_loss(LossKind::ReconL2);
        const double omega = 0.15;
        BatchGrad bg = backprop_unrolled(p, batch, omega, loss, cs.T);

        std::vector<double> flat = pack_params(p);
        auto loss_at = [&](const std::vector<double>& th) {
            UnrolledParams q = p;
            unpack_params(q, th);
            return loss_eval(loss, unrolled_forward(q, batch[0].y, omega, cs.T), batch[0].ref).value;
        };
        const double h = 1e-6;
        double worst = 0.0;
        Rng pick(7);
        for (int t = 0; t < 40; ++t) {
            const size_t i = pick.next_below(flat.size());
            std::vector<double> tp = flat, tm = flat;
            tp[i] += h;
            tm[i] -= h;
            const double fd = (loss_at(tp) - loss_at(tm)) / (2 * h);
            worst = std::max(worst, rel_err(bg.grad.values[i], fd));
        }
        CAPTURE(static_cast<int>(cs.sharing));
        CAPTURE(static_cast<int>(cs.mode));
        CAPTURE(cs.layers);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("mlm single linear phase reproduces the chain rule") {
    // one TwoStepGrad phase with tau = 0 is exactly the linear map
    // u1 = (I - alpha A) u0 + alpha A^H y; the multiplier recursion must give
    // lambda(0) = (I - alpha A)^H lambda(1) and the loss gradient in alpha.
    Rng rng(65);
    UnrolledParams p = twostep_params(rng, 1, Sharing::PerPhase);
    p.steps[0].tau = 0.0;
    Sample s = make_sample(rng, 8, 8);
    LossSpec loss = make_loss(LossKind::ReconL2);
    BatchGrad ml = mlm_gradients(p, {s}, 0.0, loss, 1);
    BatchGrad bp = backprop_unrolled(p, {s}, 0.0, loss, 1);
    CHECK(std::abs(ml.grad.view("step0.alpha")[0] - bp.grad.view("step0.alpha")[0]) < 1e-14);
    // tau = 0 means the extractor cannot influence the output
    const ParamEntry& e = ml.grad.layout.find("phase0.g.w0");
    for (size_t i = e.offset; i < e.offset + e.count; ++i) CHECK(ml.grad.values[i] == 0.0);
}

TEST_CASE("mlm equals backprop on two-phase networks") {
    for (int seed = 0; seed < 5; ++seed) {
        Rng rng(70 + seed);
        UnrolledParams p = twostep_params(rng, 2, Sharing::PerPhase);
        std::vector<Sample> batch{make_sample(rng, 8, 20 + seed)};
        LossSpec loss = make_loss(LossKind::ReconL2);
        BatchGrad bp = backprop_unrolled(p, batch, 0.4, loss, 2);
        BatchGrad ml = mlm_gradients(p, batch, 0.4, loss, 2);
        double worst = 0.0;
        for (size_t i = 0; i < bp.grad.values.size(); ++i)
            worst = std::max(worst, std::abs(bp.grad.values[i] - ml.grad.values[i]));
        worst = std::max(worst, std::abs(bp.grad.d_omega - ml.grad.d_omega));
        CHECK(worst <= 1e-10);
    }
}

TEST_CASE("zero loss gradient gives a zero mlm bundle") {
    Rng rng(75);
    UnrolledParams p = twostep_params(rng, 2, Sharing::PerPhase);
    Sample s = make_sample(rng, 8, 31);
    s.ref = unrolled_forward(p, s.y, 0.1, 2);
    BatchGrad ml = mlm_gradients(p, {s}, 0.1, make_loss(LossKind::ReconL2), 2);
    CHECK(ml.grad.inf_norm() == 0.0);
}

TEST_CASE("hybrid-domain gradients match finite differences") {
    Rng rng(76);
    const int coils = 2, n = 8;
    UnrolledParams p = coil_params(rng, UnrollScheme::HybridDomain, 2, coils, true);
    CoilSample s = make_coil_sample(rng, coils, n, 41);
    LossSpec loss = make_loss(LossKind::MultiTermCoil);
    loss.weights["gamma"] = 0.5;
    loss.weights["eta"] = 0.3;
    loss.combiner = std::make_shared<ConvStack>(make_stack(2, coils, 3, 3, 0.05, rng, 1));

    BatchGrad bg = backprop_unrolled(p, std::vector<CoilSample>{s}, loss, 2);
    std::vector<double> flat = pack_params(p);
    auto loss_at = [&](const std::vector<double>& th) {
        UnrolledParams q = p;
        unpack_params(q, th);
        MultiCoilTape tape;
        CoilStack uT = multicoil_forward(q, s.f, 2, &tape);
        return loss_eval(loss, uT, tape.u_bar_last, s.ref).value;
    };
    const double h = 1e-6;
    double worst = 0.0;
    Rng pick(123);
    for (int t = 0; t < 50; ++t) {
        const size_t i = pick.next_below(flat.size());
        std::vector<double> tp = flat, tm = flat;
        tp[i] += h;
        tm[i] -= h;
        const double fd = (loss_at(tp) - loss_at(tm)) / (2 * h);
        worst = std::max(worst, rel_err(bg.grad.values[i], fd));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("combine-shrink gradients match finite differences") {
    Rng rng(77);
    const int coils = 2, n = 8;
    UnrolledParams p = coil_params(rng, UnrollScheme::CombineShrink, 2, coils, false);
    CoilSample s = make_coil_sample(rng, coils, n, 43);
    LossSpec loss = make_loss(LossKind::RssMagnitude);
    loss.weights["gamma"] = 0.5;
    loss.combiner = std::make_shared<ConvStack>(make_stack(2, coils, 3, 3, 0.05, rng, 1));

    BatchGrad bg = backprop_unrolled(p, std::vector<CoilSample>{s}, loss, 2);
    std::vector<double> flat = pack_params(p);
    auto loss_at = [&](const std::vector<double>& th) {
        UnrolledParams q = p;
        unpack_params(q, th);
        CoilStack uT = multicoil_forward(q, s.f, 2);
        return loss_eval(loss, uT, uT, s.ref).value;
    };
    const double h = 1e-6;
    double worst = 0.0;
    Rng pick(321);
    for (int t = 0; t < 50; ++t) {
        const size_t i = pick.next_below(flat.size());
        std::vector<double> tp = flat, tm = flat;
        tp[i] += h;
        tm[i] -= h;
        const double fd = (loss_at(tp) - loss_at(tm)) / (2 * h);
        worst = std::max(worst, rel_err(bg.grad.values[i], fd));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("mlm equals backprop on the multi-coil schemes") {
    Rng rng(78);
    const int coils = 2, n = 8;
    UnrolledParams p = coil_params(rng, UnrollScheme::HybridDomain, 2, coils, true);
    CoilSample s = make_coil_sample(rng, coils, n, 47);
    LossSpec loss = make_loss(LossKind::MultiTermCoil);
    loss.combiner = std::make_shared<ConvStack>(make_stack(2, coils, 3, 3, 0.05, rng, 1));
    BatchGrad bp = backprop_unrolled(p, std::vector<CoilSample>{s}, loss, 2);
    BatchGrad ml = mlm_gradients(p, std::vector<CoilSample>{s}, loss, 2);
    double worst = 0.0;
    for (size_t i = 0; i < bp.grad.values.size(); ++i)
        worst = std::max(worst, std::abs(bp.grad.values[i] - ml.grad.values[i]));
    CHECK(worst <= 1e-10);
}
