#include <doctest.h>

#include "conviction/phantom.hpp"
#include "conviction/training.hpp"
#include "test_support.hpp"

using namespace conviction;
using namespace conviction::testing;

namespace {

// L_tr(theta, omega) = 0.5 sum_i a_i (theta_i - c_i - 0.1 omega_0)^2
// L_val(theta)       = 0.5 sum_i (theta_i - d_i)^2
struct ToyQuadratic : PenaltyProblem {
    std::vector<double> a, c, d;

    std::vector<double> target(const std::vector<double>& omega) const {
        std::vector<double> t(c);
        for (double& x : t) x += 0.1 * omega[0];
        return t;
    }
    LossGrad train_loss(const std::vector<double>& theta, const std::vector<double>& omega,
                        const Batch&) override {
        LossGrad out;
        out.g_theta.assign(theta.size(), 0.0);
        out.g_omega.assign(omega.size(), 0.0);
        const std::vector<double> t = target(omega);
        for (size_t i = 0; i < theta.size(); ++i) {
            const double r = theta[i] - t[i];
            out.value += 0.5 * a[i] * r * r;
            out.g_theta[i] = a[i] * r;
            out.g_omega[0] += -0.1 * a[i] * r;
        }
        return out;
    }
    LossGrad val_loss(const std::vector<double>& theta, const std::vector<double>& omega,
                      const Batch&) override {
        LossGrad out;
        out.g_theta.assign(theta.size(), 0.0);
        out.g_omega.assign(omega.size(), 0.0);
        for (size_t i = 0; i < theta.size(); ++i) {
            const double r = theta[i] - d[i];
            out.value += 0.5 * r * r;
            out.g_theta[i] = r;
        }
        return out;
    }
    int task_count() const override { return 1; }
    int train_size(int) const override { return 1; }
    int val_size(int) const override { return 1; }
};

ToyQuadratic make_toy() {
    ToyQuadratic toy;
    toy.a = {1.0, 2.0};
    toy.c = {0.3, -0.4};
    toy.d = {0.31, -0.39};  // validation optimum close to the lower-level one
    return toy;
}

TaskSpec phantom_task(int n, double ratio, int train_count, int val_count, uint64_t seed) {
    TaskSpec task;
    task.id = "test";
    task.mask = make_mask(MaskPattern::Radial, ratio, n, n, seed);
    task.omega = 0.0;
    Rng rng(split_seed(seed, "task"));
    for (int i = 0; i < train_count + val_count; ++i) {
        Sample s;
        s.ref = i == 0 ? shepp_logan(n) : shepp_logan_variant(n, PhantomVariant::Classic, rng);
        s.y = forward_op(s.ref, task.mask);
        if (i < train_count)
            task.train_pairs.push_back(std::move(s));
        else
            task.val_pairs.push_back(std::move(s));
    }
    return task;
}

UnrolledParams tiny_net(uint64_t seed, int T) {
    UnrolledParams p;
    p.scheme = UnrollScheme::TwoStepGrad;
    p.T = T;
    p.sharing = Sharing::Shared;
    Rng rng(seed);
    PhaseOps ops;
    ops.g = make_stack(3, 1, 2, 3, 1e-3, rng);
    p.phases.push_back(std::move(ops));
    p.steps.assign(T, StepSizes{0.1, 0.05, 0.0});
    return p;
}

}  // namespace

TEST_CASE("penalty objective basics on the toy") {
    ToyQuadratic toy = make_toy();
    Batch b{{0}};
    std::vector<double> theta{0.1, 0.2}, omega{0.5};

    SUBCASE("lambda = 0 reduces to the validation loss") {
        PenaltyEval ev = penalty_objective(toy, theta, omega, b, b, 0.0);
        LossGrad val = toy.val_loss(theta, omega, b);
        CHECK(ev.value == doctest::Approx(val.value));
        for (size_t i = 0; i < theta.size(); ++i)
            CHECK(ev.grad_theta[i] == doctest::Approx(val.g_theta[i]));
    }
    SUBCASE("at the lower-level minimizer the penalty contributes nothing") {
        std::vector<double> star = toy.target(omega);
        PenaltyEval ev = penalty_objective(toy, star, omega, b, b, 3.0);
        LossGrad val = toy.val_loss(star, omega, b);
        CHECK(ev.value == doctest::Approx(val.value));
        for (size_t i = 0; i < star.size(); ++i)
            CHECK(ev.grad_theta[i] == doctest::Approx(val.g_theta[i]));
    }
    SUBCASE("gradients match full finite differences of the value") {
        const double lambda = 2.5;
        PenaltyEval ev = penalty_objective(toy, theta, omega, b, b, lambda);
        const double h = 1e-5;
        for (size_t i = 0; i < theta.size(); ++i) {
            auto tp = theta, tm = theta;
            tp[i] += h;
            tm[i] -= h;
            const double fd = (penalty_objective(toy, tp, omega, b, b, lambda).value -
                               penalty_objective(toy, tm, omega, b, b, lambda).value) /
                              (2 * h);
            CHECK(rel_err(ev.grad_theta[i], fd) < 5e-3);
        }
        auto op = omega, om = omega;
        op[0] += h;
        om[0] -= h;
        const double fd = (penalty_objective(toy, theta, op, b, b, lambda).value -
                           penalty_objective(toy, theta, om, b, b, lambda).value) /
                          (2 * h);
        CHECK(rel_err(ev.grad_omega[0], fd) < 5e-3);
    }
}

TEST_CASE("bilevel schedules are exactly geometric") {
    ToyQuadratic toy = make_toy();
    BilevelConfig cfg;
    cfg.K = 1;
    cfg.rho_theta = 1e-2;
    cfg.rho_omega = 1e-3;
    cfg.delta0 = 1.0;
    cfg.nu_delta = 0.5;
    cfg.delta_tol = 1e-3;
    cfg.lambda0 = 0.1;
    cfg.nu_lambda = 1.5;
    cfg.inner_cap = 50;
    BilevelResult res = bilevel_minimize(toy, {0.0, 0.0}, {0.0}, cfg);
    double want_delta = cfg.delta0, want_lambda = cfg.lambda0;
    for (const auto& row : res.history) {
        CHECK(row.delta == want_delta);    // bit-exact repeated product
        CHECK(row.lambda == want_lambda);
        want_delta *= cfg.nu_delta;
        want_lambda *= cfg.nu_lambda;
    }
    // reduction count: smallest k with delta0 nu^k <= delta_tol
    int k = 0;
    double dd = cfg.delta0;
    while (dd > cfg.delta_tol) {
        dd *= cfg.nu_delta;
        ++k;
    }
    CHECK(res.delta_reductions == k);
    CHECK(k == 10);  // 0.5^10 = 1/1024 <= 1e-3 < 0.5^9
}

TEST_CASE("published schedule constants give 107 delta reductions") {
    // ceil(log(4.35e-6 / 1e-3) / log 0.95) = ceil(106.0096...) = 107
    int k = 0;
    double dd = 1e-3;
    while (dd > 4.35e-6) {
        dd *= 0.95;
        ++k;
    }
    CHECK(k == 107);
    CHECK(static_cast<int>(std::ceil(std::log(4.35e-6 / 1e-3) / std::log(0.95))) == 107);
}

TEST_CASE("quadratic toy: theta reaches the lower-level minimizer as lambda grows") {
    ToyQuadratic toy = make_toy();
    toy.d = {0.31, -0.39};
    BilevelConfig cfg;
    cfg.K = 1;
    cfg.rho_theta = 2e-3;
    cfg.rho_omega = 1e-3;
    cfg.delta0 = 1e-2;
    cfg.nu_delta = 0.9;
    cfg.delta_tol = 1e-6;
    cfg.lambda0 = 0.5;
    cfg.nu_lambda = 1.08;
    cfg.max_outer = 80;
    cfg.inner_cap = 4000;
    BilevelResult res = bilevel_minimize(toy, {0.0, 0.0}, {0.2}, cfg);
    CHECK(res.history.back().lambda > 1e2);
    CHECK(res.history.back().train_grad_norm < 1e-4);
    const std::vector<double> star = toy.target(res.omega);
    CHECK(std::abs(res.theta[0] - star[0]) < 1e-3);
    CHECK(std::abs(res.theta[1] - star[1]) < 1e-3);
}

TEST_CASE("conventional training") {
    SUBCASE("lr = 0 leaves parameters unchanged") {
        TaskSpec task = phantom_task(16, 0.4, 2, 1, 3);
        TrainingCheckpoint ck;
        ck.params = tiny_net(7, 2);
        std::vector<double> before = pack_params(ck.params);
        ConventionalConfig cfg;
        cfg.epochs = 2;
        cfg.adam.lr = 0.0;
        cfg.batch_size = 2;
        cfg.loss = make_loss(LossKind::ReconL2);
        conventional_train(task, ck, cfg);
        CHECK(pack_params(ck.params) == before);
    }
    SUBCASE("loss decreases on the phantom task") {
        TaskSpec task = phantom_task(16, 0.4, 3, 1, 5);
        TrainingCheckpoint ck;
        ck.params = tiny_net(11, 2);
        ConventionalConfig cfg;
        cfg.epochs = 30;
        cfg.adam.lr = 2e-3;
        cfg.batch_size = 3;
        cfg.seed = 2;
        cfg.loss = make_loss(LossKind::ReconL2);
        auto history = conventional_train(task, ck, cfg);
        CHECK(history.size() == 30);
        CHECK(history.back().train_loss < history.front().train_loss);
    }
    SUBCASE("resume continues bit-identically") {
        TaskSpec task = phantom_task(16, 0.4, 3, 1, 9);
        ConventionalConfig cfg;
        cfg.epochs = 4;
        cfg.adam.lr = 1e-3;
        cfg.batch_size = 2;
        cfg.seed = 13;
        cfg.loss = make_loss(LossKind::ReconL2);

        TrainingCheckpoint full;
        full.params = tiny_net(21, 2);
        auto hist_full = conventional_train(task, full, cfg);

        TrainingCheckpoint half;
        half.params = tiny_net(21, 2);
        ConventionalConfig cfg3 = cfg;
        cfg3.epochs = 3;
        conventional_train(task, half, cfg3);
        auto hist_resumed = conventional_train(task, half, cfg);  // one more epoch

        CHECK(hist_resumed.size() == 1);
        CHECK(hist_resumed[0].train_loss == hist_full[3].train_loss);
        CHECK(pack_params(half.params) == pack_params(full.params));
        CHECK(half.adam.m == full.adam.m);
    }
    SUBCASE("stair schedule grows the active depth") {
        TaskSpec task = phantom_task(16, 0.4, 2, 1, 15);
        TrainingCheckpoint ck;
        ck.params = tiny_net(31, 3);
        ConventionalConfig cfg;
        cfg.epochs = 40;
        cfg.adam.lr = 1e-3;
        cfg.batch_size = 2;
        cfg.loss = make_loss(LossKind::ReconL2);
        cfg.stair.enabled = true;
        cfg.stair.plateau_epochs = 3;
        cfg.stair.rel_threshold = 0.5;  // aggressive plateau detection for the test
        auto history = conventional_train(task, ck, cfg);
        CHECK(history.front().active_T == 1);
        CHECK(history.back().active_T == 3);
    }
}

TEST_CASE("a starved inner loop is reported as a stall, not an error") {
    ToyQuadratic toy = make_toy();
    BilevelConfig cfg;
    cfg.K = 1;
    cfg.rho_theta = 1e-6;  // far too small to satisfy the inner condition
    cfg.rho_omega = 1e-6;
    cfg.delta0 = 1e-12;
    cfg.nu_delta = 0.5;
    cfg.delta_tol = 1e-13;
    cfg.lambda0 = 0.1;
    cfg.nu_lambda = 1.5;
    cfg.inner_cap = 4;
    BilevelResult res = bilevel_minimize(toy, {5.0, -5.0}, {0.0}, cfg);
    REQUIRE(!res.history.empty());
    bool any_stall = false;
    for (const auto& row : res.history) any_stall = any_stall || row.inner_stalled;
    CHECK(any_stall);
    CHECK(res.delta_reductions == static_cast<int>(res.history.size()));
}

TEST_CASE("bilevel training on the network runs and records history") {
    std::vector<TaskSpec> tasks{phantom_task(12, 0.35, 2, 1, 41), phantom_task(12, 0.5, 2, 1, 43)};
    UnrolledParams p0 = tiny_net(51, 2);
    BilevelConfig cfg;
    cfg.K = 2;
    cfg.rho_theta = 1e-3;
    cfg.rho_omega = 1e-3;
    cfg.delta0 = 10.0;
    cfg.nu_delta = 0.5;
    cfg.delta_tol = 1.0;
    cfg.lambda0 = 1e-5;
    cfg.nu_lambda = 1.001;
    cfg.batch_tr = 2;
    cfg.batch_val = 1;
    cfg.inner_cap = 10;
    cfg.seed = 3;
    LossSpec loss = make_loss(LossKind::ReconL2);
    BilevelTrainResult res = bilevel_train(tasks, p0, cfg, loss, 2);
    CHECK(res.delta_reductions == 4);  // 10 * 0.5^4 = 0.625 <= 1
    CHECK(res.history.size() == 4);
    CHECK(res.task_omegas.size() == 2);
}
