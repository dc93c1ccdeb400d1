#include "conviction/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "conviction/metrics.hpp"
#include "conviction/rng.hpp"

namespace conviction {

void TaskSpec::validate() const {
    if (train_pairs.empty() || val_pairs.empty())
        throw std::invalid_argument("TaskSpec: nonempty train/val splits required");
}

void BilevelConfig::validate() const {
    if (!(nu_delta > 0.0 && nu_delta < 1.0 && nu_lambda > 1.0))
        throw std::invalid_argument("BilevelConfig: need 0 < nu_delta < 1 < nu_lambda");
    if (!(delta0 > 0.0) || !(delta_tol > 0.0) || !(lambda0 > 0.0))
        throw std::invalid_argument("BilevelConfig: delta0, delta_tol, lambda0 must be positive");
    if (K <= 0 || batch_tr <= 0 || batch_val <= 0 || max_outer <= 0 || inner_cap <= 0)
        throw std::invalid_argument("BilevelConfig: counts must be positive");
}

// ---------------------------------------------------------------------------
// Penalty objective
// ---------------------------------------------------------------------------

namespace {

double vec_norm(const std::vector<double>& v) {
    KahanSum k;
    for (double x : v) k.add(x * x);
    return std::sqrt(k.value());
}

double vec_dot(const std::vector<double>& a, const std::vector<double>& b) {
    KahanSum k;
    for (size_t i = 0; i < a.size(); ++i) k.add(a[i] * b[i]);
    return k.value();
}

}  // namespace

PenaltyEval penalty_objective(PenaltyProblem& prob, const std::vector<double>& theta,
                              const std::vector<double>& omega, const Batch& batch_tr,
                              const Batch& batch_val, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("penalty_objective: lambda must be nonnegative");
    LossGrad tr = prob.train_loss(theta, omega, batch_tr);
    LossGrad val = prob.val_loss(theta, omega, batch_val);

    PenaltyEval out;
    out.train_value = tr.value;
    out.val_value = val.value;
    out.train_grad_norm = vec_norm(tr.g_theta);
    out.value = val.value + 0.5 * lambda * out.train_grad_norm * out.train_grad_norm;
    out.grad_theta = val.g_theta;
    out.grad_omega = val.g_omega;

    if (lambda > 0.0 && out.train_grad_norm > 0.0) {
        const std::vector<double>& v = tr.g_theta;
        const double hscale = std::sqrt(std::numeric_limits<double>::epsilon());
        const double h = hscale * (1.0 + vec_norm(theta)) / out.train_grad_norm;

        // Hessian-vector product by central differences of grad_theta L_tr
        std::vector<double> tp = theta, tm = theta;
        for (size_t i = 0; i < theta.size(); ++i) {
            tp[i] += h * v[i];
            tm[i] -= h * v[i];
        }
        LossGrad gp = prob.train_loss(tp, omega, batch_tr);
        LossGrad gm = prob.train_loss(tm, omega, batch_tr);
        for (size_t i = 0; i < theta.size(); ++i)
            out.grad_theta[i] += lambda * (gp.g_theta[i] - gm.g_theta[i]) / (2.0 * h);

        // mixed d/d omega of 0.5||grad_theta L_tr||^2, one central difference
        // per omega component
        for (size_t i = 0; i < omega.size(); ++i) {
            const double hw = hscale * (1.0 + std::abs(omega[i]));
            std::vector<double> op = omega, om = omega;
            op[i] += hw;
            om[i] -= hw;
            LossGrad wp = prob.train_loss(theta, op, batch_tr);
            LossGrad wm = prob.train_loss(theta, om, batch_tr);
            std::vector<double> dgdw(theta.size());
            for (size_t j = 0; j < theta.size(); ++j)
                dgdw[j] = (wp.g_theta[j] - wm.g_theta[j]) / (2.0 * hw);
            out.grad_omega[i] += lambda * vec_dot(v, dgdw);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bilevel driver
// ---------------------------------------------------------------------------

namespace {

Batch sample_batch(PenaltyProblem& prob, bool validation, int per_task, Rng& rng) {
    Batch b(prob.task_count());
    for (int i = 0; i < prob.task_count(); ++i) {
        const int n = validation ? prob.val_size(i) : prob.train_size(i);
        const int take = std::min(per_task, n);
        std::vector<int> idx(n);
        for (int j = 0; j < n; ++j) idx[j] = j;
        for (int j = n; j > 1; --j) std::swap(idx[j - 1], idx[rng.next_below(j)]);
        b[i].assign(idx.begin(), idx.begin() + take);
    }
    return b;
}

}  // namespace

BilevelResult bilevel_minimize(PenaltyProblem& prob, std::vector<double> theta,
                               std::vector<double> omega, const BilevelConfig& cfg) {
    cfg.validate();
    Rng rng(split_seed(cfg.seed, "bilevel"));
    BilevelResult res;
    double delta = cfg.delta0;
    double lambda = cfg.lambda0;
    int outer = 0;
    while (delta > cfg.delta_tol && outer < cfg.max_outer) {
        Batch btr = sample_batch(prob, false, cfg.batch_tr, rng);
        Batch bval = sample_batch(prob, true, cfg.batch_val, rng);

        BilevelHistoryRow row;
        row.outer = outer;
        row.delta = delta;
        row.lambda = lambda;
        int steps = 0;
        for (;;) {
            PenaltyEval ev = penalty_objective(prob, theta, omega, btr, bval, lambda);
            const double gsq =
                vec_dot(ev.grad_theta, ev.grad_theta) + vec_dot(ev.grad_omega, ev.grad_omega);
            row.train_loss = ev.train_value;
            row.val_loss = ev.val_value;
            row.train_grad_norm = ev.train_grad_norm;
            if (gsq <= delta) break;
            if (steps >= cfg.inner_cap) {
                row.inner_stalled = true;  // recorded, not fatal
                break;
            }
            for (int k = 0; k < cfg.K; ++k) {
                PenaltyEval evk =
                    k == 0 ? ev : penalty_objective(prob, theta, omega, btr, bval, lambda);
                for (size_t i = 0; i < theta.size(); ++i)
                    theta[i] -= cfg.rho_theta * evk.grad_theta[i];
                ++steps;
            }
            PenaltyEval evw = penalty_objective(prob, theta, omega, btr, bval, lambda);
            for (size_t i = 0; i < omega.size(); ++i) omega[i] -= cfg.rho_omega * evw.grad_omega[i];
            ++steps;
        }
        row.inner_steps = steps;
        res.history.push_back(row);
        delta *= cfg.nu_delta;
        lambda *= cfg.nu_lambda;
        ++res.delta_reductions;
        ++outer;
    }
    res.theta = std::move(theta);
    res.omega = std::move(omega);
    res.final_delta = delta;
    res.final_lambda = lambda;
    return res;
}

// ---------------------------------------------------------------------------
// Conventional (single-task) training
// ---------------------------------------------------------------------------

std::vector<TrainHistoryRow> conventional_train(const TaskSpec& task, TrainingCheckpoint& ck,
                                                const ConventionalConfig& cfg) {
    task.validate();
    std::vector<double> theta = pack_params(ck.params);
    std::vector<TrainHistoryRow> history;

    int active_T = cfg.stair.enabled ? 1 : ck.params.T;
    double best_loss = std::numeric_limits<double>::infinity();
    int since_best = 0;

    for (long epoch = ck.epoch; epoch < cfg.epochs; ++epoch) {
        // deterministic per-epoch order: resume reproduces the run exactly
        Rng erng(split_seed(cfg.seed, "epoch" + std::to_string(epoch)));
        std::vector<int> order(task.train_pairs.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[erng.next_below(i)]);

        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<Sample> batch;
            for (size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
                batch.push_back(task.train_pairs[order[i]]);
            BatchGrad bg = backprop_unrolled(ck.params, batch, task.omega, cfg.loss, active_T);
            epoch_loss += bg.loss;
            ++batches;
            adam_update(theta, bg.grad.values, ck.adam, cfg.adam);
            unpack_params(ck.params, theta);
        }
        epoch_loss /= std::max(1, batches);

        TrainHistoryRow row;
        row.epoch = epoch;
        row.train_loss = epoch_loss;
        row.active_T = active_T;
        {
            double vloss = 0.0;
            for (const Sample& s : task.val_pairs) {
                ComplexImage xT = unrolled_forward(ck.params, s.y, task.omega, active_T);
                vloss += loss_eval(cfg.loss, xT, s.ref).value;
            }
            row.val_loss = vloss / static_cast<double>(task.val_pairs.size());
            row.val_psnr = mean_psnr(ck.params, task.omega, task.val_pairs, active_T);
        }
        history.push_back(row);

        if (cfg.stair.enabled && active_T < ck.params.T) {
            if (epoch_loss < best_loss * (1.0 - cfg.stair.rel_threshold)) {
                best_loss = epoch_loss;
                since_best = 0;
            } else if (++since_best >= cfg.stair.plateau_epochs) {
                ++active_T;
                best_loss = std::numeric_limits<double>::infinity();
                since_best = 0;
            }
        } else if (epoch_loss < best_loss) {
            best_loss = epoch_loss;
        }
        ck.epoch = epoch + 1;
    }
    return history;
}

// ---------------------------------------------------------------------------
// Bilevel training of the unrolled network
// ---------------------------------------------------------------------------

namespace {

class UnrolledPenaltyProblem : public PenaltyProblem {
  public:
    UnrolledPenaltyProblem(const std::vector<TaskSpec>& tasks, const UnrolledParams& base,
                           const LossSpec& loss, int T)
        : tasks_(tasks), base_(base), loss_(loss), T_(T) {}

    LossGrad eval(const std::vector<double>& theta, const std::vector<double>& omega,
                  const Batch& batch, bool validation) {
        UnrolledParams p = base_;
        unpack_params(p, theta);
        LossGrad out;
        out.g_theta.assign(theta.size(), 0.0);
        out.g_omega.assign(omega.size(), 0.0);
        for (size_t i = 0; i < tasks_.size(); ++i) {
            const auto& pairs = validation ? tasks_[i].val_pairs : tasks_[i].train_pairs;
            std::vector<Sample> batch_samples;
            for (int idx : batch[i]) batch_samples.push_back(pairs[idx]);
            if (batch_samples.empty()) continue;
            BatchGrad bg = backprop_unrolled(p, batch_samples, omega[i], loss_, T_);
            out.value += bg.loss;
            for (size_t j = 0; j < theta.size(); ++j) out.g_theta[j] += bg.grad.values[j];
            out.g_omega[i] += bg.grad.d_omega;
        }
        return out;
    }

    LossGrad train_loss(const std::vector<double>& theta, const std::vector<double>& omega,
                        const Batch& batch) override {
        return eval(theta, omega, batch, false);
    }
    LossGrad val_loss(const std::vector<double>& theta, const std::vector<double>& omega,
                      const Batch& batch) override {
        return eval(theta, omega, batch, true);
    }
    int task_count() const override { return static_cast<int>(tasks_.size()); }
    int train_size(int task) const override {
        return static_cast<int>(tasks_[task].train_pairs.size());
    }
    int val_size(int task) const override { return static_cast<int>(tasks_[task].val_pairs.size()); }

  private:
    const std::vector<TaskSpec>& tasks_;
    UnrolledParams base_;
    LossSpec loss_;
    int T_;
};

}  // namespace

double mean_psnr(const UnrolledParams& params, double omega, const std::vector<Sample>& samples,
                 int T) {
    double acc = 0.0;
    for (const Sample& s : samples) {
        ComplexImage xT = unrolled_forward(params, s.y, omega, T);
        acc += metrics(xT, s.ref).psnr;
    }
    return acc / static_cast<double>(samples.size());
}

BilevelTrainResult bilevel_train(const std::vector<TaskSpec>& tasks, const UnrolledParams& params0,
                                 const BilevelConfig& cfg, const LossSpec& loss, int T) {
    if (tasks.empty()) throw std::invalid_argument("bilevel_train: nonempty tasks required");
    for (const TaskSpec& t : tasks) t.validate();
    UnrolledPenaltyProblem prob(tasks, params0, loss, T);
    std::vector<double> theta = pack_params(params0);
    std::vector<double> omega;
    for (const TaskSpec& t : tasks) omega.push_back(t.omega);

    BilevelResult r = bilevel_minimize(prob, std::move(theta), std::move(omega), cfg);

    BilevelTrainResult out;
    out.params = params0;
    unpack_params(out.params, r.theta);
    out.task_omegas = r.omega;
    out.history = std::move(r.history);
    out.delta_reductions = r.delta_reductions;
    for (size_t i = 0; i < out.history.size(); ++i) out.task_psnr.emplace_back();
    // final per-task PSNR recorded on the last row for reporting
    if (!out.history.empty()) {
        auto& last = out.task_psnr.back();
        for (size_t i = 0; i < tasks.size(); ++i)
            last.push_back(mean_psnr(out.params, out.task_omegas[i], tasks[i].val_pairs, T));
    }
    return out;
}

void write_history_csv(const std::string& path, const std::vector<TrainHistoryRow>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.precision(17);
    f << "epoch,train_loss,val_loss,val_psnr,active_T\n";
    for (const auto& r : rows)
        f << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_psnr << ','
          << r.active_T << '\n';
}

void write_bilevel_history_csv(const std::string& path, const BilevelTrainResult& res) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.precision(17);
    f << "outer,train_loss,val_loss,delta,lambda";
    const size_t ntask = res.task_omegas.size();
    for (size_t i = 0; i < ntask; ++i) f << ",task" << i << "_psnr";
    f << '\n';
    for (size_t r = 0; r < res.history.size(); ++r) {
        const auto& row = res.history[r];
        f << row.outer << ',' << row.train_loss << ',' << row.val_loss << ',' << row.delta << ','
          << row.lambda;
        for (size_t i = 0; i < ntask; ++i) {
            if (r < res.task_psnr.size() && i < res.task_psnr[r].size())
                f << ',' << res.task_psnr[r][i];
            else
                f << ",";
        }
        f << '\n';
    }
}

}  // namespace conviction
