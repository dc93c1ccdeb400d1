#pragma once

#include <functional>
#include <string>

#include "conviction/checkpoint.hpp"
#include "conviction/gradients.hpp"

namespace conviction {

/// One sampling task: a mask, its task weight logit, and its data splits.
struct TaskSpec {
    std::string id;
    SamplingMask mask;
    double omega = 0.0;
    std::vector<Sample> train_pairs;
    std::vector<Sample> val_pairs;

    void validate() const;
};

struct BilevelConfig {
    int K = 5;                  // inner theta steps per omega step
    double rho_theta = 1e-3;
    double rho_omega = 1e-3;
    double delta0 = 1e-3;
    double nu_delta = 0.95;
    double delta_tol = 4.35e-6;
    double lambda0 = 1e-5;
    double nu_lambda = 1.001;
    int batch_tr = 8;
    int batch_val = 8;
    int max_outer = 100000;
    int inner_cap = 200;  // inner-loop step cap; exceeding records a stall
    uint64_t seed = 0;

    void validate() const;  // 0 < nu_delta < 1 < nu_lambda
};

// ---------------------------------------------------------------------------
// Generic penalty machinery over flat parameter vectors (also drives the
// closed-form toy problems in the tests).
// ---------------------------------------------------------------------------

struct LossGrad {
    double value = 0.0;
    std::vector<double> g_theta;
    std::vector<double> g_omega;
};

/// Batch indices are per task: batch[i] indexes into task i's split.
using Batch = std::vector<std::vector<int>>;

class PenaltyProblem {
  public:
    virtual ~PenaltyProblem() = default;
    virtual LossGrad train_loss(const std::vector<double>& theta,
                                const std::vector<double>& omega, const Batch& batch) = 0;
    virtual LossGrad val_loss(const std::vector<double>& theta, const std::vector<double>& omega,
                              const Batch& batch) = 0;
    virtual int task_count() const = 0;
    virtual int train_size(int task) const = 0;
    virtual int val_size(int task) const = 0;
};

struct PenaltyEval {
    double value = 0.0;
    std::vector<double> grad_theta;
    std::vector<double> grad_omega;
    double train_grad_norm = 0.0;  // ||grad_theta L_tr||
    double train_value = 0.0;
    double val_value = 0.0;
};

/// L_val + (lambda/2) ||grad_theta L_tr||^2 with gradients. The Hessian-vector
/// product and the mixed omega term use central finite differences with
/// h = sqrt(machine eps) (1 + ||theta||) / ||v||.
PenaltyEval penalty_objective(PenaltyProblem& prob, const std::vector<double>& theta,
                              const std::vector<double>& omega, const Batch& batch_tr,
                              const Batch& batch_val, double lambda);

struct BilevelHistoryRow {
    int outer = 0;
    double delta = 0.0;
    double lambda = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double train_grad_norm = 0.0;
    int inner_steps = 0;
    bool inner_stalled = false;
};

struct BilevelResult {
    std::vector<double> theta;
    std::vector<double> omega;
    std::vector<BilevelHistoryRow> history;
    int delta_reductions = 0;
    double final_delta = 0.0;
    double final_lambda = 0.0;
};

/// Alternating-direction penalty loop: K theta steps then one omega step until
/// the squared gradient norms fall below delta, then delta *= nu_delta,
/// lambda *= nu_lambda; stops when delta <= delta_tol or max_outer.
BilevelResult bilevel_minimize(PenaltyProblem& prob, std::vector<double> theta,
                               std::vector<double> omega, const BilevelConfig& cfg);

// ---------------------------------------------------------------------------
// Network training front ends.
// ---------------------------------------------------------------------------

struct TrainHistoryRow {
    long epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_psnr = 0.0;
    int active_T = 0;
};

struct StairSchedule {
    bool enabled = false;
    int plateau_epochs = 10;
    double rel_threshold = 1e-4;
};

struct ConventionalConfig {
    long epochs = 100;
    AdamConfig adam;     // lr default 1e-3
    int batch_size = 25;
    uint64_t seed = 0;
    StairSchedule stair;
    LossSpec loss;
};

/// Plain Adam minimization of the task training loss; omega fixed. Resumable:
/// continues from ck.epoch with per-epoch batch order derived from the seed,
/// so a reloaded checkpoint reproduces the continuation exactly.
std::vector<TrainHistoryRow> conventional_train(const TaskSpec& task, TrainingCheckpoint& ck,
                                                const ConventionalConfig& cfg);

struct BilevelTrainResult {
    UnrolledParams params;
    std::vector<double> task_omegas;
    std::vector<BilevelHistoryRow> history;
    std::vector<std::vector<double>> task_psnr;  // per history row, per task
    int delta_reductions = 0;
};

/// Penalty-method training of the shared parameters plus per-task weights.
BilevelTrainResult bilevel_train(const std::vector<TaskSpec>& tasks, const UnrolledParams& params0,
                                 const BilevelConfig& cfg, const LossSpec& loss, int T);

void write_history_csv(const std::string& path, const std::vector<TrainHistoryRow>& rows);
void write_bilevel_history_csv(const std::string& path, const BilevelTrainResult& res);

/// Mean reconstruction PSNR of the unrolled network over a sample list.
double mean_psnr(const UnrolledParams& params, double omega, const std::vector<Sample>& samples,
                 int T);

}  // namespace conviction
