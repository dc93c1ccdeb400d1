#pragma once

#include <string>

#include "conviction/objective.hpp"

namespace conviction {

struct LOAConfig {
    double alpha0 = 0.01;        // initial data/objective step
    double tau0 = 0.01;          // initial regularizer step (candidate branch)
    double a = 1e5;              // safeguard constant
    double sigma = 1e3;          // eps-reduction scale
    double rho = 0.9;            // backtracking factor
    double gamma_reduce = 0.9;   // eps reduction factor
    double eps0 = 1e-3;
    double eps_tol = 1e-3;       // terminate when sigma * eps < eps_tol
    int t_max = 400;
    int max_backtracks = 100;

    void validate() const;
};

struct PhaseRecord {
    int phase = 0;
    double phi = 0.0;        // phi_{eps_t}(x_t) entering the phase
    double eps = 0.0;        // eps_t used during the phase
    double alpha = 0.0;      // accepted step size
    char branch = 'v';       // 'u' or 'v'
    double grad_norm_pre = 0.0;   // ||grad phi_eps(x_t)||
    double grad_norm = 0.0;       // ||grad phi_eps(x_{t+1})||, drives the eps trigger
    int backtracks = 0;
    double step_norm = 0.0;       // ||x_{t+1} - x_t||
    double phi_after = 0.0;       // phi_{eps_t}(x_{t+1})
    double eps_next = 0.0;        // eps_{t+1} after the reduction rule
};

enum class Termination { Tolerance, MaxPhases };

struct SolveResult {
    std::vector<ComplexImage> x_final;
    std::vector<PhaseRecord> trace;
    Termination terminated_by = Termination::MaxPhases;
    int position_count = 0;  // m of the phi + m*eps descent certificate
    double final_eps = 0.0;
};

/// Line search exceeded max-backtracks: the theory guarantees finitely many,
/// so this signals a gradient implementation bug in the objective.
struct LineSearchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// The convergent algorithm: candidate step z - tau grad R_eps(z) with
/// certificate checks, safeguarded by a line-searched gradient step, plus the
/// eps-reduction rule and tolerance termination.
SolveResult loa_solve(const ObjectiveSpec& spec, const std::vector<ComplexImage>& x0,
                      const LOAConfig& cfg);

/// Safeguard-only variant: pure line-searched gradient descent on phi_eps
/// with the same eps mechanism.
SolveResult gd_smooth_solve(const ObjectiveSpec& spec, const std::vector<ComplexImage>& x0,
                            const LOAConfig& cfg);

/// Write the trace as CSV: phase,phi,eps,alpha,branch,grad_norm,backtracks.
void write_trace_csv(const std::string& path, const SolveResult& res);

/// Number of eps reductions the geometry dictates before sigma*eps < eps_tol:
/// the smallest l with sigma * eps0 * gamma^l < eps_tol (0 if already below).
int expected_eps_reductions(double eps0, double sigma, double gamma_reduce, double eps_tol);

}  // namespace conviction
