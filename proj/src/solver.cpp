#include "conviction/solver.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace conviction {

void LOAConfig::validate() const {
    if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("LOAConfig: rho in (0,1)");
    if (!(gamma_reduce > 0.0 && gamma_reduce < 1.0))
        throw std::invalid_argument("LOAConfig: gamma_reduce in (0,1)");
    if (!(eps0 > 0.0)) throw std::invalid_argument("LOAConfig: eps0 must be positive");
    if (eps_tol < 0.0) throw std::invalid_argument("LOAConfig: eps_tol must be nonnegative");
    if (!(alpha0 > 0.0 && tau0 > 0.0 && a > 0.0 && sigma > 0.0))
        throw std::invalid_argument("LOAConfig: step/safeguard constants must be positive");
    if (t_max <= 0 || max_backtracks <= 0)
        throw std::invalid_argument("LOAConfig: t_max and max_backtracks must be positive");
}

namespace {

using State = std::vector<ComplexImage>;

double state_norm(const State& s) {
    KahanSum k;
    for (const auto& img : s)
        for (const auto& z : img.data) k.add(std::norm(z));
    return std::sqrt(k.value());
}

double diff_norm(const State& a, const State& b) {
    KahanSum k;
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < a[i].data.size(); ++j) k.add(std::norm(a[i].data[j] - b[i].data[j]));
    return std::sqrt(k.value());
}

State axpy(const State& x, double c, const State& d) {  // x + c*d
    State out = x;
    for (size_t i = 0; i < out.size(); ++i)
        for (size_t j = 0; j < out[i].data.size(); ++j) out[i].data[j] += c * d[i].data[j];
    return out;
}

State add(const State& a, const State& b) {
    State out = a;
    for (size_t i = 0; i < out.size(); ++i)
        for (size_t j = 0; j < out[i].data.size(); ++j) out[i].data[j] += b[i].data[j];
    return out;
}

bool has_regularizer(const ObjectiveSpec& spec) {
    for (const auto& r : spec.regularizers)
        if (r) return true;
    return false;
}

SolveResult solve_impl(const ObjectiveSpec& spec, const State& x0, const LOAConfig& cfg,
                       bool candidate_branch) {
    cfg.validate();
    spec.validate();
    const bool has_reg = has_regularizer(spec);

    SolveResult res;
    res.position_count = spec.position_count(x0);
    State x = x0;
    double eps = cfg.eps0;
    double alpha = cfg.alpha0;  // carried over between phases after backtracking
    const double tau = cfg.tau0;

    // entry state of phase 0
    ObjectiveEval smooth = smooth_part_eval(spec, x);
    ObjectiveEval reg = has_reg ? reg_part_eval(spec, x, eps)
                                : ObjectiveEval{0.0, std::vector<ComplexImage>()};
    auto full_grad = [&](const ObjectiveEval& s, const ObjectiveEval& r) {
        return has_reg ? add(s.grads, r.grads) : s.grads;
    };
    double phi = smooth.value + reg.value;
    State gphi = full_grad(smooth, reg);

    for (int t = 0; t < cfg.t_max; ++t) {
        PhaseRecord rec;
        rec.phase = t;
        rec.phi = phi;
        rec.eps = eps;
        rec.grad_norm_pre = state_norm(gphi);

        State x_next;
        double phi_next = 0.0;
        bool accepted = false;

        if (candidate_branch && has_reg) {
            // z = x - alpha grad f(x); u = z - tau grad R_eps(z)
            State z = axpy(x, -alpha, smooth.grads);
            ObjectiveEval reg_z = reg_part_eval(spec, z, eps);
            State u = axpy(z, -tau, reg_z.grads);
            const double step = diff_norm(u, x);
            if (rec.grad_norm_pre <= cfg.a * step) {
                const double phi_u = objective_value(spec, u, eps);
                if (phi_u - phi <= -(step * step) / cfg.a) {
                    x_next = std::move(u);
                    phi_next = phi_u;
                    rec.branch = 'u';
                    rec.step_norm = step;
                    accepted = true;
                }
            }
        }

        if (!accepted) {
            // safeguard: v = x - alpha grad phi_eps(x), alpha backtracked by rho.
            // A step below the floating-point resolution of x cannot move the
            // iterate; both sides of the decrease inequality are zero in exact
            // arithmetic, so such a step is accepted as stationary.
            const double tiny = std::numeric_limits<double>::epsilon() * (1.0 + state_norm(x));
            int bt = 0;
            for (;;) {
                State v = axpy(x, -alpha, gphi);
                const double step = diff_norm(v, x);
                const double phi_v = objective_value(spec, v, eps);
                if (phi_v - phi <= -(step * step) / cfg.a || step <= tiny) {
                    x_next = std::move(v);
                    phi_next = phi_v;
                    rec.branch = 'v';
                    rec.step_norm = step;
                    rec.backtracks = bt;
                    break;
                }
                if (++bt > cfg.max_backtracks)
                    throw LineSearchError("line search exceeded max backtracks (gradient bug?)");
                alpha *= cfg.rho;
            }
        }

        rec.alpha = alpha;
        rec.phi_after = phi_next;

        // gradient at the new iterate with the current eps drives the trigger
        ObjectiveEval smooth_next = smooth_part_eval(spec, x_next);
        ObjectiveEval reg_next = has_reg ? reg_part_eval(spec, x_next, eps)
                                         : ObjectiveEval{0.0, std::vector<ComplexImage>()};
        State gphi_next = full_grad(smooth_next, reg_next);
        rec.grad_norm = state_norm(gphi_next);

        double eps_next = eps;
        if (rec.grad_norm < cfg.sigma * cfg.gamma_reduce * eps) eps_next = cfg.gamma_reduce * eps;
        rec.eps_next = eps_next;
        res.trace.push_back(rec);

        x = std::move(x_next);
        if (eps_next != eps) {
            eps = eps_next;
            reg = has_reg ? reg_part_eval(spec, x, eps)
                          : ObjectiveEval{0.0, std::vector<ComplexImage>()};
            smooth = std::move(smooth_next);
            phi = smooth.value + reg.value;
            gphi = full_grad(smooth, reg);
        } else {
            smooth = std::move(smooth_next);
            reg = std::move(reg_next);
            phi = phi_next;  // exact value already computed at acceptance
            gphi = std::move(gphi_next);
        }

        if (cfg.sigma * eps < cfg.eps_tol) {
            res.terminated_by = Termination::Tolerance;
            break;
        }
    }
    res.x_final = std::move(x);
    res.final_eps = eps;
    if (res.terminated_by != Termination::Tolerance) res.terminated_by = Termination::MaxPhases;
    return res;
}

}  // namespace

SolveResult loa_solve(const ObjectiveSpec& spec, const std::vector<ComplexImage>& x0,
                      const LOAConfig& cfg) {
    return solve_impl(spec, x0, cfg, true);
}

SolveResult gd_smooth_solve(const ObjectiveSpec& spec, const std::vector<ComplexImage>& x0,
                            const LOAConfig& cfg) {
    return solve_impl(spec, x0, cfg, false);
}

void write_trace_csv(const std::string& path, const SolveResult& res) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << "phase,phi,eps,alpha,branch,grad_norm,backtracks\n";
    f.precision(17);
    for (const PhaseRecord& r : res.trace)
        f << r.phase << ',' << r.phi << ',' << r.eps << ',' << r.alpha << ',' << r.branch << ','
          << r.grad_norm << ',' << r.backtracks << '\n';
}

int expected_eps_reductions(double eps0, double sigma, double gamma_reduce, double eps_tol) {
    if (sigma * eps0 < eps_tol) return 0;
    int l = 0;
    double eps = eps0;
    while (sigma * eps >= eps_tol) {
        eps *= gamma_reduce;
        ++l;
        if (l > 1000000) throw std::runtime_error("expected_eps_reductions: no progress");
    }
    return l;
}

}  // namespace conviction
