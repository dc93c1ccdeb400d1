#pragma once

#include <optional>
#include <vector>

#include "conviction/fourier.hpp"
#include "conviction/regularizer.hpp"

namespace conviction {

/// Composite objective over one image or the joint (x1, x2, x3) triple:
///   sum_i 0.5 ||P F x_i - y_i||^2 + sum_i kappa_i r_eps(x_i)
///   + (gamma/2) || g_theta([h1(x1), h2(x2)]) - x_target ||^2   (when coupled)
struct ObjectiveSpec {
    int num_variables = 1;
    std::vector<std::optional<KSpaceData>> data_terms;    // per variable, may be absent
    std::vector<std::optional<RegularizerSpec>> regularizers;  // per variable

    struct Coupling {
        SynthesisOperator op;
        double gamma = 1.0;
        int target = 2;    // variable index receiving the synthesis
        int source_a = 0;  // feature sources
        int source_b = 1;
    };
    std::optional<Coupling> coupling;

    void validate() const;
    /// Total regularized position count (the m of the phi + m*eps descent form).
    int position_count(const std::vector<ComplexImage>& state) const;
};

struct ObjectiveEval {
    double value = 0.0;
    std::vector<ComplexImage> grads;
};

/// Value and per-variable gradients at `state` with every regularizer's
/// smoothing set to `eps` (solver-controlled).
ObjectiveEval objective_eval(const ObjectiveSpec& spec, const std::vector<ComplexImage>& state,
                             double eps);

/// Value-only path.
double objective_value(const ObjectiveSpec& spec, const std::vector<ComplexImage>& state,
                       double eps);

// Split used by the solvers: f = fidelity + coupling (smooth, eps-free),
// R_eps = sum_i kappa_i r_eps(x_i).
ObjectiveEval smooth_part_eval(const ObjectiveSpec& spec, const std::vector<ComplexImage>& state);
double smooth_part_value(const ObjectiveSpec& spec, const std::vector<ComplexImage>& state);
ObjectiveEval reg_part_eval(const ObjectiveSpec& spec, const std::vector<ComplexImage>& state,
                            double eps);
double reg_part_value(const ObjectiveSpec& spec, const std::vector<ComplexImage>& state,
                      double eps);

}  // namespace conviction
