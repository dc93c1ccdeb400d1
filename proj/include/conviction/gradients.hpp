#pragma once

#include "conviction/loss.hpp"
#include "conviction/unrolled.hpp"

namespace conviction {

struct ParamEntry {
    std::string key;
    size_t offset = 0;  // in doubles
    size_t count = 0;   // in doubles (complex weights count twice)
};

/// Flat double-vector layout of every learnable parameter owned by an
/// UnrolledParams (stack weights as interleaved re/im, then the per-slot step
/// sizes / thresholds, then the initializer). The task weight omega is
/// deliberately not part of the flat vector; it is carried separately.
struct ParamLayout {
    std::vector<ParamEntry> entries;
    size_t total = 0;

    const ParamEntry& find(const std::string& key) const;
    bool has(const std::string& key) const;
};

ParamLayout build_layout(const UnrolledParams& p);
std::vector<double> pack_params(const UnrolledParams& p);
void unpack_params(UnrolledParams& p, const std::vector<double>& flat);

/// Gradients keyed by parameter identity; values align with build_layout of
/// the originating UnrolledParams, plus the scalar omega gradient.
struct GradientBundle {
    ParamLayout layout;
    std::vector<double> values;
    double d_omega = 0.0;

    double* view(const std::string& key);
    const double* view(const std::string& key) const;
    void add_scaled(const GradientBundle& other, double c);
    double inf_norm() const;
};

GradientBundle zero_bundle(const UnrolledParams& p);

struct Sample {
    KSpaceData y;
    ComplexImage ref;
};

struct CoilSample {
    std::vector<KSpaceData> f;
    CoilStack ref;
};

struct BatchGrad {
    double loss = 0.0;
    GradientBundle grad;
};

/// Reverse mode over the recorded tape: exact gradients of the mean batch
/// loss with respect to every parameter (including step sizes and omega).
BatchGrad backprop_unrolled(const UnrolledParams& params, const std::vector<Sample>& batch,
                            double omega, const LossSpec& loss, int T);
BatchGrad backprop_unrolled(const UnrolledParams& params, const std::vector<CoilSample>& batch,
                            const LossSpec& loss, int T);

/// Multiplier-recursion training gradients: lambda(T) = -dl/du(T), then
/// lambda(t) = <lambda(t+1), du g(u(t), .)>, parameter gradients
/// -<lambda(t), dtheta g>; returned sign-adjusted as d loss / d Theta.
BatchGrad mlm_gradients(const UnrolledParams& params, const std::vector<Sample>& batch,
                        double omega, const LossSpec& loss, int T);
BatchGrad mlm_gradients(const UnrolledParams& params, const std::vector<CoilSample>& batch,
                        const LossSpec& loss, int T);

// Single-tape building blocks (exposed for tests).
ComplexImage twostep_phase_vjp(const UnrolledParams& params, const TwoStepPhaseTape& t,
                               const KSpaceData& y, double omega, const ComplexImage& cot_out,
                               GradientBundle& gb);
CoilStack hybrid_phase_vjp(const UnrolledParams& params, const HybridPhaseTape& t,
                           const std::vector<KSpaceData>& f, const CoilStack& cot_out,
                           const CoilStack* cot_ubar, GradientBundle& gb);
CoilStack combine_phase_vjp(const UnrolledParams& params, const CombinePhaseTape& t,
                            const std::vector<KSpaceData>& f, const CoilStack& cot_out,
                            GradientBundle& gb);
void init_vjp(const UnrolledParams& params, const InitTape& t, const CoilStack& cot_u0,
              GradientBundle& gb);

}  // namespace conviction
