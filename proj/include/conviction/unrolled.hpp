#pragma once

#include <optional>
#include <vector>

#include "conviction/conv_stack.hpp"
#include "conviction/fourier.hpp"
#include "conviction/regularizer.hpp"

namespace conviction {

enum class Sharing { PerPhase, Shared, SharedPairs };
Sharing sharing_from_string(const std::string& s);
std::string to_string(Sharing s);

/// Which unrolled iteration a phase performs.
///   TwoStepGrad   - z = x - alpha grad f(x); x+ = z - tau sigmoid(omega) grad r_eps(z)
///   HybridDomain  - Landweber step, image-domain residual denoise M = Jt Gt G J,
///                   then k-space refinement u+ = u_bar + F^H K (F u_bar)
///   CombineShrink - Landweber step, then b + Jt Gt S_alpha (G J b)
enum class UnrollScheme { TwoStepGrad, HybridDomain, CombineShrink };

/// Stack block of one phase; which members are populated depends on the scheme.
/// The scalar fields serve the standalone single-phase operations; the
/// unrolled drivers take their per-phase step sizes from UnrolledParams::steps.
struct PhaseOps {
    std::optional<ConvStack> g;                  // TwoStepGrad extractor
    std::optional<ConvStack> J, G, Gt, Jt, K;    // multi-coil operators
    double alpha = 0.01;   // data-consistency step (rho_t)
    double tau = 0.01;     // regularizer step (TwoStepGrad)
    double shrink = 0.0;   // soft threshold (CombineShrink)
};

struct StepSizes {
    double alpha = 0.01;
    double tau = 0.01;
    double shrink = 0.0;
};

struct UnrolledParams {
    UnrollScheme scheme = UnrollScheme::TwoStepGrad;
    int T = 3;
    Sharing sharing = Sharing::Shared;     // stacks only; step sizes are per phase
    std::vector<PhaseOps> phases;          // owned stack slots; see slots_for
    std::vector<StepSizes> steps;          // one entry per phase, size >= T
    std::optional<ConvStack> k0;           // learned initializer (HybridDomain)
    double eps0 = 1e-3;
    double eps_gamma = 0.9;                // eps_t = eps0 * eps_gamma^t

    static int slots_for(int T, Sharing s);
    int slot_of(int t) const;
    const PhaseOps& phase(int t) const { return phases[slot_of(t)]; }
    void validate() const;
};

/// Stock CombineShrink network: J with 4 layers of 3x3 kernels, G with 3
/// layers of 9x9 (8 filters each at this scale), symmetric decoders, T = 5
/// phases trained separately, rho0 = 0.1, zero initial shrink threshold.
UnrolledParams default_combine_params(int coils, Rng& rng, int filters = 8);

/// Stock HybridDomain network: same operator family plus the k-space stack
/// and learned initializer, T = 4 with the image-space operators shared for
/// every two phases, rho0 = 1.
UnrolledParams default_hybrid_params(int coils, Rng& rng, int filters = 8);

// ---------------------------------------------------------------------------
// TwoStepGrad unrolled network (single image variable).
// ---------------------------------------------------------------------------

/// Intermediates of one TwoStepGrad phase, kept for reverse mode. The inner
/// cotangent chain cots[0..L] (cots[L] = normalized feature rows, cots[0] =
/// grad r_eps(z)) is the forward record of the gradient computation itself.
struct TwoStepPhaseTape {
    int t = 0;     // phase index (step sizes live per phase)
    int slot = 0;  // stack slot under the sharing policy
    double eps_t = 0.0, alpha_t = 0.0, tau_t = 0.0;
    ComplexImage x_in;
    ComplexImage gradf;   // F^H P^T (P F x - y)
    ComplexImage z;
    StackTape stack;      // extractor tape at z
    FeatureMap feat;      // F = g(z)
    std::vector<double> s;       // sqrt(||F_j||^2 + eps^2)
    std::vector<FeatureMap> cots;  // inner backward chain, size L+1
    ComplexImage reg_grad;         // grad r_eps(z), no kappa
};

struct UnrolledTape {
    KSpaceData y;
    double omega = 0.0;
    ComplexImage x0;
    std::vector<TwoStepPhaseTape> phases;
    ComplexImage x_out;
};

struct UnrolledOptions {
    /// Override per-phase step sizes / eps (for matching a recorded solve).
    std::vector<double> alpha_override;
    std::vector<double> eps_override;
    /// JointStep: x+ = x - alpha_t (grad f + kappa grad r_eps)(x), the
    /// safeguard-branch arithmetic; used to check agreement with gd_smooth_solve.
    bool joint_step = false;
};

/// Differentiable fixed-T unrolling (no line search, no branches); x0 is the
/// zero-filled reconstruction. Returns x_T and, when tape != nullptr, a tape
/// sufficient for reverse mode (TwoStepGrad only).
ComplexImage unrolled_forward(const UnrolledParams& params, const KSpaceData& y, double omega,
                              int T, UnrolledTape* tape = nullptr,
                              const UnrolledOptions& opt = {});

// ---------------------------------------------------------------------------
// Multi-coil phase operations.
// ---------------------------------------------------------------------------

/// b_i = u_i - rho F^H P^T (P F u_i - f_i)
CoilStack landweber_step(const CoilStack& u, const std::vector<KSpaceData>& f, double rho);

/// u = b + Jt(Gt(S_alpha(G(J(b))))) : combine to one image, encode, shrink,
/// decode, residual add.
CoilStack prox_phase_combine(const CoilStack& b, const PhaseOps& ops);

/// Full HybridDomain phase: Landweber, image-space residual denoise,
/// k-space refinement. Returns u_{t+1}; u_bar_out (when given) receives the
/// intermediate image-space result the multi-term coil loss consumes.
CoilStack hybrid_phase(const CoilStack& u, const std::vector<KSpaceData>& f, const PhaseOps& ops,
                       CoilStack* u_bar_out = nullptr);

/// u(0) = F^H(f_grid + K0(f_grid)) per coil, f_grid the zero-filled k-space.
CoilStack learned_init(const std::vector<KSpaceData>& f, const ConvStack& k0);

// Tape-producing variants used by the training module.

struct HybridPhaseTape {
    int t = 0;
    int slot = 0;
    double rho_t = 0.0;
    CoilStack u_in;
    CoilStack gradf;   // F^H P^T (P F u - f), per coil
    CoilStack b;
    StackTape tJ, tG, tGt, tJt;   // M = Jt Gt G J at b
    FeatureMap mJ, mG, mGt, mJt;  // stack outputs along M
    CoilStack u_bar;
    StackTape tK;
    FeatureMap kin, kout;         // F u_bar and K(F u_bar), coils as channels
    CoilStack u_out;
};

struct CombinePhaseTape {
    int t = 0;
    int slot = 0;
    double rho_t = 0.0, shrink_t = 0.0;
    CoilStack u_in;
    CoilStack gradf;
    CoilStack b;
    StackTape tJ, tG, tGt, tJt;
    FeatureMap mJ, mG;       // pre-shrink encoder outputs
    FeatureMap shrunk;       // S_alpha(G J b)
    FeatureMap mGt, mJt;
    CoilStack u_out;
};

struct InitTape {
    FeatureMap f_grid;   // zero-filled k-space grids, coils as channels
    StackTape tK0;
    FeatureMap k0_out;
    CoilStack u0;
};

struct MultiCoilTape {
    UnrollScheme scheme = UnrollScheme::HybridDomain;
    std::vector<KSpaceData> f;
    std::optional<InitTape> init;
    std::vector<HybridPhaseTape> hybrid;
    std::vector<CombinePhaseTape> combine;
    CoilStack u_out;
    CoilStack u_bar_last;  // HybridDomain: u_bar of the final phase
};

/// T phases of the multi-coil scheme (HybridDomain or CombineShrink); the
/// initial iterate is learned_init when params.k0 is set, zero-filled otherwise.
CoilStack multicoil_forward(const UnrolledParams& params, const std::vector<KSpaceData>& f,
                            int T, MultiCoilTape* tape = nullptr);

}  // namespace conviction
