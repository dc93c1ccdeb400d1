#pragma once

#include "conviction/mask.hpp"
#include "conviction/types.hpp"

namespace conviction {

/// Unitary (orthonormal) 2D DFT. ifft2(fft2(x)) == x to round-off and
/// ||fft2(x)|| == ||x||. The k-space grid is centered: the DC coefficient
/// lands at (height/2, width/2), matching SamplingMask's convention.
ComplexImage fft2(const ComplexImage& img);
ComplexImage ifft2(const ComplexImage& img);

/// P F x: unitary DFT restricted to the sampled cells.
KSpaceData forward_op(const ComplexImage& x, const SamplingMask& mask);

/// F^H P^T y: zero-fill unsampled cells, then inverse unitary DFT.
ComplexImage adjoint_op(const KSpaceData& y);

/// Alias of adjoint_op; the default x0 of every solver.
ComplexImage zero_filled(const KSpaceData& y);

struct FidelityResult {
    double value = 0.0;
    ComplexImage grad;
};

/// 0.5 * ||P F x - y||^2 and its gradient F^H P^T (P F x - y).
FidelityResult data_fidelity(const ComplexImage& x, const KSpaceData& y);

struct CoilFidelityResult {
    double value = 0.0;
    CoilStack grad;
};

/// Per-coil sum of data fidelities with per-coil gradients.
CoilFidelityResult data_fidelity(const CoilStack& u, const std::vector<KSpaceData>& f);

/// Pseudo full k-space of y on the mask grid (sampled values in place, zeros
/// elsewhere), optionally with complex Gaussian noise of std sigma per part.
ComplexImage zero_fill_grid(const KSpaceData& y);

}  // namespace conviction
