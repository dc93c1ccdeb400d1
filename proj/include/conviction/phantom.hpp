#pragma once

#include <string>

#include "conviction/rng.hpp"
#include "conviction/types.hpp"

namespace conviction {

enum class PhantomVariant { Classic, HighContrast };

PhantomVariant phantom_variant_from_string(const std::string& s);

/// Deterministic n x n Shepp-Logan phantom (real-valued, magnitude in [0,1],
/// max magnitude exactly 1). HighContrast uses the modified intensity table.
ComplexImage shepp_logan(int n, PhantomVariant variant = PhantomVariant::Classic);

/// Seeded jittered variant: ellipse intensities, centers, axes and angles are
/// perturbed a few percent. Used to synthesize train/val/test sets.
ComplexImage shepp_logan_variant(int n, PhantomVariant variant, Rng& rng);

}  // namespace conviction
