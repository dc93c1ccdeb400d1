#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "conviction/types.hpp"

namespace conviction {

enum class MaskPattern { Radial, CartesianRows, UniformRandom, Full };

MaskPattern mask_pattern_from_string(const std::string& s);
std::string to_string(MaskPattern p);

/// Binary k-space sampling pattern. Cells are row-major over (height, width);
/// the DC cell sits at (height/2, width/2) to match the centered view of the
/// sampling trajectory figures (the FFT itself is uncentered; see fourier.hpp).
struct SamplingMask {
    int height = 0;
    int width = 0;
    MaskPattern pattern = MaskPattern::Full;
    double ratio = 1.0;
    uint64_t seed = 0;
    std::vector<uint8_t> cells;

    bool at(int r, int c) const { return cells[static_cast<size_t>(r) * width + c] != 0; }
    size_t sampled_count() const;
    double achieved_ratio() const;
};

/// Deterministic for fixed (pattern, ratio, dims, seed). Achieved ratio is
/// within 2/min(height, width) of the target.
SamplingMask make_mask(MaskPattern pattern, double ratio, int height, int width, uint64_t seed);

struct KSpaceData {
    SamplingMask mask;
    std::vector<c64> values;  // one entry per true cell, row-major mask order
};

}  // namespace conviction
