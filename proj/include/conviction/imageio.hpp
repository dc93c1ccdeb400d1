#pragma once

#include <string>

#include "conviction/mask.hpp"
#include "conviction/types.hpp"

namespace conviction {

// CIMG: 16-byte header (magic "CIMG", u32 height, u32 width, u32 reserved=0,
// little-endian) followed by height*width little-endian f64 (re, im) pairs.
void write_cimg(const std::string& path, const ComplexImage& img);
ComplexImage read_cimg(const std::string& path);

/// Magnitude rescaled to [0, 255] as binary PGM (P5), for visual inspection.
void write_pgm_magnitude(const std::string& path, const ComplexImage& img);

/// Mask as binary PBM (P4); sampled cells are black.
void write_pbm(const std::string& path, const SamplingMask& mask);

}  // namespace conviction
