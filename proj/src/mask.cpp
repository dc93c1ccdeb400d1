#include "conviction/mask.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "conviction/rng.hpp"

namespace conviction {

MaskPattern mask_pattern_from_string(const std::string& s) {
    if (s == "radial") return MaskPattern::Radial;
    if (s == "cartesian-rows") return MaskPattern::CartesianRows;
    if (s == "uniform-random") return MaskPattern::UniformRandom;
    if (s == "full") return MaskPattern::Full;
    throw std::invalid_argument("unknown mask pattern: " + s);
}

std::string to_string(MaskPattern p) {
    switch (p) {
        case MaskPattern::Radial: return "radial";
        case MaskPattern::CartesianRows: return "cartesian-rows";
        case MaskPattern::UniformRandom: return "uniform-random";
        case MaskPattern::Full: return "full";
    }
    return "?";
}

size_t SamplingMask::sampled_count() const {
    size_t n = 0;
    for (uint8_t c : cells) n += c != 0;
    return n;
}

double SamplingMask::achieved_ratio() const {
    return static_cast<double>(sampled_count()) / (static_cast<double>(height) * width);
}

namespace {

constexpr double kGoldenAngle = 2.399963229728653;  // pi * (3 - sqrt(5))

void rasterize_radial_line(SamplingMask& m, double angle) {
    // One cell per step along the dominant axis keeps each new line under
    // min(h,w) fresh cells, which is what the ratio tolerance budgets for.
    const double cr = m.height / 2.0, cc = m.width / 2.0;
    const double dr = std::sin(angle), dc = std::cos(angle);
    const int span = std::max(m.height, m.width);
    const double step = 1.0 / std::max(std::abs(dr), std::abs(dc));
    for (int s = -span; s <= span; ++s) {
        const int r = static_cast<int>(std::floor(cr + dr * step * s));
        const int c = static_cast<int>(std::floor(cc + dc * step * s));
        if (r >= 0 && r < m.height && c >= 0 && c < m.width)
            m.cells[static_cast<size_t>(r) * m.width + c] = 1;
    }
}

void build_radial(SamplingMask& m, Rng& rng) {
    const size_t total = m.cells.size();
    const size_t target = static_cast<size_t>(std::llround(m.ratio * static_cast<double>(total)));
    // DC cell always sampled
    m.cells[static_cast<size_t>(m.height / 2) * m.width + m.width / 2] = 1;
    const double golden = kGoldenAngle;
    double angle = rng.uniform(0.0, golden);
    size_t guard = 0;
    while (m.sampled_count() < target && guard < 100000) {
        rasterize_radial_line(m, angle);
        angle += golden;
        ++guard;
    }
}

void build_cartesian_rows(SamplingMask& m, Rng& rng) {
    const int target_rows =
        std::max(1, static_cast<int>(std::llround(m.ratio * static_cast<double>(m.height))));
    const int band = std::min(target_rows, std::max(1, static_cast<int>(std::llround(0.04 * m.height))));
    std::vector<uint8_t> row_on(m.height, 0);
    const int band_lo = m.height / 2 - band / 2;
    for (int r = band_lo; r < band_lo + band; ++r)
        if (r >= 0 && r < m.height) row_on[r] = 1;
    int have = 0;
    for (uint8_t v : row_on) have += v;
    std::vector<int> rest;
    for (int r = 0; r < m.height; ++r)
        if (!row_on[r]) rest.push_back(r);
    // Fisher-Yates over the remaining rows, take what is needed
    for (size_t i = rest.size(); i > 1; --i)
        std::swap(rest[i - 1], rest[rng.next_below(i)]);
    for (int i = 0; have < target_rows && i < static_cast<int>(rest.size()); ++i, ++have)
        row_on[rest[i]] = 1;
    for (int r = 0; r < m.height; ++r)
        if (row_on[r])
            for (int c = 0; c < m.width; ++c) m.cells[static_cast<size_t>(r) * m.width + c] = 1;
}

void build_uniform_random(SamplingMask& m, Rng& rng) {
    const size_t total = m.cells.size();
    const size_t target = static_cast<size_t>(std::llround(m.ratio * static_cast<double>(total)));
    std::vector<uint32_t> idx(total);
    for (size_t i = 0; i < total; ++i) idx[i] = static_cast<uint32_t>(i);
    for (size_t i = total; i > 1; --i) std::swap(idx[i - 1], idx[rng.next_below(i)]);
    for (size_t i = 0; i < target; ++i) m.cells[idx[i]] = 1;
    // keep DC so zero-filled reconstructions retain the mean
    m.cells[static_cast<size_t>(m.height / 2) * m.width + m.width / 2] = 1;
}

}  // namespace

SamplingMask make_mask(MaskPattern pattern, double ratio, int height, int width, uint64_t seed) {
    if (!(ratio > 0.0) || ratio > 1.0) throw std::invalid_argument("make_mask: ratio must be in (0,1]");
    if (height <= 0 || width <= 0) throw std::invalid_argument("make_mask: bad dimensions");
    SamplingMask m;
    m.height = height;
    m.width = width;
    m.pattern = pattern;
    m.ratio = ratio;
    m.seed = seed;
    m.cells.assign(static_cast<size_t>(height) * width, 0);
    Rng rng(split_seed(seed, "mask"));
    switch (pattern) {
        case MaskPattern::Full:
            std::fill(m.cells.begin(), m.cells.end(), uint8_t(1));
            break;
        case MaskPattern::Radial:
            build_radial(m, rng);
            break;
        case MaskPattern::CartesianRows:
            build_cartesian_rows(m, rng);
            break;
        case MaskPattern::UniformRandom:
            build_uniform_random(m, rng);
            break;
    }
    return m;
}

}  // namespace conviction
