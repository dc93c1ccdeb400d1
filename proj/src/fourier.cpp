#include "conviction/fourier.hpp"

#include <stdexcept>

#include "conviction/kernels.hpp"

namespace conviction {

namespace {

void check_finite(const ComplexImage& img, const char* who) {
    if (!all_finite(img.data)) throw std::invalid_argument(std::string(who) + ": non-finite input");
}

// dst[r][c] = src[(r + or) % h][(c + oc) % w]
ComplexImage roll(const ComplexImage& src, int off_r, int off_c) {
    ComplexImage dst(src.height, src.width);
    for (int r = 0; r < src.height; ++r) {
        const int sr = (r + off_r) % src.height;
        for (int c = 0; c < src.width; ++c) {
            const int sc = (c + off_c) % src.width;
            dst.at(r, c) = src.at(sr, sc);
        }
    }
    return dst;
}

ComplexImage fftshift(const ComplexImage& x) {
    return roll(x, x.height - x.height / 2, x.width - x.width / 2);
}

ComplexImage ifftshift(const ComplexImage& x) { return roll(x, x.height / 2, x.width / 2); }

}  // namespace

ComplexImage fft2(const ComplexImage& img) {
    check_finite(img, "fft2");
    ComplexImage out = img;
    kernels::fft2d(out.data.data(), out.height, out.width, false);
    return fftshift(out);
}

ComplexImage ifft2(const ComplexImage& img) {
    check_finite(img, "ifft2");
    ComplexImage out = ifftshift(img);
    kernels::fft2d(out.data.data(), out.height, out.width, true);
    return out;
}

KSpaceData forward_op(const ComplexImage& x, const SamplingMask& mask) {
    if (x.height != mask.height || x.width != mask.width)
        throw std::invalid_argument("forward_op: dimension mismatch");
    ComplexImage k = fft2(x);
    KSpaceData y;
    y.mask = mask;
    y.values.reserve(mask.sampled_count());
    for (size_t i = 0; i < k.data.size(); ++i)
        if (mask.cells[i]) y.values.push_back(k.data[i]);
    return y;
}

ComplexImage zero_fill_grid(const KSpaceData& y) {
    if (y.values.size() != y.mask.sampled_count())
        throw std::invalid_argument("KSpaceData: value count does not match mask");
    ComplexImage grid(y.mask.height, y.mask.width);
    size_t j = 0;
    for (size_t i = 0; i < grid.data.size(); ++i)
        if (y.mask.cells[i]) grid.data[i] = y.values[j++];
    return grid;
}

ComplexImage adjoint_op(const KSpaceData& y) { return ifft2(zero_fill_grid(y)); }

ComplexImage zero_filled(const KSpaceData& y) { return adjoint_op(y); }

FidelityResult data_fidelity(const ComplexImage& x, const KSpaceData& y) {
    if (x.height != y.mask.height || x.width != y.mask.width)
        throw std::invalid_argument("data_fidelity: dimension mismatch");
    ComplexImage k = fft2(x);
    // residual on the grid: sampled cells carry P F x - y, the rest are zero
    ComplexImage resid(x.height, x.width);
    KahanSum val;
    size_t j = 0;
    for (size_t i = 0; i < k.data.size(); ++i) {
        if (!y.mask.cells[i]) continue;
        const c64 r = k.data[i] - y.values[j++];
        resid.data[i] = r;
        val.add(std::norm(r));
    }
    FidelityResult out;
    out.value = 0.5 * val.value();
    out.grad = ifft2(resid);
    return out;
}

CoilFidelityResult data_fidelity(const CoilStack& u, const std::vector<KSpaceData>& f) {
    if (u.coils.size() != f.size())
        throw std::invalid_argument("data_fidelity: coil count mismatch");
    CoilFidelityResult out;
    out.grad.coils.reserve(u.coils.size());
    KahanSum val;
    for (size_t i = 0; i < f.size(); ++i) {
        FidelityResult r = data_fidelity(u.coils[i], f[i]);
        val.add(r.value);
        out.grad.coils.push_back(std::move(r.grad));
    }
    out.value = val.value();
    return out;
}

}  // namespace conviction
