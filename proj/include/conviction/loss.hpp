#pragma once

#include <map>
#include <memory>
#include <string>

#include "conviction/metrics.hpp"
#include "conviction/regularizer.hpp"

namespace conviction {

/// Task losses.
///   ReconL2        - 0.5 ||x - x*||^2
///   RssMagnitude   - ||s(u) - s(u*)|| + gamma ||  |J(u)| - s(u*) ||, s = RSS
///   MultiTermCoil  - sum_i gamma ||u_i - u_i*|| + || |J(u_bar)| - RSS(u*) ||
///                    + eta || RSS(u_bar) - RSS(u*) ||
///   JointSynthesis - sum_j ( 0.5 ||x_j - x_j*||^2 + (1 - SSIM(x_j, x_j*)) )
///                    + (mu/2) || fuse([h1(x1*), h2(x2*)]) - x3* ||^2
enum class LossKind { ReconL2, RssMagnitude, MultiTermCoil, JointSynthesis };

LossKind loss_kind_from_string(const std::string& s);

struct LossSpec {
    LossKind kind = LossKind::ReconL2;
    std::map<std::string, double> weights;  // gamma / eta / mu as the kind requires
    std::shared_ptr<const ConvStack> combiner;      // J (RssMagnitude, MultiTermCoil)
    std::shared_ptr<const ConvStack> h1, h2;        // JointSynthesis extractors
    std::shared_ptr<const SynthesisOperator> fuser; // JointSynthesis

    double weight(const std::string& name) const;
};

/// Defaults: gamma = 1e5 (RssMagnitude), gamma = 1e-3 / eta = 1e-4
/// (MultiTermCoil), mu = 0.1 (JointSynthesis).
LossSpec make_loss(LossKind kind);

struct LossImage {
    double value = 0.0;
    ComplexImage cot;
};

struct LossCoil {
    double value = 0.0;
    CoilStack cot;       // d loss / d u
    CoilStack cot_ubar;  // d loss / d u_bar (MultiTermCoil only)
    bool has_ubar = false;
};

struct LossTriple {
    double value = 0.0;
    std::vector<ComplexImage> cots;
};

LossImage loss_eval(const LossSpec& spec, const ComplexImage& out, const ComplexImage& ref);
LossCoil loss_eval(const LossSpec& spec, const CoilStack& u, const CoilStack& u_bar,
                   const CoilStack& ref);
LossTriple loss_eval(const LossSpec& spec, const std::vector<ComplexImage>& out,
                     const std::vector<ComplexImage>& ref);

}  // namespace conviction
