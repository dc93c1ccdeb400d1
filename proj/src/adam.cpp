#include "conviction/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace conviction {

void adam_update(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
                 const AdamConfig& cfg) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam_update: size mismatch");
    if (state.m.size() != params.size()) state.reset(params.size());
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

}  // namespace conviction
