#pragma once

#include <vector>

namespace conviction {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m, v;
    long t = 0;

    void reset(size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        t = 0;
    }
};

/// Standard bias-corrected first/second-moment update, in place.
void adam_update(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
                 const AdamConfig& cfg);

}  // namespace conviction
