#pragma once

#include <string>

#include "conviction/adam.hpp"
#include "conviction/unrolled.hpp"

namespace conviction {

// Structured text checkpoint (JSON): every kernel as arrays of [re, im]
// pairs plus delta/eps/omega and a format-version field. Doubles round-trip
// bit-exactly (shortest-representation formatting).

std::string conv_stack_to_json(const ConvStack& s);
ConvStack conv_stack_from_json(const std::string& text);

struct TrainingCheckpoint {
    UnrolledParams params;
    double omega = 0.0;
    AdamState adam;
    long epoch = 0;
};

void save_checkpoint(const std::string& path, const TrainingCheckpoint& ck);
TrainingCheckpoint load_checkpoint(const std::string& path);

void save_params(const std::string& path, const UnrolledParams& p, double omega);
TrainingCheckpoint load_params(const std::string& path);

}  // namespace conviction
