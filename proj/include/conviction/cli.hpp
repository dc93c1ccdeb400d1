#pragma once

#include <string>
#include <vector>

namespace conviction::cli {

/// Batch front end: `conviction <command> [--config PATH] [--seed N]
/// [--out DIR] [--set K=V ...]`. Commands: phantom, recon, train,
/// train-bilevel, check. Returns the process exit status.
int run(const std::vector<std::string>& args);

}  // namespace conviction::cli
