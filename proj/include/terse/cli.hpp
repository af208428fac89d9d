#pragma once

#include <string>
#include <vector>

#include "terse/config.hpp"
#include "terse/data.hpp"

namespace terse {

// Exit codes: 0 ok, 1 runtime failure, 2 configuration error.
int cli_main(int argc, const char* const* argv);
int cli_main(const std::vector<std::string>& args);

// Loads train/test IDX files from cfg.data_dir (MNIST file naming), pads
// 28x28 inputs to 40x40, applies train_subset, and generates the surrogate
// affine test split.
struct CliData {
    DatasetSplit train;
    DatasetSplit test_clean;
    DatasetSplit test_affine;
};
CliData load_cli_data(const RunConfig& cfg);

}  // namespace terse
