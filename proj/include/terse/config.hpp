#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>

#include "terse/affine.hpp"
#include "terse/loop.hpp"

namespace terse {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Flat `key = value` configuration with `#` comments. Every field defaults to
// the published hyperparameter where one exists; unknown keys are rejected.
// Flags override file values; the fully resolved set is echoed beside every
// run's outputs.
struct RunConfig {
    std::string data_dir = "data";
    std::string out_dir;
    std::uint64_t master_seed = 1;
    int cycles = 10;

    int per_class_capacity = 500;
    int increment_total = 0;
    bool fig7_profile = false;  // 500-image total increments

    double synth_lr = 1e-3;
    double synth_wd = 5e-4;
    int synth_batch = 1024;
    double synth_epoch_cap = 50;

    double target_lr = 1e-2;
    double target_momentum = 0.5;
    double target_wd = 5e-4;
    int target_batch = 64;
    int target_epochs = 30;
    double real_synth_ratio = 1.0;

    bool use_discriminator = false;
    double lambda_d = 1.0;
    double disc_lr = 1e-4;
    double disc_wd = 0.0;
    bool saturating_gen_loss = false;

    bool inject_artifacts = false;

    double clamp_rot_deg = 20.0;
    double clamp_trans = 0.2;
    double clamp_shear = 0.2;
    double clamp_scale_lo = 0.8;
    double clamp_scale_hi = 1.2;

    double xavier_gain = 0.4;

    int train_subset = 0;  // 0 = full training split
    int eval_subset = 2000;
    int affine_test_per_digit = 500;

    double baseline_lr = 1e-2;
    double baseline_momentum = 0.9;
    double baseline_wd = 5e-4;
    int baseline_batch = 64;
    int baseline_epochs = 3;

    int dump_per_cycle = 16;

    void set(const std::string& key, const std::string& value);  // ConfigError on bad input
    void load_file(const std::string& path);
    void finalize();  // resolves the profile and validates everything
    std::string echo() const;
    bool was_set(const std::string& key) const { return set_keys_.count(key) > 0; }

    ClampRanges ranges() const;
    LoopConfig loop_config() const;

private:
    std::set<std::string> set_keys_;
};

}  // namespace terse
