#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "terse/data.hpp"
#include "terse/nets.hpp"
#include "terse/optim.hpp"
#include "terse/tensor.hpp"

namespace terse {

// ---------------------------------------------------------------------------
// Hard-example predicate and hardness metric.
// ---------------------------------------------------------------------------

// True iff the best wrong-class probability beats the true class by more than
// 0.05 (strict).
template <typename T>
bool is_hard_example(const T* probs, int n_classes, int label) {
    T best_other = T(0);
    for (int c = 0; c < n_classes; ++c)
        if (c != label) best_other = std::max(best_other, probs[c]);
    return static_cast<double>(best_other) - static_cast<double>(probs[label]) > 0.05;
}

// 1 - p(true class).
template <typename T>
double hardness(const T* probs, int /*n_classes*/, int label) {
    return 1.0 - static_cast<double>(probs[label]);
}

// ---------------------------------------------------------------------------
// Hard-example cache: per-class stores, never evicted, append-only.
// ---------------------------------------------------------------------------
struct CompositeSample {
    TensorF image;  // 40x40
    int label = 0;
    Provenance provenance = Provenance::Synthesized;
    double hardness = 0;
    int cycle = 0;
};

class HardExampleCache {
public:
    void insert(CompositeSample s) {
        const int cls = s.label;
        per_class_[static_cast<std::size_t>(cls)].push_back(std::move(s));
        flat_.push_back({cls, per_class_[static_cast<std::size_t>(cls)].size() - 1});
    }

    std::size_t total() const { return flat_.size(); }
    std::size_t count(int cls) const { return per_class_[static_cast<std::size_t>(cls)].size(); }

    const CompositeSample& at(std::size_t flat_index) const {
        const auto& [cls, idx] = flat_[flat_index];
        return per_class_[static_cast<std::size_t>(cls)][idx];
    }

    template <typename F>
    void for_each(F&& fn) const {
        for (std::size_t i = 0; i < flat_.size(); ++i) fn(at(i));
    }

private:
    std::array<std::vector<CompositeSample>, 10> per_class_;
    std::vector<std::pair<int, std::size_t>> flat_;  // insertion order
};

// ---------------------------------------------------------------------------
// Cycle record; written to CSV with the exact column order
// cycle,phase_epochs,samples_added,total_synthetic,acc_mnist,acc_affine,
// mean_hardness,target_loss,synth_loss,disc_loss,saturation_events
// ---------------------------------------------------------------------------
struct CycleMetrics {
    int cycle = 0;
    double phase_epochs = 0;
    int samples_added = 0;
    long total_synthetic = 0;
    double acc_mnist = 0;
    double acc_affine = 0;
    double mean_hardness = 0;
    double target_loss = 0;
    double synth_loss = 0;
    double disc_loss = 0;
    long saturation_events = 0;
    bool partial_fill = false;  // epoch cap fired before every class filled
};

std::string metrics_csv_header();
std::string metrics_csv_row(const CycleMetrics& m);

struct LoopConfig {
    std::uint64_t master_seed = 1;
    int cycles = 10;
    int per_class_capacity = 500;  // appendix protocol
    int increment_total = 0;       // >0 switches to total-count increments

    double synth_lr = 1e-3;
    double synth_wd = 5e-4;
    int synth_batch = 1024;
    double synth_epoch_cap = 50;

    double target_lr = 1e-2;
    double target_momentum = 0.5;
    double target_wd = 5e-4;
    int target_batch = 64;
    int target_epochs = 30;
    double real_synth_ratio = 1.0;  // real : synthetic per fine-tune batch

    bool use_discriminator = false;
    double lambda_d = 1.0;
    double disc_lr = 1e-4;
    double disc_wd = 0.0;
    bool saturating_gen_loss = false;

    bool inject_artifacts = false;
    ClampRanges ranges;

    double xavier_gain = 0.4;
    int eval_subset = 2000;   // 0 = full test sets every cycle
    int dump_per_cycle = 16;  // composite dumps per cycle when out_dir set
    std::string out_dir;      // empty = no file output

    // non-black compositing backgrounds; null/empty = all-black
    const std::vector<TensorF>* backgrounds = nullptr;
};

struct LoopData {
    const DatasetSplit* train = nullptr;        // padded 40x40 digits
    const DatasetSplit* test_clean = nullptr;   // padded 40x40
    const DatasetSplit* test_affine = nullptr;  // surrogate affine test
};

// ---------------------------------------------------------------------------
// Phases and cycle drivers.
// ---------------------------------------------------------------------------
struct SynthPhaseResult {
    double epochs_used = 0;  // fractional: batches / batches-per-epoch
    int added = 0;
    bool filled = false;
    double avg_synth_loss = 0;
    double avg_disc_term = 0;
    long saturation_events = 0;
    double mean_hardness = 0;  // over the samples accepted this phase
};

// Trains S against the frozen target (and discriminator when enabled) until
// the cycle's hard-example quota is met or the epoch cap fires. Mined samples
// are re-rendered in eval mode before the predicate is applied and cached.
SynthPhaseResult synth_phase(SynthesizerNet<float>& synth, Adam<float>& synth_opt,
                             TargetNet<float>& target, DiscriminatorNet<float>* disc,
                             const DatasetSplit& pool, HardExampleCache& cache,
                             const LoopConfig& cfg, int cycle);

struct TargetPhaseResult {
    double avg_target_loss = 0;
    double avg_disc_loss = 0;
    long saturation_events = 0;
};

// Fine-tunes the target on cache + real data at the configured ratio; trains
// the discriminator on real-vs-composite when enabled. The synthesizer is not
// touched.
TargetPhaseResult target_phase(TargetNet<float>& target, Sgd<float>& target_opt,
                               DiscriminatorNet<float>* disc, Adam<float>* disc_opt,
                               const DatasetSplit& real, const HardExampleCache& cache,
                               const LoopConfig& cfg, int cycle);

// Alternates synth_phase / target_phase for cfg.cycles cycles starting from a
// pretrained baseline target. Writes metrics CSV, per-cycle sample dumps and
// checkpoints under cfg.out_dir when set. Returns one row per cycle plus the
// baseline row.
std::vector<CycleMetrics> run_cycles(TargetNet<float>& target, const LoopData& data,
                                     const LoopConfig& cfg,
                                     SynthesizerNet<float>* synth_out = nullptr);

// Same increment schedule, but the augmentation samples are uniform-random
// affine composites; no synthesizer training.
std::vector<CycleMetrics> random_augment_baseline(TargetNet<float>& target, const LoopData& data,
                                                  const LoopConfig& cfg);

// ---------------------------------------------------------------------------
// Shared helpers.
// ---------------------------------------------------------------------------

// Accuracy in eval mode; subset 0 evaluates the full split, otherwise a
// deterministic stride sample of the given size.
double eval_accuracy(TargetNet<float>& target, const DatasetSplit& split, int subset = 0,
                     int batch = 256);

// Pack HxW gray images into an (N,1,H,W) batch.
TensorF make_image_batch(const std::vector<const TensorF*>& images);

// FNV-1a over the raw bytes of every named tensor (lock-step isolation checks).
template <typename Net>
std::uint64_t param_hash(Net& net) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& nt : net.named_tensors()) {
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(nt.tensor->ptr());
        for (std::size_t i = 0; i < nt.tensor->size() * sizeof(float); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    }
    return h;
}

struct HardnessHistogram {
    std::array<double, 10> fractions{};  // 10 equal-width bins over [0,1]
    double mean = 0;
    int n = 0;
};

// Generates n composites with the learned synthesizer (or uniform-random
// parameters when synth is null) and scores hardness under the frozen target.
HardnessHistogram hardness_histogram(TargetNet<float>& target, SynthesizerNet<float>* synth,
                                     const DatasetSplit& pool, const LoopConfig& cfg, int n,
                                     std::uint64_t seed);

}  // namespace terse
