#pragma once

#include <cstdint>
#include <vector>

#include "terse/data.hpp"
#include "terse/tensor.hpp"

namespace terse {

// Procedurally rendered handwritten-style digit corpus in the same 28x28
// format as the MNIST IDX distribution. Stroke skeletons per class are
// perturbed per sample (thickness, jitter, mild pose), rasterized with
// saturated stroke cores and anti-aliased edges. Deterministic per seed and
// independent of generation order.
DatasetSplit make_digit_corpus(int n_total, std::uint64_t seed);

// Renders one digit; sample_key selects the perturbation.
TensorF render_digit(int digit_class, std::uint64_t seed, std::uint64_t sample_key);

// Flat gray 40x40 backgrounds with i.i.d. pixel noise, for the non-black
// background experiments.
std::vector<TensorF> make_gray_backgrounds(int n, std::uint64_t seed, float level = 0.5f,
                                           float noise_sigma = 0.02f);

}  // namespace terse
