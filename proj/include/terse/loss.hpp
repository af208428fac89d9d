#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "terse/tensor.hpp"

namespace terse {

// Softmax + cross-entropy over class indices, mean-reduced over the batch.
// Stabilized by row-max subtraction. backward() returns (p - onehot)/N scaled
// by an upstream factor so the same frame serves both minimization (T) and
// maximization (S fooling T).
template <typename T>
struct SoftmaxCrossEntropy {
    Tensor<T> probs;          // N x C
    std::vector<int> labels;  // kept for backward
    double loss = 0;

    double forward(const Tensor<T>& logits, const std::vector<int>& batch_labels) {
        if (logits.ndim() != 2)
            throw std::invalid_argument("cross entropy: logits must be NxC, got " + logits.shape_str());
        const int N = logits.dim(0), C = logits.dim(1);
        if (static_cast<int>(batch_labels.size()) != N)
            throw std::invalid_argument("cross entropy: " + std::to_string(batch_labels.size()) +
                                        " labels for batch of " + std::to_string(N));
        if (!logits.all_finite())
            throw std::invalid_argument("cross entropy: non-finite logits");
        for (int lab : batch_labels)
            if (lab < 0 || lab >= C)
                throw std::invalid_argument("cross entropy: label " + std::to_string(lab) +
                                            " outside [0," + std::to_string(C) + ")");
        labels = batch_labels;
        probs = Tensor<T>({N, C});
        double total = 0;
        for (int n = 0; n < N; ++n) {
            const T* row = logits.ptr() + static_cast<std::size_t>(n) * C;
            double mx = row[0];
            for (int c = 1; c < C; ++c) mx = std::max<double>(mx, row[c]);
            double z = 0;
            for (int c = 0; c < C; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
            const double logz = std::log(z);
            T* prow = probs.ptr() + static_cast<std::size_t>(n) * C;
            for (int c = 0; c < C; ++c)
                prow[c] = T(std::exp(static_cast<double>(row[c]) - mx - logz));
            total += -(static_cast<double>(row[labels[static_cast<std::size_t>(n)]]) - mx - logz);
        }
        loss = total / N;
        return loss;
    }

    Tensor<T> backward(double upstream = 1.0) const {
        const int N = probs.dim(0), C = probs.dim(1);
        Tensor<T> g = probs;
        const T scale = T(upstream / N);
        for (int n = 0; n < N; ++n) {
            T* row = g.ptr() + static_cast<std::size_t>(n) * C;
            row[labels[static_cast<std::size_t>(n)]] -= T(1);
            for (int c = 0; c < C; ++c) row[c] *= scale;
        }
        return g;
    }
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Binary real/composite loss terms on discriminator logits. Probabilities are
// floored at 1e-12 before the log; floored samples are counted as saturation
// events and contribute zero gradient.
struct BinaryLogTerms {
    double loss = 0;          // mean of -log(term)
    int saturation_events = 0;
    std::vector<double> dlogit;  // d loss / d logit, per sample (mean-reduced)
};

// kind: true -> -mean log D(x); false -> -mean log(1 - D(x))
template <typename T>
BinaryLogTerms binary_log_loss(const Tensor<T>& logits, bool want_real) {
    constexpr double kFloor = 1e-12;
    const int N = static_cast<int>(logits.size());
    BinaryLogTerms out;
    out.dlogit.assign(static_cast<std::size_t>(N), 0.0);
    double total = 0;
    for (int n = 0; n < N; ++n) {
        const double p = sigmoid(static_cast<double>(logits[static_cast<std::size_t>(n)]));
        const double arg = want_real ? p : 1.0 - p;
        if (arg < kFloor) {
            total += -std::log(kFloor);
            ++out.saturation_events;  // gradient is zero at the floor
        } else {
            total += -std::log(arg);
            // d(-log p)/dz = -(1-p);   d(-log(1-p))/dz = p
            out.dlogit[static_cast<std::size_t>(n)] = (want_real ? -(1.0 - p) : p) / N;
        }
    }
    out.loss = total / N;
    return out;
}

}  // namespace terse
