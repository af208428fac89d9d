#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "terse/parallel.hpp"
#include "terse/rng.hpp"
#include "terse/tensor.hpp"

namespace terse {

// One trainable tensor plus its gradient and optimizer slots. Optimizer state
// is sized on first use and zero-initialized.
template <typename T>
struct Param {
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> m1;  // SGD momentum / Adam first moment
    Tensor<T> m2;  // Adam second moment
    std::uint64_t steps = 0;

    void init(std::vector<int> shape) {
        value = Tensor<T>(shape);
        grad = Tensor<T>(std::move(shape));
    }
    void zero_grad() { grad.zero(); }
};

namespace detail {
inline int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}
}  // namespace detail

// 2-D cross-correlation, NCHW, square kernel.
template <typename T>
class Conv2d {
public:
    Conv2d(int in_ch, int out_ch, int k, int stride = 1, int pad = 0)
        : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad) {
        weight.init({out_ch, in_ch, k, k});
        bias.init({out_ch});
    }

    Param<T> weight, bias;
    bool training = true;

    Tensor<T> forward(const Tensor<T>& x) {
        check_input(x);
        const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        const int OH = detail::conv_out_extent(H, k_, stride_, pad_);
        const int OW = detail::conv_out_extent(W, k_, stride_, pad_);
        if (OH <= 0 || OW <= 0)
            throw std::invalid_argument("conv2d: input " + x.shape_str() + " too small for kernel " +
                                        std::to_string(k_) + " stride " + std::to_string(stride_) +
                                        " pad " + std::to_string(pad_));
        Tensor<T> y({N, out_ch_, OH, OW});
        const T* xp = x.ptr();
        T* yp = y.ptr();
        const T* wp = weight.value.ptr();
        const T* bp = bias.value.ptr();
        const std::size_t x_n = static_cast<std::size_t>(in_ch_) * H * W;
        const std::size_t y_n = static_cast<std::size_t>(out_ch_) * OH * OW;
        parallel_for_each(static_cast<std::size_t>(N), [&](std::size_t n) {
            const T* xn = xp + n * x_n;
            T* yn = yp + n * y_n;
            for (int oc = 0; oc < out_ch_; ++oc) {
                T* yplane = yn + static_cast<std::size_t>(oc) * OH * OW;
                for (int i = 0; i < OH * OW; ++i) yplane[i] = bp[oc];
                for (int ic = 0; ic < in_ch_; ++ic) {
                    const T* xplane = xn + static_cast<std::size_t>(ic) * H * W;
                    const T* wk = wp + ((static_cast<std::size_t>(oc) * in_ch_) + ic) * k_ * k_;
                    for (int kh = 0; kh < k_; ++kh) {
                        for (int oh = 0; oh < OH; ++oh) {
                            const int ih = oh * stride_ + kh - pad_;
                            if (ih < 0 || ih >= H) continue;
                            const T* xrow = xplane + static_cast<std::size_t>(ih) * W;
                            T* yrow = yplane + static_cast<std::size_t>(oh) * OW;
                            for (int kw = 0; kw < k_; ++kw) {
                                const T ws = wk[kh * k_ + kw];
                                int lo, hi;
                                ow_range(kw, W, OW, lo, hi);
                                if (stride_ == 1) {
                                    const T* xr = xrow + (lo + kw - pad_);
                                    for (int ow = lo; ow <= hi; ++ow) yrow[ow] += ws * xr[ow - lo];
                                } else {
                                    for (int ow = lo; ow <= hi; ++ow)
                                        yrow[ow] += ws * xrow[ow * stride_ + kw - pad_];
                                }
                            }
                        }
                    }
                }
            }
        });
        frames_.push_back(Frame{x, N, H, W, OH, OW});
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        if (frames_.empty()) throw std::logic_error("conv2d backward without forward");
        Frame f = std::move(frames_.back());
        frames_.pop_back();
        require_shape(gy, {f.N, out_ch_, f.OH, f.OW}, "conv2d backward");
        const Tensor<T>& x = f.input;
        Tensor<T> gx({f.N, in_ch_, f.H, f.W});
        const std::size_t x_n = static_cast<std::size_t>(in_ch_) * f.H * f.W;
        const std::size_t y_n = static_cast<std::size_t>(out_ch_) * f.OH * f.OW;

        // input gradient: disjoint writes per batch index
        parallel_for_each(static_cast<std::size_t>(f.N), [&](std::size_t n) {
            const T* gyn = gy.ptr() + n * y_n;
            T* gxn = gx.ptr() + n * x_n;
            const T* wp = weight.value.ptr();
            for (int oc = 0; oc < out_ch_; ++oc) {
                const T* gyplane = gyn + static_cast<std::size_t>(oc) * f.OH * f.OW;
                for (int ic = 0; ic < in_ch_; ++ic) {
                    T* gxplane = gxn + static_cast<std::size_t>(ic) * f.H * f.W;
                    const T* wk = wp + ((static_cast<std::size_t>(oc) * in_ch_) + ic) * k_ * k_;
                    for (int kh = 0; kh < k_; ++kh) {
                        for (int oh = 0; oh < f.OH; ++oh) {
                            const int ih = oh * stride_ + kh - pad_;
                            if (ih < 0 || ih >= f.H) continue;
                            T* gxrow = gxplane + static_cast<std::size_t>(ih) * f.W;
                            const T* gyrow = gyplane + static_cast<std::size_t>(oh) * f.OW;
                            for (int kw = 0; kw < k_; ++kw) {
                                const T ws = wk[kh * k_ + kw];
                                int lo, hi;
                                ow_range(kw, f.W, f.OW, lo, hi);
                                for (int ow = lo; ow <= hi; ++ow)
                                    gxrow[ow * stride_ + kw - pad_] += ws * gyrow[ow];
                            }
                        }
                    }
                }
            }
        });

        // weight/bias gradient: disjoint writes per output channel, inner
        // accumulation order fixed (n, oh, ow) for any worker count
        parallel_for_each(static_cast<std::size_t>(out_ch_), [&](std::size_t oc) {
            T* dw = weight.grad.ptr() + oc * static_cast<std::size_t>(in_ch_) * k_ * k_;
            T bacc = T(0);
            for (int n = 0; n < f.N; ++n) {
                const T* gyplane = gy.ptr() + n * y_n + oc * static_cast<std::size_t>(f.OH) * f.OW;
                for (int i = 0; i < f.OH * f.OW; ++i) bacc += gyplane[i];
            }
            bias.grad[oc] += bacc;
            for (int ic = 0; ic < in_ch_; ++ic) {
                for (int kh = 0; kh < k_; ++kh) {
                    for (int kw = 0; kw < k_; ++kw) {
                        T acc = T(0);
                        int lo, hi;
                        ow_range(kw, f.W, f.OW, lo, hi);
                        for (int n = 0; n < f.N; ++n) {
                            const T* xplane = x.ptr() + n * x_n + ic * static_cast<std::size_t>(f.H) * f.W;
                            const T* gyplane = gy.ptr() + n * y_n + oc * static_cast<std::size_t>(f.OH) * f.OW;
                            for (int oh = 0; oh < f.OH; ++oh) {
                                const int ih = oh * stride_ + kh - pad_;
                                if (ih < 0 || ih >= f.H) continue;
                                const T* xrow = xplane + static_cast<std::size_t>(ih) * f.W;
                                const T* gyrow = gyplane + static_cast<std::size_t>(oh) * f.OW;
                                if (stride_ == 1) {
                                    const T* xr = xrow + (lo + kw - pad_);
                                    for (int ow = lo; ow <= hi; ++ow) acc += gyrow[ow] * xr[ow - lo];
                                } else {
                                    for (int ow = lo; ow <= hi; ++ow)
                                        acc += gyrow[ow] * xrow[ow * stride_ + kw - pad_];
                                }
                            }
                        }
                        dw[(static_cast<std::size_t>(ic) * k_ + kh) * k_ + kw] += acc;
                    }
                }
            }
        });
        return gx;
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    void clear_frames() { frames_.clear(); }

    int kernel() const { return k_; }

private:
    struct Frame {
        Tensor<T> input;
        int N, H, W, OH, OW;
    };

    void check_input(const Tensor<T>& x) const {
        if (x.ndim() != 4 || x.dim(1) != in_ch_)
            throw std::invalid_argument("conv2d: input " + x.shape_str() +
                                        " incompatible with weights " + weight.value.shape_str());
    }

    // valid ow range such that iw = ow*stride + kw - pad lies in [0, W)
    void ow_range(int kw, int W, int OW, int& lo, int& hi) const {
        const int shift = kw - pad_;
        lo = shift >= 0 ? 0 : (-shift + stride_ - 1) / stride_;
        hi = (W - 1 - shift) / stride_;
        if (hi > OW - 1) hi = OW - 1;
        if (lo < 0) lo = 0;
    }

    int in_ch_, out_ch_, k_, stride_, pad_;
    std::vector<Frame> frames_;
};

// Max pooling; backward routes gradient to the first-seen maximum per window.
template <typename T>
class MaxPool2d {
public:
    MaxPool2d(int k, int stride) : k_(k), stride_(stride) {}

    bool training = true;

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.ndim() != 4) throw std::invalid_argument("maxpool2d: want NCHW, got " + x.shape_str());
        const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        if (H < k_ || W < k_)
            throw std::invalid_argument("maxpool2d: window " + std::to_string(k_) +
                                        " larger than input " + x.shape_str());
        const int OH = (H - k_) / stride_ + 1;
        const int OW = (W - k_) / stride_ + 1;
        Tensor<T> y({N, C, OH, OW});
        Frame f;
        f.N = N; f.C = C; f.H = H; f.W = W; f.OH = OH; f.OW = OW;
        f.argmax.resize(y.size());
        parallel_for_each(static_cast<std::size_t>(N) * C, [&](std::size_t nc) {
            const T* xplane = x.ptr() + nc * static_cast<std::size_t>(H) * W;
            T* yplane = y.ptr() + nc * static_cast<std::size_t>(OH) * OW;
            int* am = f.argmax.data() + nc * static_cast<std::size_t>(OH) * OW;
            for (int oh = 0; oh < OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    const int h0 = oh * stride_, w0 = ow * stride_;
                    T best = xplane[h0 * W + w0];
                    int besti = h0 * W + w0;
                    for (int kh = 0; kh < k_; ++kh)
                        for (int kw = 0; kw < k_; ++kw) {
                            const int idx = (h0 + kh) * W + (w0 + kw);
                            if (xplane[idx] > best) {  // strict: first index wins ties
                                best = xplane[idx];
                                besti = idx;
                            }
                        }
                    yplane[oh * OW + ow] = best;
                    am[oh * OW + ow] = besti;
                }
            }
        });
        frames_.push_back(std::move(f));
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        if (frames_.empty()) throw std::logic_error("maxpool2d backward without forward");
        Frame f = std::move(frames_.back());
        frames_.pop_back();
        require_shape(gy, {f.N, f.C, f.OH, f.OW}, "maxpool2d backward");
        Tensor<T> gx({f.N, f.C, f.H, f.W});
        parallel_for_each(static_cast<std::size_t>(f.N) * f.C, [&](std::size_t nc) {
            const T* gyplane = gy.ptr() + nc * static_cast<std::size_t>(f.OH) * f.OW;
            T* gxplane = gx.ptr() + nc * static_cast<std::size_t>(f.H) * f.W;
            const int* am = f.argmax.data() + nc * static_cast<std::size_t>(f.OH) * f.OW;
            for (int i = 0; i < f.OH * f.OW; ++i) gxplane[am[i]] += gyplane[i];
        });
        return gx;
    }

    void collect(std::vector<Param<T>*>&) {}
    void clear_frames() { frames_.clear(); }

private:
    struct Frame {
        std::vector<int> argmax;
        int N, C, H, W, OH, OW;
    };
    int k_, stride_;
    std::vector<Frame> frames_;
};

template <typename T>
class Linear {
public:
    Linear(int in, int out) : in_(in), out_(out) {
        weight.init({out, in});
        bias.init({out});
    }

    Param<T> weight, bias;
    bool training = true;

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.ndim() != 2 || x.dim(1) != in_)
            throw std::invalid_argument("linear: input " + x.shape_str() +
                                        " incompatible with weights " + weight.value.shape_str());
        const int N = x.dim(0);
        Tensor<T> y({N, out_});
        parallel_for_each(static_cast<std::size_t>(N), [&](std::size_t n) {
            const T* xr = x.ptr() + n * in_;
            T* yr = y.ptr() + n * out_;
            for (int o = 0; o < out_; ++o) {
                const T* wr = weight.value.ptr() + static_cast<std::size_t>(o) * in_;
                T acc = bias.value[o];
                for (int i = 0; i < in_; ++i) acc += wr[i] * xr[i];
                yr[o] = acc;
            }
        });
        frames_.push_back(Frame{x, N});
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        if (frames_.empty()) throw std::logic_error("linear backward without forward");
        Frame f = std::move(frames_.back());
        frames_.pop_back();
        require_shape(gy, {f.N, out_}, "linear backward");
        Tensor<T> gx({f.N, in_});
        parallel_for_each(static_cast<std::size_t>(f.N), [&](std::size_t n) {
            const T* gyr = gy.ptr() + n * out_;
            T* gxr = gx.ptr() + n * in_;
            for (int o = 0; o < out_; ++o) {
                const T g = gyr[o];
                const T* wr = weight.value.ptr() + static_cast<std::size_t>(o) * in_;
                for (int i = 0; i < in_; ++i) gxr[i] += g * wr[i];
            }
        });
        parallel_for_each(static_cast<std::size_t>(out_), [&](std::size_t o) {
            T* dwr = weight.grad.ptr() + o * in_;
            T bacc = T(0);
            for (int n = 0; n < f.N; ++n) {
                const T g = gy.ptr()[n * static_cast<std::size_t>(out_) + o];
                bacc += g;
                const T* xr = f.input.ptr() + n * static_cast<std::size_t>(in_);
                for (int i = 0; i < in_; ++i) dwr[i] += g * xr[i];
            }
            bias.grad[o] += bacc;
        });
        return gx;
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
    void clear_frames() { frames_.clear(); }

private:
    struct Frame {
        Tensor<T> input;
        int N;
    };
    int in_, out_;
    std::vector<Frame> frames_;
};

template <typename T>
class ReLU {
public:
    bool training = true;

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> y = x;
        std::vector<std::uint8_t> mask(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            mask[i] = x[i] > T(0);
            if (!mask[i]) y[i] = T(0);
        }
        masks_.push_back(std::move(mask));
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        if (masks_.empty()) throw std::logic_error("relu backward without forward");
        std::vector<std::uint8_t> mask = std::move(masks_.back());
        masks_.pop_back();
        Tensor<T> gx = gy;
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (!mask[i]) gx[i] = T(0);
        return gx;
    }

    void collect(std::vector<Param<T>*>&) {}
    void clear_frames() { masks_.clear(); }

private:
    std::vector<std::vector<std::uint8_t>> masks_;
};

template <typename T>
class LeakyReLU {
public:
    explicit LeakyReLU(T slope = T(0.2)) : slope_(slope) {}
    bool training = true;

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> y = x;
        std::vector<std::uint8_t> mask(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            mask[i] = x[i] > T(0);
            if (!mask[i]) y[i] = slope_ * x[i];
        }
        masks_.push_back(std::move(mask));
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        if (masks_.empty()) throw std::logic_error("leaky relu backward without forward");
        std::vector<std::uint8_t> mask = std::move(masks_.back());
        masks_.pop_back();
        Tensor<T> gx = gy;
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (!mask[i]) gx[i] *= slope_;
        return gx;
    }

    void collect(std::vector<Param<T>*>&) {}
    void clear_frames() { masks_.clear(); }

private:
    T slope_;
    std::vector<std::vector<std::uint8_t>> masks_;
};

// Dropout with counter-based masks: the mask for a given (seed, layer id,
// step, cell) is a pure function of the key, independent of evaluation order.
// Channelwise mode zeroes whole (n, c) feature planes; elementwise mode zeroes
// individual cells. Identity in eval mode.
template <typename T>
class Dropout {
public:
    Dropout(double p, bool channelwise, std::uint32_t layer_id)
        : p_(p), channelwise_(channelwise), layer_id_(layer_id) {}

    bool training = true;
    std::uint64_t seed = 0;

    // pins the step used by the next training forward (finite-difference
    // checks need the same mask across repeated evaluations)
    void set_next_step(std::uint64_t s) { next_step_ = s; }

    Tensor<T> forward(const Tensor<T>& x) {
        if (!training) {
            steps_.push_back(kEvalStep);
            return x;
        }
        const std::uint64_t step = next_step_++;
        steps_.push_back(step);
        Tensor<T> y = x;
        apply_mask(y, step);
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        if (steps_.empty()) throw std::logic_error("dropout backward without forward");
        const std::uint64_t step = steps_.back();
        steps_.pop_back();
        Tensor<T> gx = gy;
        if (step != kEvalStep) apply_mask(gx, step);
        return gx;
    }

    void collect(std::vector<Param<T>*>&) {}
    void clear_frames() { steps_.clear(); }

private:
    static constexpr std::uint64_t kEvalStep = ~0ull;

    void apply_mask(Tensor<T>& t, std::uint64_t step) const {
        const T scale = T(1.0 / (1.0 - p_));
        if (channelwise_ && t.ndim() == 4) {
            const std::size_t plane = static_cast<std::size_t>(t.dim(2)) * t.dim(3);
            const std::size_t planes = static_cast<std::size_t>(t.dim(0)) * t.dim(1);
            for (std::size_t nc = 0; nc < planes; ++nc) {
                const bool keep = counter_uniform(seed, layer_id_, step, nc) >= p_;
                T* p = t.ptr() + nc * plane;
                if (keep)
                    for (std::size_t i = 0; i < plane; ++i) p[i] *= scale;
                else
                    for (std::size_t i = 0; i < plane; ++i) p[i] = T(0);
            }
        } else {
            for (std::size_t i = 0; i < t.size(); ++i) {
                const bool keep = counter_uniform(seed, layer_id_, step, i) >= p_;
                t[i] = keep ? t[i] * scale : T(0);
            }
        }
    }

    double p_;
    bool channelwise_;
    std::uint32_t layer_id_;
    std::uint64_t next_step_ = 0;
    std::vector<std::uint64_t> steps_;
};

// Batch normalization over all axes except the channel axis. Accepts (N,C)
// and (N,C,H,W). Training mode normalizes with batch statistics and updates
// running estimates (momentum 0.1, unbiased variance); eval mode uses the
// running estimates only.
template <typename T>
class BatchNorm {
public:
    BatchNorm(int channels, double eps = 1e-5, double momentum = 0.1)
        : channels_(channels), eps_(eps), momentum_(momentum) {
        gamma.init({channels});
        gamma.value.fill(T(1));
        beta.init({channels});
        running_mean = Tensor<T>({channels});
        running_var = Tensor<T>({channels}, T(1));
    }

    Param<T> gamma, beta;
    Tensor<T> running_mean, running_var;
    bool training = true;

    Tensor<T> forward(const Tensor<T>& x) {
        const auto [N, C, S] = split_shape(x);
        Tensor<T> y = x;
        Frame f;
        f.shape = x.shape;
        f.train = training;
        if (training) {
            const double M = static_cast<double>(N) * S;
            f.xhat = Tensor<T>(x.shape);
            f.sinv = Tensor<T>({C});
            for (int c = 0; c < C; ++c) {
                double mean = 0, var = 0;
                for_channel(x, c, [&](T v) { mean += v; });
                mean /= M;
                for_channel(x, c, [&](T v) { var += (v - mean) * (v - mean); });
                var /= M;
                const double sinv = 1.0 / std::sqrt(var + eps_);
                f.sinv[c] = T(sinv);
                const double unbiased = var * M / std::max(1.0, M - 1.0);
                running_mean[c] = T((1.0 - momentum_) * running_mean[c] + momentum_ * mean);
                running_var[c] = T((1.0 - momentum_) * running_var[c] + momentum_ * unbiased);
                map_channel(x, y, f.xhat, c, [&](T v) { return T((v - mean) * sinv); });
            }
        } else {
            f.xhat = Tensor<T>(x.shape);
            f.sinv = Tensor<T>({C});
            for (int c = 0; c < C; ++c) {
                const double sinv = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps_);
                f.sinv[c] = T(sinv);
                const double mean = running_mean[c];
                map_channel(x, y, f.xhat, c, [&](T v) { return T((v - mean) * sinv); });
            }
        }
        frames_.push_back(std::move(f));
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        if (frames_.empty()) throw std::logic_error("batchnorm backward without forward");
        Frame f = std::move(frames_.back());
        frames_.pop_back();
        const auto [N, C, S] = split_shape_of(f.shape);
        Tensor<T> gx(f.shape);
        if (f.train) {
            const double M = static_cast<double>(N) * S;
            for (int c = 0; c < C; ++c) {
                double s1 = 0, s2 = 0;
                visit_channel(gy, f.xhat, c, [&](T g, T xh) {
                    s1 += g;
                    s2 += static_cast<double>(g) * xh;
                });
                beta.grad[c] += T(s1);
                gamma.grad[c] += T(s2);
                const double gs = static_cast<double>(gamma.value[c]) * f.sinv[c];
                emit_channel(gy, f.xhat, gx, c, [&](T g, T xh) {
                    return T(gs * (g - s1 / M - static_cast<double>(xh) * s2 / M));
                });
            }
        } else {
            // running statistics are constants, so dx has no mean-correction terms
            for (int c = 0; c < C; ++c) {
                double s1 = 0, s2 = 0;
                visit_channel(gy, f.xhat, c, [&](T g, T xh) {
                    s1 += g;
                    s2 += static_cast<double>(g) * xh;
                });
                beta.grad[c] += T(s1);
                gamma.grad[c] += T(s2);
                const double gs = static_cast<double>(gamma.value[c]) * f.sinv[c];
                emit_channel(gy, f.xhat, gx, c, [&](T g, T) { return T(gs * g); });
            }
        }
        return gx;
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
    void clear_frames() { frames_.clear(); }

private:
    struct Frame {
        std::vector<int> shape;
        Tensor<T> xhat;
        Tensor<T> sinv;
        bool train = true;
    };

    std::tuple<int, int, int> split_shape(const Tensor<T>& x) const {
        return split_shape_of(x.shape);
    }
    std::tuple<int, int, int> split_shape_of(const std::vector<int>& s) const {
        if (s.size() == 2) {
            if (s[1] != channels_) throw_bad(s);
            return {s[0], s[1], 1};
        }
        if (s.size() == 4) {
            if (s[1] != channels_) throw_bad(s);
            return {s[0], s[1], s[2] * s[3]};
        }
        throw_bad(s);
        return {0, 0, 0};
    }
    void throw_bad(const std::vector<int>& s) const {
        throw std::invalid_argument("batchnorm(" + std::to_string(channels_) + "): bad input " +
                                    Tensor<T>::shape_str(s));
    }

    template <typename F>
    void for_channel(const Tensor<T>& x, int c, F&& fn) const {
        const auto [N, C, S] = split_shape(x);
        for (int n = 0; n < N; ++n) {
            const T* p = x.ptr() + (static_cast<std::size_t>(n) * C + c) * S;
            for (int i = 0; i < S; ++i) fn(p[i]);
        }
    }
    template <typename F>
    void map_channel(const Tensor<T>& x, Tensor<T>& y, Tensor<T>& xhat, int c, F&& fn) const {
        const auto [N, C, S] = split_shape(x);
        const double g = gamma.value[c], b = beta.value[c];
        for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * S;
            for (int i = 0; i < S; ++i) {
                const T xh = fn(x.data[off + i]);
                xhat.data[off + i] = xh;
                y.data[off + i] = T(g * xh + b);
            }
        }
    }
    template <typename F>
    void visit_channel(const Tensor<T>& a, const Tensor<T>& b, int c, F&& fn) const {
        const auto [N, C, S] = split_shape(a);
        for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * S;
            for (int i = 0; i < S; ++i) fn(a.data[off + i], b.data[off + i]);
        }
    }
    template <typename F>
    void emit_channel(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out, int c, F&& fn) const {
        const auto [N, C, S] = split_shape(a);
        for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * S;
            for (int i = 0; i < S; ++i) out.data[off + i] = fn(a.data[off + i], b.data[off + i]);
        }
    }

    int channels_;
    double eps_, momentum_;
    std::vector<Frame> frames_;
};

// Per-sample, per-channel normalization over the spatial axes; no affine
// parameters, no running statistics (the same computation in train and eval).
template <typename T>
class InstanceNorm2d {
public:
    explicit InstanceNorm2d(int channels, double eps = 1e-5) : channels_(channels), eps_(eps) {}

    bool training = true;

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.ndim() != 4 || x.dim(1) != channels_)
            throw std::invalid_argument("instancenorm(" + std::to_string(channels_) +
                                        "): bad input " + x.shape_str());
        const int S = x.dim(2) * x.dim(3);
        const std::size_t planes = static_cast<std::size_t>(x.dim(0)) * x.dim(1);
        Frame f;
        f.xhat = Tensor<T>(x.shape);
        f.sinv.resize(planes);
        Tensor<T> y(x.shape);
        for (std::size_t nc = 0; nc < planes; ++nc) {
            const T* p = x.ptr() + nc * S;
            double mean = 0;
            for (int i = 0; i < S; ++i) mean += p[i];
            mean /= S;
            double var = 0;
            for (int i = 0; i < S; ++i) var += (p[i] - mean) * (p[i] - mean);
            var /= S;
            const double sinv = 1.0 / std::sqrt(var + eps_);
            f.sinv[nc] = T(sinv);
            T* xh = f.xhat.ptr() + nc * S;
            T* yp = y.ptr() + nc * S;
            for (int i = 0; i < S; ++i) {
                xh[i] = T((p[i] - mean) * sinv);
                yp[i] = xh[i];
            }
        }
        frames_.push_back(std::move(f));
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        if (frames_.empty()) throw std::logic_error("instancenorm backward without forward");
        Frame f = std::move(frames_.back());
        frames_.pop_back();
        const int S = f.xhat.dim(2) * f.xhat.dim(3);
        const std::size_t planes = static_cast<std::size_t>(f.xhat.dim(0)) * f.xhat.dim(1);
        Tensor<T> gx(f.xhat.shape);
        for (std::size_t nc = 0; nc < planes; ++nc) {
            const T* g = gy.ptr() + nc * S;
            const T* xh = f.xhat.ptr() + nc * S;
            T* out = gx.ptr() + nc * S;
            double s1 = 0, s2 = 0;
            for (int i = 0; i < S; ++i) {
                s1 += g[i];
                s2 += static_cast<double>(g[i]) * xh[i];
            }
            const double sinv = f.sinv[nc];
            for (int i = 0; i < S; ++i)
                out[i] = T(sinv * (g[i] - s1 / S - static_cast<double>(xh[i]) * s2 / S));
        }
        return gx;
    }

    void collect(std::vector<Param<T>*>&) {}
    void clear_frames() { frames_.clear(); }

private:
    struct Frame {
        Tensor<T> xhat;
        std::vector<T> sinv;
    };
    int channels_;
    double eps_;
    std::vector<Frame> frames_;
};

}  // namespace terse
