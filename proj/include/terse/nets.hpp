#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "terse/affine.hpp"
#include "terse/layers.hpp"
#include "terse/optim.hpp"
#include "terse/tensor.hpp"

namespace terse {

enum class NetKind : std::uint8_t { Target = 0, Synthesizer = 1, Discriminator = 2 };

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T>* tensor;
};

// ---------------------------------------------------------------------------
// Target classifier: conv5x5 1->10, relu, pool2; conv5x5 10->20, relu, pool2,
// dropout; fc 980->50, relu; fc 50->10. 40x40 input gives 40->36->18->14->7,
// hence the 980 flatten.
// ---------------------------------------------------------------------------
template <typename T>
class TargetNet {
public:
    explicit TargetNet(int n_classes = 10)
        : conv1(1, 10, 5),
          conv2(10, 20, 5),
          pool1(2, 2),
          pool2(2, 2),
          drop(0.5, /*channelwise=*/true, /*layer_id=*/1),
          fc1(20 * 7 * 7, 50),
          fc2(50, n_classes),
          n_classes_(n_classes) {
        static_assert(20 * 7 * 7 == 980);
    }

    Conv2d<T> conv1, conv2;
    MaxPool2d<T> pool1, pool2;
    ReLU<T> relu1, relu2, relu3;
    Dropout<T> drop;
    Linear<T> fc1, fc2;

    void init(Rng& rng, double gain = 1.0) {
        xavier_uniform(conv1.weight.value, gain, rng);
        xavier_uniform(conv2.weight.value, gain, rng);
        xavier_uniform(fc1.weight.value, gain, rng);
        xavier_uniform(fc2.weight.value, gain, rng);
    }

    void set_train(bool train) { training_ = train; drop.training = train; }
    bool is_training() const { return training_; }
    void set_dropout_seed(std::uint64_t seed) { drop.seed = seed; }
    void set_dropout_active(bool active) { drop.training = active; }

    Tensor<T> forward(const Tensor<T>& x) {
        const int N = x.dim(0);
        auto h = relu1.forward(conv1.forward(x));
        h = pool1.forward(h);
        h = relu2.forward(conv2.forward(h));
        h = pool2.forward(h);
        h = drop.forward(h);
        h = h.reshaped({N, 980});
        h = relu3.forward(fc1.forward(h));
        return fc2.forward(h);
    }

    Tensor<T> backward(const Tensor<T>& glogits) {
        auto g = fc1.backward(relu3.backward(fc2.backward(glogits)));
        const int N = g.dim(0);
        g = g.reshaped({N, 20, 7, 7});
        g = drop.backward(g);
        g = conv2.backward(relu2.backward(pool2.backward(g)));
        g = conv1.backward(relu1.backward(pool1.backward(g)));
        return g;
    }

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        conv1.collect(out);
        conv2.collect(out);
        fc1.collect(out);
        fc2.collect(out);
        return out;
    }

    std::vector<NamedTensor<T>> named_tensors() {
        return {{"conv1.weight", &conv1.weight.value}, {"conv1.bias", &conv1.bias.value},
                {"conv2.weight", &conv2.weight.value}, {"conv2.bias", &conv2.bias.value},
                {"fc1.weight", &fc1.weight.value},     {"fc1.bias", &fc1.bias.value},
                {"fc2.weight", &fc2.weight.value},     {"fc2.bias", &fc2.bias.value}};
    }

    void clear_frames() {
        conv1.clear_frames();
        conv2.clear_frames();
        pool1.clear_frames();
        pool2.clear_frames();
        relu1.clear_frames();
        relu2.clear_frames();
        relu3.clear_frames();
        drop.clear_frames();
        fc1.clear_frames();
        fc2.clear_frames();
    }

    void zero_grads() {
        for (Param<T>* p : params()) p->zero_grad();
    }

    int n_classes() const { return n_classes_; }

private:
    int n_classes_;
    bool training_ = true;
};

// ---------------------------------------------------------------------------
// Synthesizer: shared backbone applied to mask and background separately,
// two mid-level branches, concatenated features regressed to six affine
// parameters squashed into the clamp ranges by a tanh map (a hard clip would
// zero the gradient at the range boundary).
// ---------------------------------------------------------------------------
template <typename T>
struct SynthBackbone {
    SynthBackbone() : conv(1, 10, 5), pool(3, 2), bn(10), drop(0.5, true, 10) {}
    Conv2d<T> conv;
    MaxPool2d<T> pool;
    BatchNorm<T> bn;
    ReLU<T> relu;
    Dropout<T> drop;

    Tensor<T> forward(const Tensor<T>& x) {
        return drop.forward(relu.forward(bn.forward(pool.forward(conv.forward(x)))));
    }
    Tensor<T> backward(const Tensor<T>& g) {
        return conv.backward(pool.backward(bn.backward(relu.backward(drop.backward(g)))));
    }
    void set_train(bool t) {
        bn.training = t;
        drop.training = t;
    }
    void collect(std::vector<Param<T>*>& out) {
        conv.collect(out);
        bn.collect(out);
    }
    void clear_frames() {
        conv.clear_frames();
        pool.clear_frames();
        bn.clear_frames();
        relu.clear_frames();
        drop.clear_frames();
    }
};

template <typename T>
struct SynthBranch {
    explicit SynthBranch(std::uint32_t id_base)
        : conv1(10, 20, 3), conv2(20, 20, 3), bn1(20), bn2(20),
          drop1(0.5, true, id_base), drop2(0.5, true, id_base + 1) {}
    Conv2d<T> conv1, conv2;
    BatchNorm<T> bn1, bn2;
    ReLU<T> relu1, relu2;
    Dropout<T> drop1, drop2;

    Tensor<T> forward(const Tensor<T>& x) {
        auto h = drop1.forward(bn1.forward(relu1.forward(conv1.forward(x))));
        return drop2.forward(bn2.forward(relu2.forward(conv2.forward(h))));
    }
    Tensor<T> backward(const Tensor<T>& g) {
        auto h = conv2.backward(relu2.backward(bn2.backward(drop2.backward(g))));
        return conv1.backward(relu1.backward(bn1.backward(drop1.backward(h))));
    }
    void set_train(bool t) {
        bn1.training = bn2.training = t;
        drop1.training = drop2.training = t;
    }
    void collect(std::vector<Param<T>*>& out) {
        conv1.collect(out);
        bn1.collect(out);
        conv2.collect(out);
        bn2.collect(out);
    }
    void clear_frames() {
        conv1.clear_frames();
        conv2.clear_frames();
        bn1.clear_frames();
        bn2.clear_frames();
        relu1.clear_frames();
        relu2.clear_frames();
        drop1.clear_frames();
        drop2.clear_frames();
    }
};

template <typename T>
class SynthesizerNet {
public:
    explicit SynthesizerNet(ClampRanges ranges = ClampRanges{})
        : fg_branch(20), bg_branch(30),
          head_conv1(40, 20, 3), head_bn1(20), head_drop1(0.5, true, 40),
          head_conv2(20, 20, 3), head_bn2(20), head_drop2(0.5, true, 41),
          fc1(20 * 9 * 9, 50), fcbn1(50), fcdrop1(0.5, false, 42),
          fc2(50, 20), fcbn2(20), fcdrop2(0.5, false, 43),
          fc3(20, 6), ranges_(ranges) {
        static_assert(20 * 9 * 9 == 1620);
        ranges_.validate();
    }

    SynthBackbone<T> backbone;
    SynthBranch<T> fg_branch, bg_branch;
    Conv2d<T> head_conv1;
    BatchNorm<T> head_bn1;
    ReLU<T> head_relu1;
    Dropout<T> head_drop1;
    Conv2d<T> head_conv2;
    BatchNorm<T> head_bn2;
    ReLU<T> head_relu2;
    Dropout<T> head_drop2;
    Linear<T> fc1;
    BatchNorm<T> fcbn1;
    ReLU<T> fcrelu1;
    Dropout<T> fcdrop1;
    Linear<T> fc2;
    BatchNorm<T> fcbn2;
    ReLU<T> fcrelu2;
    Dropout<T> fcdrop2;
    Linear<T> fc3;

    void init(Rng& rng, double gain = 0.4) {
        xavier_uniform(backbone.conv.weight.value, gain, rng);
        for (SynthBranch<T>* br : {&fg_branch, &bg_branch}) {
            xavier_uniform(br->conv1.weight.value, gain, rng);
            xavier_uniform(br->conv2.weight.value, gain, rng);
        }
        xavier_uniform(head_conv1.weight.value, gain, rng);
        xavier_uniform(head_conv2.weight.value, gain, rng);
        xavier_uniform(fc1.weight.value, gain, rng);
        xavier_uniform(fc2.weight.value, gain, rng);
        xavier_uniform(fc3.weight.value, gain, rng);
    }

    void set_train(bool t) {
        training_ = t;
        backbone.set_train(t);
        fg_branch.set_train(t);
        bg_branch.set_train(t);
        head_bn1.training = head_bn2.training = t;
        head_drop1.training = head_drop2.training = t;
        fcbn1.training = fcbn2.training = t;
        fcdrop1.training = fcdrop2.training = t;
    }
    bool is_training() const { return training_; }

    void set_dropout_seed(std::uint64_t seed) {
        for (Dropout<T>* d : dropouts()) d->seed = seed;
    }

    // train mode with inactive dropout: deterministic batch-statistics path
    // for gradient checks
    void set_dropout_active(bool active) {
        for (Dropout<T>* d : dropouts()) d->training = active;
    }

    const ClampRanges& ranges() const { return ranges_; }

    // mask and background each pass through the shared backbone; features are
    // concatenated (20+20 channels) and regressed to the squashed parameters.
    Tensor<T> forward(const Tensor<T>& mask, const Tensor<T>& bg) {
        const int N = mask.dim(0);
        auto fg_feat = fg_branch.forward(backbone.forward(mask));
        auto bg_feat = bg_branch.forward(backbone.forward(bg));
        auto cat = concat_channels(fg_feat, bg_feat);
        auto h = head_drop1.forward(head_bn1.forward(head_relu1.forward(head_conv1.forward(cat))));
        h = head_drop2.forward(head_bn2.forward(head_relu2.forward(head_conv2.forward(h))));
        h = h.reshaped({N, 1620});
        h = fcdrop1.forward(fcbn1.forward(fcrelu1.forward(fc1.forward(h))));
        h = fcdrop2.forward(fcbn2.forward(fcrelu2.forward(fc2.forward(h))));
        raw_ = fc3.forward(h);
        Tensor<T> out({N, 6});
        for (int n = 0; n < N; ++n)
            for (int k = 0; k < 6; ++k) {
                const double mid = 0.5 * (ranges_.lo[k] + ranges_.hi[k]);
                const double half = 0.5 * (ranges_.hi[k] - ranges_.lo[k]);
                out.at2(n, k) = T(mid + half * std::tanh(static_cast<double>(raw_.at2(n, k))));
            }
        return out;
    }

    // gparams: gradient w.r.t. the squashed parameters, shape (N, 6)
    void backward(const Tensor<T>& gparams) {
        const int N = gparams.dim(0);
        Tensor<T> graw({N, 6});
        for (int n = 0; n < N; ++n)
            for (int k = 0; k < 6; ++k) {
                const double half = 0.5 * (ranges_.hi[k] - ranges_.lo[k]);
                const double th = std::tanh(static_cast<double>(raw_.at2(n, k)));
                graw.at2(n, k) = T(static_cast<double>(gparams.at2(n, k)) * half * (1.0 - th * th));
            }
        auto g = fc3.backward(graw);
        g = fc2.backward(fcrelu2.backward(fcbn2.backward(fcdrop2.backward(g))));
        g = fc1.backward(fcrelu1.backward(fcbn1.backward(fcdrop1.backward(g))));
        g = g.reshaped({N, 20, 9, 9});
        g = head_conv2.backward(head_relu2.backward(head_bn2.backward(head_drop2.backward(g))));
        g = head_conv1.backward(head_relu1.backward(head_bn1.backward(head_drop1.backward(g))));
        Tensor<T> gfg, gbg;
        split_channels(g, gfg, gbg);
        // LIFO over the shared backbone's cached frames: background path first
        backbone.backward(bg_branch.backward(gbg));
        backbone.backward(fg_branch.backward(gfg));
    }

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        backbone.collect(out);
        fg_branch.collect(out);
        bg_branch.collect(out);
        head_conv1.collect(out);
        head_bn1.collect(out);
        head_conv2.collect(out);
        head_bn2.collect(out);
        fc1.collect(out);
        fcbn1.collect(out);
        fc2.collect(out);
        fcbn2.collect(out);
        fc3.collect(out);
        return out;
    }

    std::vector<NamedTensor<T>> named_tensors() {
        std::vector<NamedTensor<T>> out;
        auto add = [&](const std::string& prefix, Conv2d<T>& c) {
            out.push_back({prefix + ".weight", &c.weight.value});
            out.push_back({prefix + ".bias", &c.bias.value});
        };
        auto addl = [&](const std::string& prefix, Linear<T>& l) {
            out.push_back({prefix + ".weight", &l.weight.value});
            out.push_back({prefix + ".bias", &l.bias.value});
        };
        auto addbn = [&](const std::string& prefix, BatchNorm<T>& b) {
            out.push_back({prefix + ".gamma", &b.gamma.value});
            out.push_back({prefix + ".beta", &b.beta.value});
            out.push_back({prefix + ".running_mean", &b.running_mean});
            out.push_back({prefix + ".running_var", &b.running_var});
        };
        add("backbone.conv", backbone.conv);
        addbn("backbone.bn", backbone.bn);
        add("fg.conv1", fg_branch.conv1);
        addbn("fg.bn1", fg_branch.bn1);
        add("fg.conv2", fg_branch.conv2);
        addbn("fg.bn2", fg_branch.bn2);
        add("bg.conv1", bg_branch.conv1);
        addbn("bg.bn1", bg_branch.bn1);
        add("bg.conv2", bg_branch.conv2);
        addbn("bg.bn2", bg_branch.bn2);
        add("head.conv1", head_conv1);
        addbn("head.bn1", head_bn1);
        add("head.conv2", head_conv2);
        addbn("head.bn2", head_bn2);
        addl("head.fc1", fc1);
        addbn("head.fcbn1", fcbn1);
        addl("head.fc2", fc2);
        addbn("head.fcbn2", fcbn2);
        addl("head.fc3", fc3);
        return out;
    }

    void clear_frames() {
        backbone.clear_frames();
        fg_branch.clear_frames();
        bg_branch.clear_frames();
        head_conv1.clear_frames();
        head_bn1.clear_frames();
        head_relu1.clear_frames();
        head_drop1.clear_frames();
        head_conv2.clear_frames();
        head_bn2.clear_frames();
        head_relu2.clear_frames();
        head_drop2.clear_frames();
        fc1.clear_frames();
        fcbn1.clear_frames();
        fcrelu1.clear_frames();
        fcdrop1.clear_frames();
        fc2.clear_frames();
        fcbn2.clear_frames();
        fcrelu2.clear_frames();
        fcdrop2.clear_frames();
        fc3.clear_frames();
    }

    void zero_grads() {
        for (Param<T>* p : params()) p->zero_grad();
    }

private:
    static Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
        const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
        Tensor<T> out({N, 2 * C, H, W});
        const std::size_t plane = static_cast<std::size_t>(C) * H * W;
        for (int n = 0; n < N; ++n) {
            std::copy(a.ptr() + n * plane, a.ptr() + (n + 1) * plane,
                      out.ptr() + static_cast<std::size_t>(n) * 2 * plane);
            std::copy(b.ptr() + n * plane, b.ptr() + (n + 1) * plane,
                      out.ptr() + static_cast<std::size_t>(n) * 2 * plane + plane);
        }
        return out;
    }
    static void split_channels(const Tensor<T>& g, Tensor<T>& ga, Tensor<T>& gb) {
        const int N = g.dim(0), C2 = g.dim(1), H = g.dim(2), W = g.dim(3);
        const int C = C2 / 2;
        ga = Tensor<T>({N, C, H, W});
        gb = Tensor<T>({N, C, H, W});
        const std::size_t plane = static_cast<std::size_t>(C) * H * W;
        for (int n = 0; n < N; ++n) {
            std::copy(g.ptr() + static_cast<std::size_t>(n) * 2 * plane,
                      g.ptr() + static_cast<std::size_t>(n) * 2 * plane + plane, ga.ptr() + n * plane);
            std::copy(g.ptr() + static_cast<std::size_t>(n) * 2 * plane + plane,
                      g.ptr() + static_cast<std::size_t>(n + 1) * 2 * plane, gb.ptr() + n * plane);
        }
    }

    std::vector<Dropout<T>*> dropouts() {
        return {&backbone.drop, &fg_branch.drop1, &fg_branch.drop2, &bg_branch.drop1,
                &bg_branch.drop2, &head_drop1, &head_drop2, &fcdrop1, &fcdrop2};
    }

    Tensor<T> raw_;
    ClampRanges ranges_;
    bool training_ = true;
};

// ---------------------------------------------------------------------------
// Realism discriminator: strided 4x4 convs 1->16->32->64 with instance norm
// and leaky relu, then a single real-probability logit. 40->20->10->5.
// ---------------------------------------------------------------------------
template <typename T>
class DiscriminatorNet {
public:
    DiscriminatorNet()
        : conv1(1, 16, 4, 2, 1), conv2(16, 32, 4, 2, 1), conv3(32, 64, 4, 2, 1),
          in2(32), in3(64), lr1(T(0.2)), lr2(T(0.2)), lr3(T(0.2)), fc(64 * 5 * 5, 1) {
        static_assert(64 * 5 * 5 == 1600);
    }

    Conv2d<T> conv1, conv2, conv3;
    InstanceNorm2d<T> in2, in3;
    LeakyReLU<T> lr1, lr2, lr3;
    Linear<T> fc;

    void init(Rng& rng, double gain = 1.0) {
        xavier_uniform(conv1.weight.value, gain, rng);
        xavier_uniform(conv2.weight.value, gain, rng);
        xavier_uniform(conv3.weight.value, gain, rng);
        xavier_uniform(fc.weight.value, gain, rng);
    }

    void set_train(bool) {}  // no dropout / batch statistics

    Tensor<T> forward(const Tensor<T>& x) {
        const int N = x.dim(0);
        auto h = lr1.forward(conv1.forward(x));
        h = lr2.forward(in2.forward(conv2.forward(h)));
        h = lr3.forward(in3.forward(conv3.forward(h)));
        h = h.reshaped({N, 1600});
        return fc.forward(h);  // (N, 1) logits
    }

    Tensor<T> backward(const Tensor<T>& glogits) {
        auto g = fc.backward(glogits);
        const int N = g.dim(0);
        g = g.reshaped({N, 64, 5, 5});
        g = conv3.backward(in3.backward(lr3.backward(g)));
        g = conv2.backward(in2.backward(lr2.backward(g)));
        return conv1.backward(lr1.backward(g));
    }

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        conv1.collect(out);
        conv2.collect(out);
        conv3.collect(out);
        fc.collect(out);
        return out;
    }

    std::vector<NamedTensor<T>> named_tensors() {
        return {{"conv1.weight", &conv1.weight.value}, {"conv1.bias", &conv1.bias.value},
                {"conv2.weight", &conv2.weight.value}, {"conv2.bias", &conv2.bias.value},
                {"conv3.weight", &conv3.weight.value}, {"conv3.bias", &conv3.bias.value},
                {"fc.weight", &fc.weight.value},       {"fc.bias", &fc.bias.value}};
    }

    void clear_frames() {
        conv1.clear_frames();
        conv2.clear_frames();
        conv3.clear_frames();
        in2.clear_frames();
        in3.clear_frames();
        lr1.clear_frames();
        lr2.clear_frames();
        lr3.clear_frames();
        fc.clear_frames();
    }

    void zero_grads() {
        for (Param<T>* p : params()) p->zero_grad();
    }
};

// Row-wise softmax (eval-time probabilities).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    const int N = logits.dim(0), C = logits.dim(1);
    Tensor<T> p({N, C});
    for (int n = 0; n < N; ++n) {
        const T* row = logits.ptr() + static_cast<std::size_t>(n) * C;
        double mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max<double>(mx, row[c]);
        double z = 0;
        for (int c = 0; c < C; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
        for (int c = 0; c < C; ++c)
            p.at2(n, c) = T(std::exp(static_cast<double>(row[c]) - mx) / z);
    }
    return p;
}

}  // namespace terse
