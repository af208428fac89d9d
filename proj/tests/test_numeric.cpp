#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "terse/fdcheck.hpp"
#include "terse/layers.hpp"
#include "terse/loss.hpp"
#include "terse/nets.hpp"
#include "terse/optim.hpp"
#include "terse/rng.hpp"
#include "terse/tensor.hpp"

using namespace terse;

TEST_CASE("tensor shape and data length stay consistent") {
    TensorF t({2, 3, 4});
    CHECK(t.size() == 24);
    CHECK_THROWS_AS(TensorF({2, 2}, std::vector<float>{1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(t.reshaped({5, 5}), std::invalid_argument);
    TensorF r = t.reshaped({4, 6});
    CHECK(r.dim(0) == 4);
}

TEST_CASE("conv2d identity kernel reproduces the input") {
    Conv2d<float> conv(1, 1, 1);
    conv.weight.value[0] = 1.0f;
    TensorF x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    TensorF y = conv.forward(x);
    CHECK(y.shape == x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i]));
}

// direct quadruple-loop summation oracle
static TensorD conv_oracle(const TensorD& x, const TensorD& w, const TensorD& b, int stride,
                           int pad) {
    const int N = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OC = w.dim(0), K = w.dim(2);
    const int OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;
    TensorD y({N, OC, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < OC; ++oc)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    double acc = b[static_cast<std::size_t>(oc)];
                    for (int ic = 0; ic < IC; ++ic)
                        for (int kh = 0; kh < K; ++kh)
                            for (int kw = 0; kw < K; ++kw) {
                                const int ih = oh * stride + kh - pad;
                                const int iw = ow * stride + kw - pad;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += x.at4(n, ic, ih, iw) * w.at4(oc, ic, kh, kw);
                            }
                    y.at4(n, oc, oh, ow) = acc;
                }
    return y;
}

TEST_CASE("conv2d 2x2 diagonal kernel matches the summation oracle") {
    Conv2d<double> conv(1, 1, 2);
    conv.weight.value = TensorD({1, 1, 2, 2}, {1, 0, 0, 1});
    TensorD x({1, 1, 2, 2}, {1, 2, 3, 4});
    TensorD y = conv.forward(x);
    CHECK(y.size() == 1);
    CHECK(y[0] == doctest::Approx(5.0));  // 1*1 + 4*1
    TensorD ref = conv_oracle(x, conv.weight.value, conv.bias.value, 1, 0);
    CHECK(y[0] == doctest::Approx(ref[0]));
}

TEST_CASE("conv2d agrees with the summation oracle on randomized shapes") {
    Rng rng(7);
    const struct {
        int n, ic, oc, k, s, p, h, w;
    } cases[] = {{2, 3, 4, 3, 1, 0, 9, 9},   {1, 2, 2, 5, 2, 2, 11, 13},
                 {4, 4, 2, 3, 1, 1, 16, 16}, {3, 1, 5, 4, 2, 1, 10, 10}};
    for (const auto& c : cases) {
        Conv2d<double> conv(c.ic, c.oc, c.k, c.s, c.p);
        fill_uniform(conv.weight.value, rng);
        fill_uniform(conv.bias.value, rng);
        TensorD x({c.n, c.ic, c.h, c.w});
        fill_uniform(x, rng);
        TensorD y = conv.forward(x);
        TensorD ref = conv_oracle(x, conv.weight.value, conv.bias.value, c.s, c.p);
        REQUIRE(y.shape == ref.shape);
        for (std::size_t i = 0; i < y.size(); ++i)
            CHECK(std::abs(y[i] - ref[i]) < 1e-5);
    }
}

TEST_CASE("conv2d rejects mismatched shapes naming both") {
    Conv2d<float> conv(3, 4, 3);
    TensorF x({1, 2, 8, 8});
    CHECK_THROWS_WITH_AS(conv.forward(x), doctest::Contains("[1x2x8x8]"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(conv.forward(x), doctest::Contains("[4x3x3x3]"), std::invalid_argument);
}

TEST_CASE("maxpool constant image stays constant and window checks fire") {
    MaxPool2d<float> pool(2, 2);
    TensorF x({1, 1, 4, 4}, 0.7f);
    TensorF y = pool.forward(x);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(0.7f));

    TensorF tiny({1, 1, 1, 1});
    CHECK_THROWS_AS(pool.forward(tiny), std::invalid_argument);
}

TEST_CASE("maxpool single window picks the max and routes gradient to it") {
    MaxPool2d<float> pool(2, 2);
    TensorF x({1, 1, 2, 2}, {1, 2, 3, 4});
    TensorF y = pool.forward(x);
    CHECK(y.size() == 1);
    CHECK(y[0] == doctest::Approx(4.0f));
    TensorF g({1, 1, 1, 1}, {2.5f});
    TensorF gx = pool.backward(g);
    CHECK(gx[3] == doctest::Approx(2.5f));
    CHECK(gx[0] == 0.0f);
}

TEST_CASE("maxpool tie-break routes to the first index") {
    MaxPool2d<float> pool(2, 1);
    TensorF x({1, 1, 2, 2}, {0.5f, 0.5f, 0.5f, 0.5f});
    pool.forward(x);
    TensorF g({1, 1, 1, 1}, {1.0f});
    TensorF gx = pool.backward(g);
    CHECK(gx[0] == doctest::Approx(1.0f));
    CHECK(gx[1] == 0.0f);
}

TEST_CASE("relu clamps negatives") {
    ReLU<float> relu;
    TensorF x({1, 3}, {-1.0f, 0.0f, 2.0f});
    TensorF y = relu.forward(x);
    CHECK(y[0] == 0.0f);
    CHECK(y[1] == 0.0f);
    CHECK(y[2] == 2.0f);
}

TEST_CASE("batchnorm maps a zero-variance batch to zeros") {
    BatchNorm<float> bn(2);
    TensorF x({4, 2, 3, 3}, 3.25f);
    TensorF y = bn.forward(x);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i]) <= 1e-2f);
}

TEST_CASE("batchnorm eval uses running statistics only") {
    BatchNorm<float> bn(1);
    bn.training = true;
    Rng rng(3);
    TensorD xd({8, 1, 4, 4});
    fill_uniform(xd, rng, -1, 1);
    TensorF x = xd.cast<float>();
    for (int i = 0; i < 20; ++i) bn.forward(x);
    bn.clear_frames();
    bn.training = false;
    TensorF probe({2, 1, 4, 4}, 0.3f);
    TensorF ref = bn.forward(probe);
    bn.clear_frames();
    // a wildly off-distribution eval batch must not disturb the reference output
    TensorF weird({8, 1, 4, 4}, 1000.0f);
    bn.forward(weird);
    bn.clear_frames();
    TensorF again = bn.forward(probe);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(ref[i] == again[i]);
}

TEST_CASE("dropout is identity in eval mode and rescales in train mode") {
    Dropout<float> drop(0.5, false, 3);
    drop.seed = 42;
    TensorF x({1, 64}, 1.0f);

    drop.training = false;
    TensorF y = drop.forward(x);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 1.0f);

    drop.training = true;
    TensorF z = drop.forward(x);
    int kept = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        CHECK((z[i] == 0.0f || z[i] == 2.0f));  // survivors scaled by 1/(1-p)
        if (z[i] != 0.0f) ++kept;
    }
    CHECK(kept > 10);
    CHECK(kept < 54);
}

TEST_CASE("dropout masks are reproducible per (seed, step)") {
    TensorF x({2, 32}, 1.0f);
    Dropout<float> a(0.5, false, 9);
    a.seed = 7;
    Dropout<float> b(0.5, false, 9);
    b.seed = 7;
    TensorF ya = a.forward(x);
    TensorF yb = b.forward(x);
    for (std::size_t i = 0; i < ya.size(); ++i) CHECK(ya[i] == yb[i]);
    // different step -> different mask
    TensorF ya2 = a.forward(x);
    bool any_diff = false;
    for (std::size_t i = 0; i < ya.size(); ++i) any_diff |= (ya[i] != ya2[i]);
    CHECK(any_diff);
}

TEST_CASE("softmax cross-entropy on uniform logits gives ln C") {
    SoftmaxCrossEntropy<float> ce;
    TensorF logits({2, 10}, 0.0f);
    const double loss = ce.forward(logits, {3, 7});
    CHECK(loss == doctest::Approx(std::log(10.0)).epsilon(1e-6));
}

TEST_CASE("softmax cross-entropy saturates to zero loss on a dominant true logit") {
    SoftmaxCrossEntropy<float> ce;
    TensorF logits({1, 10}, 0.0f);
    logits.at2(0, 4) = 1000.0f;
    CHECK(ce.forward(logits, {4}) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("softmax rows sum to one across extreme magnitudes") {
    Rng rng(11);
    for (double scale : {1.0, 1e2, 1e4}) {
        TensorD logits({4, 10});
        fill_uniform(logits, rng, -scale, scale);
        SoftmaxCrossEntropy<double> ce;
        ce.forward(logits, {0, 1, 2, 3});
        for (int n = 0; n < 4; ++n) {
            double s = 0;
            for (int c = 0; c < 10; ++c) s += ce.probs.at2(n, c);
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("softmax cross-entropy rejects bad inputs") {
    SoftmaxCrossEntropy<float> ce;
    TensorF bad({1, 10}, std::numeric_limits<float>::quiet_NaN());
    CHECK_THROWS_AS(ce.forward(bad, {0}), std::invalid_argument);
    TensorF ok({1, 10}, 0.0f);
    CHECK_THROWS_AS(ce.forward(ok, {10}), std::invalid_argument);
    CHECK_THROWS_AS(ce.forward(ok, {0, 1}), std::invalid_argument);
}

TEST_CASE("sgd without momentum is w' = w - lr*g") {
    Param<float> p;
    p.init({3});
    p.value = TensorF({3}, {1.0f, 2.0f, 3.0f});
    p.grad = TensorF({3}, {0.5f, -0.5f, 1.0f});
    std::vector<Param<float>*> ps{&p};
    Sgd<float> opt(0.1, 0.0, 0.0);
    opt.step(ps);
    CHECK(p.value[0] == doctest::Approx(0.95f));
    CHECK(p.value[1] == doctest::Approx(2.05f));
    CHECK(p.value[2] == doctest::Approx(2.9f));
    CHECK(p.grad[0] == 0.0f);  // gradients cleared after the step
}

TEST_CASE("sgd momentum 0.5 second step displaces by 1.5*lr*g") {
    // hand-unrolled recurrence: v1 = g, v2 = 0.5 g + g = 1.5 g
    Param<double> p;
    p.init({1});
    p.value[0] = 1.0;
    std::vector<Param<double>*> ps{&p};
    Sgd<double> opt(0.1, 0.5, 0.0);
    p.grad[0] = 2.0;
    opt.step(ps);
    const double after1 = p.value[0];
    CHECK(1.0 - after1 == doctest::Approx(0.1 * 2.0));
    p.grad[0] = 2.0;
    opt.step(ps);
    CHECK(after1 - p.value[0] == doctest::Approx(1.5 * 0.1 * 2.0));
}

TEST_CASE("adam first step moves by -sign(g)*lr") {
    Param<double> p;
    p.init({2});
    p.value = TensorD({2}, {1.0, -1.0});
    p.grad = TensorD({2}, {0.37, -2.2});
    std::vector<Param<double>*> ps{&p};
    Adam<double> opt(0.001);
    opt.step(ps);
    CHECK(std::abs((1.0 - p.value[0]) - 0.001) < 1e-6);
    CHECK(std::abs((-1.0 - p.value[1]) + 0.001) < 1e-6);
}

TEST_CASE("optimizers reject non-positive learning rates at configuration") {
    CHECK_THROWS_AS(Sgd<float>(0.0), std::invalid_argument);
    CHECK_THROWS_AS(Sgd<float>(-0.1), std::invalid_argument);
    CHECK_THROWS_AS(Adam<float>(0.0), std::invalid_argument);
}

TEST_CASE("xavier stays inside the gain bound") {
    Rng rng(5);
    Tensor<float> w({3, 3});
    xavier_uniform(w, 0.4, rng);
    const double bound = 0.4 * std::sqrt(6.0 / 6.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
        CHECK(w[i] <= bound);
        CHECK(w[i] >= -bound);
    }
}

TEST_CASE("xavier is deterministic per seed") {
    Tensor<float> a({4, 7}), b({4, 7});
    Rng r1(99), r2(99);
    xavier_uniform(a, 1.0, r1);
    xavier_uniform(b, 1.0, r2);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("xavier sample variance matches the moment oracle") {
    // variance of U(-a, a) is a^2/3 = gain^2 * 2/(fan_in+fan_out)
    Rng rng(13);
    Tensor<double> w({250, 400});  // 1e5 draws
    const double gain = 0.4;
    xavier_uniform(w, gain, rng);
    double mean = 0;
    for (std::size_t i = 0; i < w.size(); ++i) mean += w[i];
    mean /= static_cast<double>(w.size());
    double var = 0;
    for (std::size_t i = 0; i < w.size(); ++i) var += (w[i] - mean) * (w[i] - mean);
    var /= static_cast<double>(w.size());
    const double expect = gain * gain * 2.0 / (250 + 400);
    CHECK(var > 0.8 * expect);
    CHECK(var < 1.2 * expect);
}

TEST_CASE("layer finite-difference trials stay under tolerance") {
    // randomized-coordinate trials per op, 64-bit
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        Conv2d<double> conv(2, 3, 3, 1, 1);
        fill_uniform(conv.weight.value, rng, -0.5, 0.5);
        fill_uniform(conv.bias.value, rng, -0.2, 0.2);
        TensorD x({2, 2, 6, 6});
        fill_uniform(x, rng);
        TensorD w;
        auto eval = [&] {
            TensorD out = conv.forward(x);
            conv.clear_frames();
            return [&] {
                double acc = 0;
                for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * w[i];
                return acc;
            }();
        };
        TensorD out0 = conv.forward(x);
        w = TensorD(out0.shape);
        fill_uniform(w, rng);
        conv.clear_frames();
        conv.forward(x);
        conv.weight.zero_grad();
        conv.bias.zero_grad();
        TensorD gx = conv.backward(w);
        CHECK(check_grad_tensor(x, gx, eval, rng, 4) < 1e-5);
        CHECK(check_grad_tensor(conv.weight.value, conv.weight.grad, eval, rng, 4) < 1e-5);
    }
}

TEST_CASE("linear backward matches finite differences") {
    Rng rng(19);
    Linear<double> fc(6, 4);
    fill_uniform(fc.weight.value, rng);
    fill_uniform(fc.bias.value, rng);
    TensorD x({5, 6});
    fill_uniform(x, rng);
    TensorD w({5, 4});
    fill_uniform(w, rng);
    auto eval = [&] {
        TensorD out = fc.forward(x);
        fc.clear_frames();
        double acc = 0;
        for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * w[i];
        return acc;
    };
    fc.forward(x);
    fc.weight.zero_grad();
    fc.bias.zero_grad();
    TensorD gx = fc.backward(w);
    CHECK(check_grad_tensor(x, gx, eval, rng, 20) < 1e-5);
    CHECK(check_grad_tensor(fc.weight.value, fc.weight.grad, eval, rng, 20) < 1e-5);
    CHECK(check_grad_tensor(fc.bias.value, fc.bias.grad, eval, rng, 4) < 1e-5);
}

TEST_CASE("counter rng is order independent") {
    const double a = counter_uniform(1, 2, 3, 4);
    (void)counter_uniform(9, 9, 9, 9);
    CHECK(counter_uniform(1, 2, 3, 4) == a);
    CHECK(counter_uniform(1, 2, 3, 5) != a);
}
