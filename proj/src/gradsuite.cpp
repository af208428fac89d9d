#include <array>
#include <cmath>

#include "terse/compositor.hpp"
#include "terse/fdcheck.hpp"
#include "terse/layers.hpp"
#include "terse/loss.hpp"
#include "terse/nets.hpp"

namespace terse {

namespace {

using TD = Tensor<double>;

// weighted-sum scalarization: loss = sum w .* out
double weighted(const TD& out, const TD& w) {
    double acc = 0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * w[i];
    return acc;
}

TD rand_like(const std::vector<int>& shape, Rng& rng, double lo = -1, double hi = 1) {
    TD t(shape);
    fill_uniform(t, rng, lo, hi);
    return t;
}

// blurred digit-like image: smooth blob mixture, safe for sampler FD
TD smooth_digit(Rng& rng) {
    TD img({kImageSize, kImageSize});
    const int blobs = 4;
    std::vector<std::array<double, 3>> bs;
    for (int b = 0; b < blobs; ++b)
        bs.push_back({rng.uniform(12, 28), rng.uniform(12, 28), rng.uniform(2.0, 4.0)});
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x) {
            double v = 0;
            for (const auto& b : bs) {
                const double dx = x - b[1], dy = y - b[0];
                v += 0.5 * std::exp(-(dx * dx + dy * dy) / (2 * b[2] * b[2]));
            }
            img.at2(y, x) = std::min(0.95, v);
        }
    return img;
}

// Zero the scalarization weight at output pixels whose sampling position sits
// near a lattice knot (the sampler is piecewise linear there), optionally
// dilated one pixel for operations that couple neighbors (the mask blur).
// Finite differences require the probed function to be smooth across the
// whole +-eps window; the masked weighted sum is.
void zero_near_knot_weights(const TD& grid, TD& w, double margin, bool dilate) {
    const int H = grid.dim(0), W = grid.dim(1);
    std::vector<std::uint8_t> near(static_cast<std::size_t>(H) * W, 0);
    for (int i = 0; i < H * W; ++i) {
        const double px = (grid[static_cast<std::size_t>(i) * 2] + 1.0) * 0.5 * (W - 1);
        const double py = (grid[static_cast<std::size_t>(i) * 2 + 1] + 1.0) * 0.5 * (H - 1);
        const double fx = std::abs(px - std::round(px)), fy = std::abs(py - std::round(py));
        if (fx < margin || fy < margin) near[static_cast<std::size_t>(i)] = 1;
    }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            bool hit = false;
            const int r = dilate ? 1 : 0;
            for (int dy = -r; dy <= r && !hit; ++dy)
                for (int dx = -r; dx <= r && !hit; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy >= 0 && yy < H && xx >= 0 && xx < W &&
                        near[static_cast<std::size_t>(yy) * W + xx])
                        hit = true;
                }
            if (hit) w.at2(y, x) = 0;
        }
}

CheckResult conv_check() {
    CheckResult r{"conv2d backward vs finite differences", 0, 1e-5, false};
    Rng rng(101);
    const struct {
        int ic, oc, k, s, p, h, w;
    } cases[] = {{3, 2, 3, 1, 0, 8, 8}, {2, 3, 5, 2, 2, 9, 9}, {1, 4, 3, 1, 1, 6, 7}};
    for (const auto& c : cases) {
        Conv2d<double> conv(c.ic, c.oc, c.k, c.s, c.p);
        fill_uniform(conv.weight.value, rng, -0.5, 0.5);
        fill_uniform(conv.bias.value, rng, -0.2, 0.2);
        TD x = rand_like({2, c.ic, c.h, c.w}, rng);
        TD w;
        auto eval = [&] {
            TD out = conv.forward(x);
            conv.clear_frames();
            return weighted(out, w);
        };
        TD out0 = conv.forward(x);
        w = rand_like(out0.shape, rng);
        conv.clear_frames();
        conv.forward(x);
        conv.weight.zero_grad();
        conv.bias.zero_grad();
        TD gx = conv.backward(w);
        r.max_err = std::max(r.max_err, check_grad_tensor(x, gx, eval, rng));
        r.max_err = std::max(r.max_err, check_grad_tensor(conv.weight.value, conv.weight.grad, eval, rng));
        r.max_err = std::max(r.max_err, check_grad_tensor(conv.bias.value, conv.bias.grad, eval, rng));
    }
    r.pass = r.max_err < r.tol;
    return r;
}

CheckResult pool_check() {
    CheckResult r{"maxpool2d backward vs finite differences", 0, 1e-5, false};
    Rng rng(102);
    for (int trial = 0; trial < 6; ++trial) {
        MaxPool2d<double> pool(trial % 2 ? 2 : 3, 2);
        TD x = rand_like({2, 2, 7, 7}, rng);  // continuous draws: unique maxima
        TD w;
        auto eval = [&] {
            TD out = pool.forward(x);
            pool.clear_frames();
            return weighted(out, w);
        };
        TD out0 = pool.forward(x);
        w = rand_like(out0.shape, rng);
        pool.clear_frames();
        pool.forward(x);
        TD gx = pool.backward(w);
        r.max_err = std::max(r.max_err, check_grad_tensor(x, gx, eval, rng, 12, 1e-6));
    }
    r.pass = r.max_err < r.tol;
    return r;
}

CheckResult linear_check() {
    CheckResult r{"linear backward vs finite differences", 0, 1e-5, false};
    Rng rng(103);
    for (int trial = 0; trial < 4; ++trial) {
        Linear<double> fc(7, 5);
        fill_uniform(fc.weight.value, rng);
        fill_uniform(fc.bias.value, rng);
        TD x = rand_like({3, 7}, rng);
        TD w;
        auto eval = [&] {
            TD out = fc.forward(x);
            fc.clear_frames();
            return weighted(out, w);
        };
        w = rand_like({3, 5}, rng);
        fc.forward(x);
        fc.weight.zero_grad();
        fc.bias.zero_grad();
        TD gx = fc.backward(w);
        r.max_err = std::max(r.max_err, check_grad_tensor(x, gx, eval, rng));
        r.max_err = std::max(r.max_err, check_grad_tensor(fc.weight.value, fc.weight.grad, eval, rng));
        r.max_err = std::max(r.max_err, check_grad_tensor(fc.bias.value, fc.bias.grad, eval, rng));
    }
    r.pass = r.max_err < r.tol;
    return r;
}

CheckResult batchnorm_check(bool train_mode) {
    CheckResult r{std::string("batchnorm backward vs finite differences (") +
                      (train_mode ? "train" : "eval") + ")",
                  0, 1e-5, false};
    Rng rng(train_mode ? 104 : 105);
    for (int trial = 0; trial < 4; ++trial) {
        const bool spatial = trial % 2 == 0;
        BatchNorm<double> bn(3);
        fill_uniform(bn.gamma.value, rng, 0.5, 1.5);
        fill_uniform(bn.beta.value, rng, -0.5, 0.5);
        fill_uniform(bn.running_mean, rng, -0.3, 0.3);
        fill_uniform(bn.running_var, rng, 0.5, 1.5);
        bn.training = train_mode;
        TD x = spatial ? rand_like({4, 3, 4, 4}, rng) : rand_like({8, 3}, rng);
        TD w;
        // training mode recomputes batch statistics per evaluation but also
        // moves the running estimates; snapshot and restore them inside eval
        const TD rm0 = bn.running_mean, rv0 = bn.running_var;
        auto eval = [&] {
            bn.running_mean = rm0;
            bn.running_var = rv0;
            TD out = bn.forward(x);
            bn.clear_frames();
            return weighted(out, w);
        };
        bn.running_mean = rm0;
        bn.running_var = rv0;
        TD out0 = bn.forward(x);
        w = rand_like(out0.shape, rng);
        bn.clear_frames();
        bn.running_mean = rm0;
        bn.running_var = rv0;
        bn.forward(x);
        bn.gamma.zero_grad();
        bn.beta.zero_grad();
        TD gx = bn.backward(w);
        r.max_err = std::max(r.max_err, check_grad_tensor(x, gx, eval, rng));
        r.max_err = std::max(r.max_err, check_grad_tensor(bn.gamma.value, bn.gamma.grad, eval, rng));
        r.max_err = std::max(r.max_err, check_grad_tensor(bn.beta.value, bn.beta.grad, eval, rng));
    }
    r.pass = r.max_err < r.tol;
    return r;
}

CheckResult instancenorm_check() {
    CheckResult r{"instancenorm backward vs finite differences", 0, 1e-5, false};
    Rng rng(106);
    for (int trial = 0; trial < 4; ++trial) {
        InstanceNorm2d<double> in(2);
        TD x = rand_like({2, 2, 5, 5}, rng);
        TD w;
        auto eval = [&] {
            TD out = in.forward(x);
            in.clear_frames();
            return weighted(out, w);
        };
        TD out0 = in.forward(x);
        w = rand_like(out0.shape, rng);
        in.clear_frames();
        in.forward(x);
        TD gx = in.backward(w);
        r.max_err = std::max(r.max_err, check_grad_tensor(x, gx, eval, rng));
    }
    r.pass = r.max_err < r.tol;
    return r;
}

CheckResult activation_check() {
    CheckResult r{"relu/leaky-relu/dropout backward vs finite differences", 0, 1e-5, false};
    Rng rng(107);
    for (int trial = 0; trial < 6; ++trial) {
        TD x = rand_like({2, 3, 4, 4}, rng);
        for (std::size_t i = 0; i < x.size(); ++i)  // keep pre-activations off the kink
            if (std::abs(x[i]) < 0.05) x[i] = x[i] < 0 ? x[i] - 0.05 : x[i] + 0.05;
        TD w = rand_like(x.shape, rng);
        {
            ReLU<double> relu;
            auto eval = [&] {
                TD out = relu.forward(x);
                relu.clear_frames();
                return weighted(out, w);
            };
            relu.forward(x);
            TD gx = relu.backward(w);
            r.max_err = std::max(r.max_err, check_grad_tensor(x, gx, eval, rng));
        }
        {
            LeakyReLU<double> lrelu(0.2);
            auto eval = [&] {
                TD out = lrelu.forward(x);
                lrelu.clear_frames();
                return weighted(out, w);
            };
            lrelu.forward(x);
            TD gx = lrelu.backward(w);
            r.max_err = std::max(r.max_err, check_grad_tensor(x, gx, eval, rng));
        }
        {
            Dropout<double> drop(0.5, trial % 2 == 0, 7);
            drop.seed = 99;
            auto eval = [&] {
                drop.set_next_step(11);  // same mask for every evaluation
                TD out = drop.forward(x);
                drop.clear_frames();
                return weighted(out, w);
            };
            drop.set_next_step(11);
            drop.forward(x);
            TD gx = drop.backward(w);
            r.max_err = std::max(r.max_err, check_grad_tensor(x, gx, eval, rng));
        }
    }
    r.pass = r.max_err < r.tol;
    return r;
}

CheckResult softmax_ce_check() {
    CheckResult r{"softmax cross-entropy backward vs finite differences", 0, 1e-5, false};
    Rng rng(108);
    for (int trial = 0; trial < 5; ++trial) {
        TD logits = rand_like({4, 10}, rng, -3, 3);
        std::vector<int> labels;
        for (int n = 0; n < 4; ++n) labels.push_back(static_cast<int>(rng.below(10)));
        SoftmaxCrossEntropy<double> ce;
        auto eval = [&] { return ce.forward(logits, labels); };
        ce.forward(logits, labels);
        TD g = ce.backward(1.0);
        r.max_err = std::max(r.max_err, check_grad_tensor(logits, g, eval, rng, 16));
    }
    r.pass = r.max_err < r.tol;
    return r;
}

CheckResult affine_partials_check() {
    CheckResult r{"affine matrix partials vs finite differences", 0, 1e-8, false};
    Rng rng(109);
    for (int trial = 0; trial < 25; ++trial) {
        AffineParamsT<double> p;
        p.rot = rng.uniform(-0.5, 0.5);
        p.tx = rng.uniform(-0.3, 0.3);
        p.ty = rng.uniform(-0.3, 0.3);
        p.shear = rng.uniform(-0.3, 0.3);
        p.sx = rng.uniform(0.7, 1.3);
        p.sy = rng.uniform(0.7, 1.3);
        const auto partials = affine_matrix_partials(p);
        for (int k = 0; k < 6; ++k) {
            for (int entry = 0; entry < 6; ++entry) {
                auto eval = [&] {
                    const Mat23<double> m = affine_to_matrix(p);
                    return (&m.a)[entry];
                };
                const double fd = central_diff(&p[k], 1e-5, eval);
                const double an = (&partials[static_cast<std::size_t>(k)].a)[entry];
                r.max_err = std::max(r.max_err, rel_err(an, fd, 1e-4));
            }
        }
    }
    r.pass = r.max_err < r.tol;
    return r;
}

CheckResult bilinear_check() {
    CheckResult r{"bilinear sampler gradients vs finite differences", 0, 1e-2, false};
    Rng rng(110);
    for (int trial = 0; trial < 5; ++trial) {
        TD img = smooth_digit(rng);
        AffineParamsT<double> p;
        p.rot = rng.uniform(-0.3, 0.3);
        p.tx = rng.uniform(-0.15, 0.15);
        p.ty = rng.uniform(-0.15, 0.15);
        p.shear = rng.uniform(-0.15, 0.15);
        p.sx = rng.uniform(0.85, 1.15);
        p.sy = rng.uniform(0.85, 1.15);
        TD w = rand_like({kImageSize, kImageSize}, rng);
        {
            const auto gr0 = make_grid(affine_to_matrix(p), kImageSize, kImageSize);
            zero_near_knot_weights(gr0.grid, w, 6e-3, false);
        }
        auto eval = [&] {
            const auto gr = make_grid(affine_to_matrix(p), kImageSize, kImageSize);
            return weighted(bilinear_sample(img, gr.grid), w);
        };
        const auto gr = make_grid(affine_to_matrix(p), kImageSize, kImageSize);
        TD ggrid;
        bilinear_sample_backward<double>(img, gr.grid, w, nullptr, &ggrid);
        const Mat23<double> dm = make_grid_backward(gr, ggrid);
        const auto partials = affine_matrix_partials(p);
        for (int k = 0; k < 6; ++k) {
            const double an = dm.a * partials[static_cast<std::size_t>(k)].a +
                              dm.b * partials[static_cast<std::size_t>(k)].b +
                              dm.c * partials[static_cast<std::size_t>(k)].c +
                              dm.d * partials[static_cast<std::size_t>(k)].d +
                              dm.tx * partials[static_cast<std::size_t>(k)].tx +
                              dm.ty * partials[static_cast<std::size_t>(k)].ty;
            const double fd = central_diff(&p[k], 1e-4, eval);
            r.max_err = std::max(r.max_err, rel_err(an, fd, 1e-3));
        }
        // image gradient is exactly linear in the pixels
        TD gimg;
        bilinear_sample_backward<double>(img, gr.grid, w, &gimg, nullptr);
        auto eval_img = [&] { return weighted(bilinear_sample(img, gr.grid), w); };
        r.max_err = std::max(r.max_err, check_grad_tensor(img, gimg, eval_img, rng, 10));
    }
    r.pass = r.max_err < r.tol;
    return r;
}

// digit-like mask with saturated cores for the full compositing chain
TD saturated_digit(Rng& rng) {
    TD img({kImageSize, kImageSize});
    const int strokes = 3;
    std::vector<std::array<double, 4>> segs;
    for (int s = 0; s < strokes; ++s)
        segs.push_back({rng.uniform(12, 28), rng.uniform(12, 28), rng.uniform(12, 28),
                        rng.uniform(12, 28)});
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x) {
            double best = 1e9;
            for (const auto& s : segs) {
                const double vx = s[3] - s[1], vy = s[2] - s[0];
                const double len2 = vx * vx + vy * vy;
                double t = len2 > 0 ? ((x - s[1]) * vx + (y - s[0]) * vy) / len2 : 0;
                t = std::clamp(t, 0.0, 1.0);
                const double dx = x - (s[1] + t * vx), dy = y - (s[0] + t * vy);
                best = std::min(best, std::sqrt(dx * dx + dy * dy));
            }
            img.at2(y, x) = std::clamp((2.0 - best) / 1.2 + 0.5, 0.0, 1.0);
        }
    return img;
}

CheckResult composite_chain_check() {
    CheckResult r{"composite chain d(out)/d(params) vs finite differences", 0, 1e-2, false};
    Rng rng(111);
    for (int trial = 0; trial < 25; ++trial) {
        TD digit = saturated_digit(rng);
        TD bg({kImageSize, kImageSize});
        for (std::size_t i = 0; i < bg.size(); ++i) bg[i] = rng.uniform(0.0, 0.3);
        AffineParamsT<double> p;
        p.rot = rng.uniform(-0.3, 0.3);
        p.tx = rng.uniform(-0.15, 0.15);
        p.ty = rng.uniform(-0.15, 0.15);
        p.shear = rng.uniform(-0.15, 0.15);
        p.sx = rng.uniform(0.85, 1.15);
        p.sy = rng.uniform(0.85, 1.15);
        TD w = rand_like({kImageSize, kImageSize}, rng);
        {
            const auto gr0 = make_grid(affine_to_matrix(p), kImageSize, kImageSize);
            zero_near_knot_weights(gr0.grid, w, 6e-3, true);
        }
        auto eval = [&] {
            CompositeOp<double> op;
            return weighted(op.forward(digit, bg, p), w);
        };
        CompositeOp<double> op;
        op.forward(digit, bg, p);
        const auto dp = op.backward(w);
        for (int k = 0; k < 6; ++k) {
            const double fd = central_diff(&p[k], 1e-4, eval);
            r.max_err = std::max(r.max_err, rel_err(dp[static_cast<std::size_t>(k)], fd, 1e-2));
        }
    }
    r.pass = r.max_err < r.tol;
    return r;
}

CheckResult synth_param_chain_check() {
    CheckResult r{"synthesizer d(params)/d(weights) vs finite differences", 0, 1e-4, false};
    Rng rng(112);
    SynthesizerNet<double> synth;
    synth.init(rng, 0.4);
    // batch-statistics path as trained, dropout pinned off for determinism
    synth.set_train(true);
    synth.set_dropout_active(false);
    TD mask({2, 1, kImageSize, kImageSize});
    TD bg({2, 1, kImageSize, kImageSize});
    fill_uniform(mask, rng, 0.0, 1.0);
    fill_uniform(bg, rng, 0.0, 0.2);
    TD w = rand_like({2, 6}, rng);
    auto eval = [&] {
        TD params = synth.forward(mask, bg);
        synth.clear_frames();
        return weighted(params, w);
    };
    synth.forward(mask, bg);
    for (Param<double>* p : synth.params()) p->zero_grad();
    synth.backward(w);
    // probe a few weights in every block of the network
    struct Probe {
        Param<double>* p;
        std::size_t idx;
    };
    std::vector<Probe> probes = {
        {&synth.backbone.conv.weight, 3},   {&synth.backbone.bn.gamma, 1},
        {&synth.fg_branch.conv1.weight, 7}, {&synth.bg_branch.conv2.weight, 11},
        {&synth.head_conv1.weight, 5},      {&synth.fc1.weight, 1234},
        {&synth.fc3.weight, 17},            {&synth.fc3.bias, 2},
    };
    for (const Probe& probe : probes) {
        const double an = probe.p->grad[probe.idx];
        const double fd = central_diff(&probe.p->value[probe.idx], 1e-5, eval);
        r.max_err = std::max(r.max_err, rel_err(an, fd, 1e-5));
    }
    r.pass = r.max_err < r.tol;
    return r;
}

CheckResult full_chain_check() {
    CheckResult r{"synthesizer->compositor->target loss vs finite differences", 0, 1e-2, false};
    Rng rng(113);
    SynthesizerNet<double> synth;
    synth.init(rng, 0.4);
    synth.set_train(true);
    synth.set_dropout_active(false);
    TargetNet<double> target;
    target.init(rng, 1.0);
    target.set_train(false);

    const int N = 2;
    std::vector<TD> digits;
    for (int n = 0; n < N; ++n) digits.push_back(saturated_digit(rng));
    TD mask({N, 1, kImageSize, kImageSize});
    for (int n = 0; n < N; ++n)
        std::copy(digits[static_cast<std::size_t>(n)].ptr(),
                  digits[static_cast<std::size_t>(n)].ptr() + 1600, mask.ptr() + n * 1600);
    TD bg({N, 1, kImageSize, kImageSize});
    std::vector<int> labels = {3, 7};

    auto forward_loss = [&](bool keep) {
        TD params = synth.forward(mask, bg);
        std::vector<CompositeOp<double>> ops(static_cast<std::size_t>(N));
        TD comps({N, 1, kImageSize, kImageSize});
        for (int n = 0; n < N; ++n) {
            AffineParamsT<double> p;
            for (int k = 0; k < 6; ++k) p[k] = params.at2(n, k);
            TD digit({kImageSize, kImageSize});
            std::copy(mask.ptr() + n * 1600, mask.ptr() + (n + 1) * 1600, digit.ptr());
            TD bgi({kImageSize, kImageSize});
            TD c = ops[static_cast<std::size_t>(n)].forward(digit, bgi, p);
            std::copy(c.ptr(), c.ptr() + 1600, comps.ptr() + n * 1600);
        }
        SoftmaxCrossEntropy<double> ce;
        const double loss = ce.forward(target.forward(comps), labels);
        if (!keep) {
            synth.clear_frames();
            target.clear_frames();
            return loss;
        }
        // backward: maximize-CE objective has upstream -1; here we check the
        // raw CE so upstream is +1
        TD gcomp = target.backward(ce.backward(1.0));
        TD gparams({N, 6});
        for (int n = 0; n < N; ++n) {
            TD slice({kImageSize, kImageSize});
            std::copy(gcomp.ptr() + n * 1600, gcomp.ptr() + (n + 1) * 1600, slice.ptr());
            const auto dp = ops[static_cast<std::size_t>(n)].backward(slice);
            for (int k = 0; k < 6; ++k) gparams.at2(n, k) = dp[static_cast<std::size_t>(k)];
        }
        synth.backward(gparams);
        return loss;
    };

    for (Param<double>* p : synth.params()) p->zero_grad();
    forward_loss(true);

    struct Probe {
        Param<double>* p;
        std::size_t idx;
    };
    const std::vector<Probe> probes = {
        {&synth.backbone.conv.weight, 42}, {&synth.fg_branch.conv1.weight, 100},
        {&synth.head_conv2.weight, 9},     {&synth.fc2.weight, 333},
        {&synth.fc3.bias, 4},
    };
    for (const Probe& probe : probes) {
        const double an = probe.p->grad[probe.idx];
        const double fd =
            central_diff(&probe.p->value[probe.idx], 1e-5, [&] { return forward_loss(false); });
        r.max_err = std::max(r.max_err, rel_err(an, fd, 1e-4));
    }
    r.pass = r.max_err < r.tol;
    return r;
}

}  // namespace

std::vector<CheckResult> run_gradient_suite() {
    std::vector<CheckResult> results;
    results.push_back(conv_check());
    results.push_back(pool_check());
    results.push_back(linear_check());
    results.push_back(batchnorm_check(true));
    results.push_back(batchnorm_check(false));
    results.push_back(instancenorm_check());
    results.push_back(activation_check());
    results.push_back(softmax_ce_check());
    results.push_back(affine_partials_check());
    results.push_back(bilinear_check());
    results.push_back(composite_chain_check());
    results.push_back(synth_param_chain_check());
    results.push_back(full_chain_check());
    return results;
}

}  // namespace terse
