#include "terse/loop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "terse/checkpoint.hpp"
#include "terse/compositor.hpp"
#include "terse/loss.hpp"
#include "terse/parallel.hpp"
#include "terse/rng.hpp"

namespace terse {

namespace {

// rng stream ids; per-cycle streams derive from (master, cycle, purpose) so a
// cycle's randomness never depends on earlier cycles
enum Purpose : std::uint64_t {
    kSynthInit = 1,
    kSynthDropoutSeed,
    kTargetDropoutSeed,
    kDiscInit,
    kSynthShuffle,
    kBgPick,
    kTargetShuffle,
    kRealPick,
    kInject,
    kRandomAug,
    kHardReport,
};

const TensorF& black_background() {
    static const TensorF bg({kImageSize, kImageSize});
    return bg;
}

std::vector<int> labels_of(const DatasetSplit& split, const std::vector<std::uint32_t>& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = split.labels[idx[i]];
    return out;
}

// composite a batch through the full differentiable pipeline; ops are kept
// when a backward pass will follow
TensorF composite_batch(const std::vector<const TensorF*>& digits,
                        const std::vector<const TensorF*>& bgs, const TensorF& params,
                        std::vector<CompositeOp<float>>* ops) {
    const int N = static_cast<int>(digits.size());
    TensorF out({N, 1, kImageSize, kImageSize});
    std::vector<CompositeOp<float>> local;
    std::vector<CompositeOp<float>>& o = ops ? *ops : local;
    o.assign(static_cast<std::size_t>(N), {});
    parallel_for_each(static_cast<std::size_t>(N), [&](std::size_t n) {
        AffineParamsT<float> p;
        for (int k = 0; k < 6; ++k) p[k] = params.at2(static_cast<int>(n), k);
        TensorF comp = o[n].forward(*digits[n], *bgs[n], p);
        std::copy(comp.ptr(), comp.ptr() + comp.size(),
                  out.ptr() + n * static_cast<std::size_t>(kImageSize) * kImageSize);
    });
    return out;
}

TensorF params_backward_batch(std::vector<CompositeOp<float>>& ops, const TensorF& gcomposite) {
    const int N = static_cast<int>(ops.size());
    TensorF gparams({N, 6});
    parallel_for_each(static_cast<std::size_t>(N), [&](std::size_t n) {
        TensorF slice({kImageSize, kImageSize});
        const float* src = gcomposite.ptr() + n * static_cast<std::size_t>(kImageSize) * kImageSize;
        std::copy(src, src + slice.size(), slice.ptr());
        const auto dp = ops[n].backward(slice);
        for (int k = 0; k < 6; ++k) gparams.at2(static_cast<int>(n), k) = dp[static_cast<std::size_t>(k)];
    });
    return gparams;
}

struct BatchPick {
    std::vector<const TensorF*> digits;
    std::vector<const TensorF*> bgs;
    std::vector<int> labels;
};

BatchPick pick_pairs(const DatasetSplit& pool, const std::vector<std::uint32_t>& idx,
                     const std::vector<TensorF>* backgrounds, Rng* bg_rng) {
    BatchPick b;
    b.digits.reserve(idx.size());
    b.bgs.reserve(idx.size());
    for (std::uint32_t i : idx) {
        b.digits.push_back(&pool.images[i]);
        if (backgrounds && !backgrounds->empty() && bg_rng)
            b.bgs.push_back(&(*backgrounds)[bg_rng->below(backgrounds->size())]);
        else
            b.bgs.push_back(&black_background());
    }
    b.labels = labels_of(pool, idx);
    return b;
}

void inject_into_real(TensorF& image, const DatasetSplit& pool,
                      const std::vector<TensorF>* backgrounds, Rng& rng) {
    if (!backgrounds || backgrounds->empty()) return;
    const TensorF& mask = pool.images[rng.below(pool.size())];
    const TensorF& donor = (*backgrounds)[rng.below(backgrounds->size())];
    const MaskSupport s = mask_support(mask);
    if (s.empty()) return;
    const int oy_lo = 1 - s.y0, oy_hi = (kImageSize - 2) - s.y1;
    const int ox_lo = 1 - s.x0, ox_hi = (kImageSize - 2) - s.x1;
    if (oy_hi < oy_lo || ox_hi < ox_lo) return;
    const int oy = oy_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(oy_hi - oy_lo + 1)));
    const int ox = ox_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(ox_hi - ox_lo + 1)));
    image = inject_blending_artifact(image, donor, mask, oy, ox);
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::string metrics_csv_header() {
    return "cycle,phase_epochs,samples_added,total_synthetic,acc_mnist,acc_affine,mean_hardness,"
           "target_loss,synth_loss,disc_loss,saturation_events";
}

std::string metrics_csv_row(const CycleMetrics& m) {
    std::string row = std::to_string(m.cycle) + "," + fmt(m.phase_epochs) + "," +
                      std::to_string(m.samples_added) + "," + std::to_string(m.total_synthetic) +
                      "," + fmt(m.acc_mnist) + "," + fmt(m.acc_affine) + "," +
                      fmt(m.mean_hardness) + "," + fmt(m.target_loss) + "," + fmt(m.synth_loss) +
                      "," + fmt(m.disc_loss) + "," + std::to_string(m.saturation_events);
    return row;
}

TensorF make_image_batch(const std::vector<const TensorF*>& images) {
    const int N = static_cast<int>(images.size());
    const int H = images.empty() ? kImageSize : images[0]->dim(0);
    const int W = images.empty() ? kImageSize : images[0]->dim(1);
    TensorF out({N, 1, H, W});
    for (int n = 0; n < N; ++n)
        std::copy(images[static_cast<std::size_t>(n)]->ptr(),
                  images[static_cast<std::size_t>(n)]->ptr() + static_cast<std::size_t>(H) * W,
                  out.ptr() + static_cast<std::size_t>(n) * H * W);
    return out;
}

double eval_accuracy(TargetNet<float>& target, const DatasetSplit& split, int subset, int batch) {
    const bool was_training = target.is_training();
    target.set_train(false);
    std::vector<std::uint32_t> idx;
    const std::size_t n = split.size();
    if (subset > 0 && static_cast<std::size_t>(subset) < n) {
        idx.reserve(static_cast<std::size_t>(subset));
        for (int i = 0; i < subset; ++i)
            idx.push_back(static_cast<std::uint32_t>(static_cast<std::size_t>(i) * n / subset));
    } else {
        idx.resize(n);
        std::iota(idx.begin(), idx.end(), 0u);
    }
    std::size_t correct = 0;
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch)) {
        const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(batch));
        std::vector<const TensorF*> imgs;
        imgs.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) imgs.push_back(&split.images[idx[i]]);
        const TensorF logits = target.forward(make_image_batch(imgs));
        target.clear_frames();
        const int C = logits.dim(1);
        for (std::size_t i = start; i < end; ++i) {
            const float* row = logits.ptr() + (i - start) * static_cast<std::size_t>(C);
            int arg = 0;
            for (int c = 1; c < C; ++c)
                if (row[c] > row[arg]) arg = c;
            if (arg == split.labels[idx[i]]) ++correct;
        }
    }
    target.set_train(was_training);
    return idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(idx.size());
}

// ---------------------------------------------------------------------------
// synth_phase
// ---------------------------------------------------------------------------
SynthPhaseResult synth_phase(SynthesizerNet<float>& synth, Adam<float>& synth_opt,
                             TargetNet<float>& target, DiscriminatorNet<float>* disc,
                             const DatasetSplit& pool, HardExampleCache& cache,
                             const LoopConfig& cfg, int cycle) {
    if (pool.size() == 0) throw std::invalid_argument("synth_phase: empty pairing pool");
    target.set_train(false);
    synth.set_train(true);

    std::array<std::size_t, 10> class_target{};
    std::size_t total_target = 0;
    if (cfg.increment_total > 0) {
        total_target = cache.total() + static_cast<std::size_t>(cfg.increment_total);
    } else {
        for (int c = 0; c < 10; ++c)
            class_target[static_cast<std::size_t>(c)] =
                cache.count(c) + static_cast<std::size_t>(cfg.per_class_capacity);
    }
    auto filled = [&] {
        if (cfg.increment_total > 0) return cache.total() >= total_target;
        for (int c = 0; c < 10; ++c)
            if (cache.count(c) < class_target[static_cast<std::size_t>(c)]) return false;
        return true;
    };
    auto class_wants = [&](int c) {
        if (cfg.increment_total > 0) return cache.total() < total_target;
        return cache.count(c) < class_target[static_cast<std::size_t>(c)];
    };

    const int batch = std::max(1, cfg.synth_batch);
    const long bpe = (static_cast<long>(pool.size()) + batch - 1) / batch;
    const long cap_batches = std::max<long>(1, std::lround(cfg.synth_epoch_cap * static_cast<double>(bpe)));

    Rng bg_rng(derive_seed(cfg.master_seed, kBgPick, static_cast<std::uint64_t>(cycle)));
    auto synth_params = synth.params();

    SynthPhaseResult res;
    double sloss_sum = 0, dterm_sum = 0, hard_sum = 0;
    long batches = 0;
    std::vector<std::uint32_t> order;
    std::size_t cursor = 0;
    int epoch = -1;

    while (!filled() && batches < cap_batches) {
        if (cursor >= order.size()) {
            ++epoch;
            order.resize(pool.size());
            std::iota(order.begin(), order.end(), 0u);
            Rng shuffle_rng(derive_seed(cfg.master_seed, kSynthShuffle,
                                        (static_cast<std::uint64_t>(cycle) << 20) +
                                            static_cast<std::uint64_t>(epoch)));
            shuffle_rng.shuffle(order.begin(), order.end());
            cursor = 0;
        }
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(batch),
                                                       order.size() - cursor);
        std::vector<std::uint32_t> idx(order.begin() + static_cast<long>(cursor),
                                       order.begin() + static_cast<long>(cursor + take));
        cursor += take;

        BatchPick pick = pick_pairs(pool, idx, cfg.backgrounds, &bg_rng);
        const TensorF mask_batch = make_image_batch(pick.digits);
        const TensorF bg_batch = make_image_batch(pick.bgs);

        // ---- synthesizer training step against the frozen target ----
        const TensorF params = synth.forward(mask_batch, bg_batch);
        std::vector<CompositeOp<float>> ops;
        const TensorF composites = composite_batch(pick.digits, pick.bgs, params, &ops);

        SoftmaxCrossEntropy<float> ce;
        const double ce_loss = ce.forward(target.forward(composites), pick.labels);
        // maximize the target loss: upstream factor -1
        TensorF gcomposite = target.backward(ce.backward(-1.0));
        double synth_loss = -ce_loss;

        if (disc && cfg.lambda_d != 0.0) {
            const TensorF dlogits = disc->forward(composites);
            BinaryLogTerms terms = binary_log_loss(dlogits, !cfg.saturating_gen_loss);
            double sign = 1.0;
            double term_loss = terms.loss;
            if (cfg.saturating_gen_loss) {
                // minimize +mean log(1 - D(f)) = -binary_log_loss(fake side)
                sign = -1.0;
                term_loss = -terms.loss;
            }
            synth_loss += cfg.lambda_d * term_loss;
            dterm_sum += term_loss;
            res.saturation_events += terms.saturation_events;
            TensorF gdl({dlogits.dim(0), 1});
            for (int n = 0; n < dlogits.dim(0); ++n)
                gdl.at2(n, 0) = static_cast<float>(cfg.lambda_d * sign *
                                                   terms.dlogit[static_cast<std::size_t>(n)]);
            const TensorF gcomp_d = disc->backward(gdl);
            for (std::size_t i = 0; i < gcomposite.size(); ++i) gcomposite[i] += gcomp_d[i];
            disc->zero_grads();  // frozen in this phase
        }

        const TensorF gparams = params_backward_batch(ops, gcomposite);
        synth.backward(gparams);
        synth_opt.step(synth_params);
        target.zero_grads();  // frozen in this phase
        sloss_sum += synth_loss;
        ++batches;

        // ---- mining: screen on the training composites, re-render candidates
        // in eval mode, re-test the predicate, insert in sample order ----
        std::vector<std::size_t> candidates;
        const int C = target.n_classes();
        for (std::size_t n = 0; n < take; ++n) {
            const float* prow = ce.probs.ptr() + n * static_cast<std::size_t>(C);
            if (is_hard_example(prow, C, pick.labels[n]) && class_wants(pick.labels[n]))
                candidates.push_back(n);
        }
        if (!candidates.empty()) {
            synth.set_train(false);
            std::vector<const TensorF*> cd, cb;
            std::vector<int> cl;
            for (std::size_t n : candidates) {
                cd.push_back(pick.digits[n]);
                cb.push_back(pick.bgs[n]);
                cl.push_back(pick.labels[n]);
            }
            const TensorF eparams = synth.forward(make_image_batch(cd), make_image_batch(cb));
            synth.clear_frames();
            const TensorF ecomp = composite_batch(cd, cb, eparams, nullptr);
            const TensorF eprobs = softmax_rows(target.forward(ecomp));
            target.clear_frames();
            for (std::size_t i = 0; i < candidates.size(); ++i) {
                const float* prow = eprobs.ptr() + i * static_cast<std::size_t>(C);
                const int label = cl[i];
                if (!class_wants(label)) continue;
                if (!is_hard_example(prow, C, label)) continue;
                CompositeSample s;
                s.image = TensorF({kImageSize, kImageSize});
                const float* src = ecomp.ptr() + i * static_cast<std::size_t>(kImageSize) * kImageSize;
                std::copy(src, src + s.image.size(), s.image.ptr());
                s.label = label;
                s.provenance = Provenance::Synthesized;
                s.hardness = hardness(prow, C, label);
                s.cycle = cycle;
                hard_sum += s.hardness;
                ++res.added;
                cache.insert(std::move(s));
            }
            synth.set_train(true);
        }
    }

    res.epochs_used = static_cast<double>(batches) / static_cast<double>(bpe);
    res.filled = filled();
    res.avg_synth_loss = batches ? sloss_sum / static_cast<double>(batches) : 0.0;
    res.avg_disc_term = batches ? dterm_sum / static_cast<double>(batches) : 0.0;
    res.mean_hardness = res.added ? hard_sum / res.added : 0.0;
    return res;
}

// ---------------------------------------------------------------------------
// target_phase
// ---------------------------------------------------------------------------
TargetPhaseResult target_phase(TargetNet<float>& target, Sgd<float>& target_opt,
                               DiscriminatorNet<float>* disc, Adam<float>* disc_opt,
                               const DatasetSplit& real, const HardExampleCache& cache,
                               const LoopConfig& cfg, int cycle) {
    if (real.size() == 0) throw std::invalid_argument("target_phase: empty real pool");
    target.set_train(true);
    auto target_params = target.params();
    std::vector<Param<float>*> disc_params;
    if (disc) disc_params = disc->params();

    Rng real_rng(derive_seed(cfg.master_seed, kRealPick, static_cast<std::uint64_t>(cycle)));
    Rng inj_rng(derive_seed(cfg.master_seed, kInject, static_cast<std::uint64_t>(cycle)));

    TargetPhaseResult res;
    double tloss_sum = 0, dloss_sum = 0;
    long tsteps = 0, dsteps = 0;

    auto train_batch = [&](const std::vector<TensorF>& real_imgs, const std::vector<int>& real_labs,
                           const std::vector<const TensorF*>& syn_imgs,
                           const std::vector<int>& syn_labs) {
        std::vector<const TensorF*> all;
        std::vector<int> labels;
        all.reserve(real_imgs.size() + syn_imgs.size());
        for (const TensorF& im : real_imgs) all.push_back(&im);
        for (const TensorF* im : syn_imgs) all.push_back(im);
        labels = real_labs;
        labels.insert(labels.end(), syn_labs.begin(), syn_labs.end());

        if (disc && disc_opt && !real_imgs.empty() && !syn_imgs.empty()) {
            std::vector<const TensorF*> rp;
            for (const TensorF& im : real_imgs) rp.push_back(&im);
            const TensorF rlog = disc->forward(make_image_batch(rp));
            const TensorF flog = disc->forward(make_image_batch(syn_imgs));
            BinaryLogTerms rterms = binary_log_loss(rlog, true);
            BinaryLogTerms fterms = binary_log_loss(flog, false);
            TensorF grl({rlog.dim(0), 1}), gfl({flog.dim(0), 1});
            for (int n = 0; n < rlog.dim(0); ++n)
                grl.at2(n, 0) = static_cast<float>(rterms.dlogit[static_cast<std::size_t>(n)]);
            for (int n = 0; n < flog.dim(0); ++n)
                gfl.at2(n, 0) = static_cast<float>(fterms.dlogit[static_cast<std::size_t>(n)]);
            disc->backward(gfl);  // frames are LIFO: fake first
            disc->backward(grl);
            disc_opt->step(disc_params);
            dloss_sum += rterms.loss + fterms.loss;
            res.saturation_events += rterms.saturation_events + fterms.saturation_events;
            ++dsteps;
        }

        SoftmaxCrossEntropy<float> ce;
        tloss_sum += ce.forward(target.forward(make_image_batch(all)), labels);
        target.backward(ce.backward(1.0));
        target_opt.step(target_params);
        ++tsteps;
    };

    const int batch = std::max(2, cfg.target_batch);
    if (cache.total() == 0) {
        // pure real fine-tuning: epochs over the real pool
        for (int epoch = 0; epoch < cfg.target_epochs; ++epoch) {
            std::vector<std::uint32_t> order(real.size());
            std::iota(order.begin(), order.end(), 0u);
            Rng srng(derive_seed(cfg.master_seed, kTargetShuffle,
                                 (static_cast<std::uint64_t>(cycle) << 20) +
                                     static_cast<std::uint64_t>(epoch)));
            srng.shuffle(order.begin(), order.end());
            for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(batch)) {
                const std::size_t e = std::min(order.size(), s + static_cast<std::size_t>(batch));
                std::vector<TensorF> imgs;
                std::vector<int> labs;
                for (std::size_t i = s; i < e; ++i) {
                    imgs.push_back(real.images[order[i]]);
                    labs.push_back(real.labels[order[i]]);
                    if (cfg.inject_artifacts)
                        inject_into_real(imgs.back(), real, cfg.backgrounds, inj_rng);
                }
                train_batch(imgs, labs, {}, {});
            }
        }
    } else {
        // epochs over the synthetic cache with the configured real:synthetic mix
        const double r = std::max(0.0, cfg.real_synth_ratio);
        int real_count = static_cast<int>(std::lround(batch * r / (1.0 + r)));
        real_count = std::clamp(real_count, 0, batch - 1);
        const int syn_count = batch - real_count;
        for (int epoch = 0; epoch < cfg.target_epochs; ++epoch) {
            std::vector<std::uint32_t> order(cache.total());
            std::iota(order.begin(), order.end(), 0u);
            Rng srng(derive_seed(cfg.master_seed, kTargetShuffle,
                                 (static_cast<std::uint64_t>(cycle) << 20) +
                                     static_cast<std::uint64_t>(epoch)));
            srng.shuffle(order.begin(), order.end());
            for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(syn_count)) {
                const std::size_t e = std::min(order.size(), s + static_cast<std::size_t>(syn_count));
                std::vector<const TensorF*> syn_imgs;
                std::vector<int> syn_labs;
                for (std::size_t i = s; i < e; ++i) {
                    const CompositeSample& cs = cache.at(order[i]);
                    syn_imgs.push_back(&cs.image);
                    syn_labs.push_back(cs.label);
                }
                std::vector<TensorF> real_imgs;
                std::vector<int> real_labs;
                for (int k = 0; k < real_count; ++k) {
                    const std::size_t ri = real_rng.below(real.size());
                    real_imgs.push_back(real.images[ri]);
                    real_labs.push_back(real.labels[ri]);
                    if (cfg.inject_artifacts)
                        inject_into_real(real_imgs.back(), real, cfg.backgrounds, inj_rng);
                }
                train_batch(real_imgs, real_labs, syn_imgs, syn_labs);
            }
        }
    }

    res.avg_target_loss = tsteps ? tloss_sum / static_cast<double>(tsteps) : 0.0;
    res.avg_disc_loss = dsteps ? dloss_sum / static_cast<double>(dsteps) : 0.0;
    return res;
}

// ---------------------------------------------------------------------------
// cycle drivers
// ---------------------------------------------------------------------------
namespace {

struct MetricsWriter {
    std::ofstream os;
    explicit MetricsWriter(const std::string& out_dir) {
        if (out_dir.empty()) return;
        std::filesystem::create_directories(out_dir);
        os.open(out_dir + "/metrics.csv", std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write metrics.csv under " + out_dir);
        os << metrics_csv_header() << "\n";
        os.flush();
    }
    void append(const CycleMetrics& m) {
        if (!os.is_open()) return;
        os << metrics_csv_row(m) << "\n";
        os.flush();
    }
};

CycleMetrics baseline_row(TargetNet<float>& target, const LoopData& data, const LoopConfig& cfg) {
    CycleMetrics m;
    m.cycle = 0;
    m.acc_mnist = eval_accuracy(target, *data.test_clean, cfg.eval_subset);
    m.acc_affine = eval_accuracy(target, *data.test_affine, cfg.eval_subset);
    return m;
}

void dump_cycle_samples(const HardExampleCache& cache, std::size_t from, int count, int cycle,
                        const std::string& out_dir) {
    if (out_dir.empty() || count <= 0) return;
    std::vector<ExportSample> dump;
    for (std::size_t i = from; i < cache.total() && dump.size() < static_cast<std::size_t>(count); ++i) {
        const CompositeSample& cs = cache.at(i);
        dump.push_back({cs.image, cycle, static_cast<int>(i - from), cs.label, cs.hardness});
    }
    export_samples(dump, out_dir + "/samples/cycle_" + std::to_string(cycle), ImageFormat::Pgm);
}

void check_data(const LoopData& data) {
    if (!data.train || !data.test_clean || !data.test_affine)
        throw std::invalid_argument("cycle driver: train/test_clean/test_affine must all be set");
}

}  // namespace

std::vector<CycleMetrics> run_cycles(TargetNet<float>& target, const LoopData& data,
                                     const LoopConfig& cfg, SynthesizerNet<float>* synth_out) {
    check_data(data);
    cfg.ranges.validate();

    SynthesizerNet<float> synth(cfg.ranges);
    {
        Rng init_rng(derive_seed(cfg.master_seed, kSynthInit));
        synth.init(init_rng, cfg.xavier_gain);
        synth.set_dropout_seed(derive_seed(cfg.master_seed, kSynthDropoutSeed));
    }
    target.set_dropout_seed(derive_seed(cfg.master_seed, kTargetDropoutSeed));

    std::optional<DiscriminatorNet<float>> disc;
    std::optional<Adam<float>> disc_opt;
    if (cfg.use_discriminator) {
        disc.emplace();
        Rng drng(derive_seed(cfg.master_seed, kDiscInit));
        disc->init(drng);
        disc_opt.emplace(cfg.disc_lr, cfg.disc_wd);
    }

    Adam<float> synth_opt(cfg.synth_lr, cfg.synth_wd);
    Sgd<float> target_opt(cfg.target_lr, cfg.target_momentum, cfg.target_wd);

    HardExampleCache cache;
    MetricsWriter writer(cfg.out_dir);
    std::vector<CycleMetrics> rows;
    rows.push_back(baseline_row(target, data, cfg));
    writer.append(rows.back());

    for (int cycle = 1; cycle <= cfg.cycles; ++cycle) {
        try {
            const std::size_t before = cache.total();
            const SynthPhaseResult sp =
                synth_phase(synth, synth_opt, target, disc ? &*disc : nullptr, *data.train, cache,
                            cfg, cycle);
            dump_cycle_samples(cache, before, cfg.dump_per_cycle, cycle, cfg.out_dir);
            const TargetPhaseResult tp =
                target_phase(target, target_opt, disc ? &*disc : nullptr,
                             disc_opt ? &*disc_opt : nullptr, *data.train, cache, cfg, cycle);

            CycleMetrics m;
            m.cycle = cycle;
            m.phase_epochs = sp.epochs_used;
            m.samples_added = sp.added;
            m.total_synthetic = static_cast<long>(cache.total());
            m.acc_mnist = eval_accuracy(target, *data.test_clean, cfg.eval_subset);
            m.acc_affine = eval_accuracy(target, *data.test_affine, cfg.eval_subset);
            m.mean_hardness = sp.mean_hardness;
            m.target_loss = tp.avg_target_loss;
            m.synth_loss = sp.avg_synth_loss;
            m.disc_loss = tp.avg_disc_loss;
            m.saturation_events = sp.saturation_events + tp.saturation_events;
            m.partial_fill = !sp.filled;
            rows.push_back(m);
            writer.append(m);

            if (!cfg.out_dir.empty()) {
                save_checkpoint(cfg.out_dir + "/target_cycle_" + std::to_string(cycle) + ".ckpt",
                                NetKind::Target, target.named_tensors());
                save_checkpoint(cfg.out_dir + "/synth_cycle_" + std::to_string(cycle) + ".ckpt",
                                NetKind::Synthesizer, synth.named_tensors());
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("cycle " + std::to_string(cycle) + ": " + e.what());
        }
    }
    if (synth_out) *synth_out = synth;
    return rows;
}

std::vector<CycleMetrics> random_augment_baseline(TargetNet<float>& target, const LoopData& data,
                                                  const LoopConfig& cfg) {
    check_data(data);
    cfg.ranges.validate();
    target.set_dropout_seed(derive_seed(cfg.master_seed, kTargetDropoutSeed));

    Sgd<float> target_opt(cfg.target_lr, cfg.target_momentum, cfg.target_wd);
    HardExampleCache cache;
    MetricsWriter writer(cfg.out_dir);
    std::vector<CycleMetrics> rows;
    rows.push_back(baseline_row(target, data, cfg));
    writer.append(rows.back());

    const DatasetSplit& pool = *data.train;
    std::array<std::vector<std::uint32_t>, 10> by_class;
    for (std::size_t i = 0; i < pool.size(); ++i)
        by_class[static_cast<std::size_t>(pool.labels[i])].push_back(static_cast<std::uint32_t>(i));

    for (int cycle = 1; cycle <= cfg.cycles; ++cycle) {
        try {
            const std::size_t before = cache.total();
            Rng rng(derive_seed(cfg.master_seed, kRandomAug, static_cast<std::uint64_t>(cycle)));
            std::vector<std::uint32_t> picks;
            if (cfg.increment_total > 0) {
                for (int k = 0; k < cfg.increment_total; ++k)
                    picks.push_back(static_cast<std::uint32_t>(rng.below(pool.size())));
            } else {
                for (int c = 0; c < 10; ++c) {
                    const auto& cls = by_class[static_cast<std::size_t>(c)];
                    if (cls.empty())
                        throw std::invalid_argument("random baseline: pool has no class " +
                                                    std::to_string(c));
                    for (int k = 0; k < cfg.per_class_capacity; ++k)
                        picks.push_back(cls[rng.below(cls.size())]);
                }
            }
            BatchPick pick = pick_pairs(pool, picks, cfg.backgrounds, &rng);
            TensorF params({static_cast<int>(picks.size()), 6});
            for (std::size_t n = 0; n < picks.size(); ++n) {
                const auto p = draw_affine_params<float>(cfg.ranges, rng);
                for (int k = 0; k < 6; ++k) params.at2(static_cast<int>(n), k) = p[k];
            }
            const TensorF comps = composite_batch(pick.digits, pick.bgs, params, nullptr);

            // hardness under the pre-phase target, batched
            target.set_train(false);
            double hard_sum = 0;
            const int C = target.n_classes();
            const std::size_t plane = static_cast<std::size_t>(kImageSize) * kImageSize;
            for (std::size_t s = 0; s < picks.size(); s += 256) {
                const std::size_t e = std::min(picks.size(), s + 256);
                TensorF sub({static_cast<int>(e - s), 1, kImageSize, kImageSize});
                std::copy(comps.ptr() + s * plane, comps.ptr() + e * plane, sub.ptr());
                const TensorF probs = softmax_rows(target.forward(sub));
                target.clear_frames();
                for (std::size_t i = s; i < e; ++i) {
                    const float* prow = probs.ptr() + (i - s) * static_cast<std::size_t>(C);
                    const double h = hardness(prow, C, pick.labels[i]);
                    hard_sum += h;
                    CompositeSample cs;
                    cs.image = TensorF({kImageSize, kImageSize});
                    std::copy(comps.ptr() + i * plane, comps.ptr() + (i + 1) * plane,
                              cs.image.ptr());
                    cs.label = pick.labels[i];
                    cs.provenance = Provenance::RandomAugment;
                    cs.hardness = h;
                    cs.cycle = cycle;
                    cache.insert(std::move(cs));
                }
            }
            dump_cycle_samples(cache, before, cfg.dump_per_cycle, cycle, cfg.out_dir);

            const TargetPhaseResult tp = target_phase(target, target_opt, nullptr, nullptr,
                                                      *data.train, cache, cfg, cycle);
            CycleMetrics m;
            m.cycle = cycle;
            m.samples_added = static_cast<int>(picks.size());
            m.total_synthetic = static_cast<long>(cache.total());
            m.acc_mnist = eval_accuracy(target, *data.test_clean, cfg.eval_subset);
            m.acc_affine = eval_accuracy(target, *data.test_affine, cfg.eval_subset);
            m.mean_hardness = picks.empty() ? 0.0 : hard_sum / static_cast<double>(picks.size());
            m.target_loss = tp.avg_target_loss;
            m.saturation_events = tp.saturation_events;
            rows.push_back(m);
            writer.append(m);
            if (!cfg.out_dir.empty())
                save_checkpoint(cfg.out_dir + "/target_cycle_" + std::to_string(cycle) + ".ckpt",
                                NetKind::Target, target.named_tensors());
        } catch (const std::exception& e) {
            throw std::runtime_error("cycle " + std::to_string(cycle) + ": " + e.what());
        }
    }
    return rows;
}

HardnessHistogram hardness_histogram(TargetNet<float>& target, SynthesizerNet<float>* synth,
                                     const DatasetSplit& pool, const LoopConfig& cfg, int n,
                                     std::uint64_t seed) {
    if (n <= 0) throw std::invalid_argument("hardness histogram: n must be positive");
    if (pool.size() == 0) throw std::invalid_argument("hardness histogram: empty pool");
    target.set_train(false);
    if (synth) synth->set_train(false);
    Rng rng(derive_seed(seed, kHardReport));

    HardnessHistogram hist;
    std::array<long, 10> counts{};
    double sum = 0;
    const int C = target.n_classes();
    for (int start = 0; start < n; start += 256) {
        const int take = std::min(256, n - start);
        std::vector<std::uint32_t> idx;
        for (int i = 0; i < take; ++i)
            idx.push_back(static_cast<std::uint32_t>(rng.below(pool.size())));
        BatchPick pick = pick_pairs(pool, idx, cfg.backgrounds, &rng);
        TensorF params({take, 6});
        if (synth) {
            params = synth->forward(make_image_batch(pick.digits), make_image_batch(pick.bgs));
            synth->clear_frames();
        } else {
            for (int i = 0; i < take; ++i) {
                const auto p = draw_affine_params<float>(cfg.ranges, rng);
                for (int k = 0; k < 6; ++k) params.at2(i, k) = p[k];
            }
        }
        const TensorF comps = composite_batch(pick.digits, pick.bgs, params, nullptr);
        const TensorF probs = softmax_rows(target.forward(comps));
        target.clear_frames();
        for (int i = 0; i < take; ++i) {
            const double h =
                hardness(probs.ptr() + static_cast<std::size_t>(i) * C, C, pick.labels[static_cast<std::size_t>(i)]);
            sum += h;
            ++counts[static_cast<std::size_t>(std::min(9, static_cast<int>(h * 10.0)))];
        }
    }
    for (int b = 0; b < 10; ++b)
        hist.fractions[static_cast<std::size_t>(b)] =
            static_cast<double>(counts[static_cast<std::size_t>(b)]) / n;
    hist.mean = sum / n;
    hist.n = n;
    return hist;
}

}  // namespace terse
