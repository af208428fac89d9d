#include "terse/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "terse/checkpoint.hpp"
#include "terse/compositor.hpp"
#include "terse/fdcheck.hpp"
#include "terse/loop.hpp"
#include "terse/loss.hpp"
#include "terse/rng.hpp"

namespace terse {

namespace {

enum CliPurpose : std::uint64_t {
    kAffineTestSeed = 0x41465f54,
    kBaselineInit = 0x42494e49,
    kBaselineShuffle = 0x4253484f,
    kExportSeed = 0x45585053,
};

constexpr const char* kUsage =
    "usage: terse <subcommand> [flags]\n"
    "\n"
    "subcommands:\n"
    "  train-baseline       train the digits-only target and save baseline.ckpt\n"
    "  run-terse            adversarial cycles from a baseline checkpoint\n"
    "  run-random-baseline  random-augmentation comparator, same schedule\n"
    "  hardness-report      hardness histogram CSV for a generator vs a frozen target\n"
    "  export-samples       dump composites as PGM/PNG with a manifest\n"
    "  gradcheck            run the finite-difference verification suite\n"
    "\n"
    "flags:\n"
    "  --config FILE   key = value config file (flags override file values)\n"
    "  --data DIR      dataset directory (default: data)\n"
    "  --out DIR       output directory\n"
    "  --seed N        master seed\n"
    "  --cycles N      adversarial cycle count\n"
    "  --set K=V       set any config key\n"
    "  --baseline F    baseline target checkpoint (run-terse / run-random-baseline)\n"
    "  --target F      target checkpoint (hardness-report)\n"
    "  --synth F       synthesizer checkpoint (hardness-report / export-samples)\n"
    "  --n N           sample count (hardness-report / export-samples)\n"
    "  --format F      pgm | png (export-samples)\n";

struct CliError {
    int code;
    std::string message;
};

struct Flags {
    std::string subcommand;
    std::string config_file;
    std::string baseline_ckpt;
    std::string target_ckpt;
    std::string synth_ckpt;
    int n = 2000;
    std::string format = "pgm";
    std::vector<std::pair<std::string, std::string>> overrides;  // applied in order
};

Flags parse_flags(const std::vector<std::string>& args) {
    if (args.empty()) throw CliError{2, std::string("missing subcommand\n") + kUsage};
    Flags f;
    f.subcommand = args[0];
    auto need_value = [&](std::size_t i, const std::string& flag) -> const std::string& {
        if (i + 1 >= args.size()) throw CliError{2, "flag " + flag + " needs a value"};
        return args[i + 1];
    };
    for (std::size_t i = 1; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a == "--config") f.config_file = need_value(i++, a);
        else if (a == "--data") f.overrides.emplace_back("data_dir", need_value(i++, a));
        else if (a == "--out") f.overrides.emplace_back("out_dir", need_value(i++, a));
        else if (a == "--seed") f.overrides.emplace_back("master_seed", need_value(i++, a));
        else if (a == "--cycles") f.overrides.emplace_back("cycles", need_value(i++, a));
        else if (a == "--set") {
            const std::string& kv = need_value(i++, a);
            const std::size_t eq = kv.find('=');
            if (eq == std::string::npos) throw CliError{2, "--set expects key=value, got " + kv};
            f.overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
        } else if (a == "--baseline") f.baseline_ckpt = need_value(i++, a);
        else if (a == "--target") f.target_ckpt = need_value(i++, a);
        else if (a == "--synth") f.synth_ckpt = need_value(i++, a);
        else if (a == "--n") f.n = std::atoi(need_value(i++, a).c_str());
        else if (a == "--format") f.format = need_value(i++, a);
        else if (a == "--help" || a == "-h") throw CliError{0, kUsage};
        else throw CliError{2, "unknown flag " + a + "\n" + kUsage};
    }
    return f;
}

RunConfig build_config(const Flags& f) {
    RunConfig cfg;
    try {
        if (!f.config_file.empty()) cfg.load_file(f.config_file);
        for (const auto& [k, v] : f.overrides) cfg.set(k, v);
        cfg.finalize();
    } catch (const ConfigError& e) {
        throw CliError{2, e.what()};
    }
    return cfg;
}

// one writer per output directory
class OutDirLock {
public:
    explicit OutDirLock(const std::string& dir) {
        std::filesystem::create_directories(dir);
        path_ = dir + "/.lock";
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw std::runtime_error("output directory " + dir +
                                     " is locked by another run (remove " + path_ +
                                     " if that run is gone)");
    }
    ~OutDirLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            ::unlink(path_.c_str());
        }
    }
    OutDirLock(const OutDirLock&) = delete;
    OutDirLock& operator=(const OutDirLock&) = delete;

private:
    std::string path_;
    int fd_ = -1;
};

void write_echo(const RunConfig& cfg) {
    if (cfg.out_dir.empty()) return;
    std::ofstream os(cfg.out_dir + "/config_echo.cfg", std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write config echo under " + cfg.out_dir);
    os << cfg.echo();
}

std::string require_out(const RunConfig& cfg) {
    if (cfg.out_dir.empty()) throw CliError{2, "this subcommand requires --out DIR"};
    return cfg.out_dir;
}

DatasetSplit pad_split(const DatasetSplit& in) {
    DatasetSplit out;
    out.provenance = in.provenance;
    out.labels = in.labels;
    out.images.reserve(in.size());
    for (const TensorF& img : in.images) {
        if (img.dim(0) == 28 && img.dim(1) == 28)
            out.images.push_back(pad_to_40(img));
        else if (img.dim(0) == kImageSize && img.dim(1) == kImageSize)
            out.images.push_back(img);
        else
            throw std::runtime_error("dataset images must be 28x28 or 40x40, got " +
                                     img.shape_str());
    }
    return out;
}

DatasetSplit stride_subset(const DatasetSplit& in, int n) {
    if (n <= 0 || static_cast<std::size_t>(n) >= in.size()) return in;
    DatasetSplit out;
    out.provenance = in.provenance;
    for (int i = 0; i < n; ++i) {
        const std::size_t idx = static_cast<std::size_t>(i) * in.size() / static_cast<std::size_t>(n);
        out.images.push_back(in.images[idx]);
        out.labels.push_back(in.labels[idx]);
    }
    return out;
}

}  // namespace

CliData load_cli_data(const RunConfig& cfg) {
    CliData d;
    d.train = pad_split(stride_subset(
        load_idx(cfg.data_dir + "/train-images-idx3-ubyte", cfg.data_dir + "/train-labels-idx1-ubyte"),
        cfg.train_subset));
    d.test_clean = pad_split(
        load_idx(cfg.data_dir + "/t10k-images-idx3-ubyte", cfg.data_dir + "/t10k-labels-idx1-ubyte"));
    d.test_affine = gen_affine_testset(d.test_clean, cfg.ranges(), cfg.affine_test_per_digit,
                                       derive_seed(cfg.master_seed, kAffineTestSeed));
    return d;
}

namespace {

int cmd_gradcheck() {
    int failures = 0;
    for (const CheckResult& r : run_gradient_suite()) {
        std::printf("%s  %-58s max rel err %.3e (tol %.1e)\n", r.pass ? "PASS" : "FAIL",
                    r.name.c_str(), r.max_err, r.tol);
        if (!r.pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}

int cmd_train_baseline(const RunConfig& cfg) {
    const std::string out = require_out(cfg);
    OutDirLock lock(out);
    write_echo(cfg);
    const CliData data = load_cli_data(cfg);

    TargetNet<float> target;
    Rng init_rng(derive_seed(cfg.master_seed, kBaselineInit));
    target.init(init_rng, 1.0);
    target.set_dropout_seed(derive_seed(cfg.master_seed, kBaselineInit + 1));
    target.set_train(true);
    Sgd<float> opt(cfg.baseline_lr, cfg.baseline_momentum, cfg.baseline_wd);
    auto params = target.params();

    for (int epoch = 0; epoch < cfg.baseline_epochs; ++epoch) {
        std::vector<std::uint32_t> order(data.train.size());
        std::iota(order.begin(), order.end(), 0u);
        Rng srng(derive_seed(cfg.master_seed, kBaselineShuffle, static_cast<std::uint64_t>(epoch)));
        srng.shuffle(order.begin(), order.end());
        double loss_sum = 0;
        long steps = 0;
        for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.baseline_batch)) {
            const std::size_t e =
                std::min(order.size(), s + static_cast<std::size_t>(cfg.baseline_batch));
            std::vector<const TensorF*> imgs;
            std::vector<int> labs;
            for (std::size_t i = s; i < e; ++i) {
                imgs.push_back(&data.train.images[order[i]]);
                labs.push_back(data.train.labels[order[i]]);
            }
            SoftmaxCrossEntropy<float> ce;
            loss_sum += ce.forward(target.forward(make_image_batch(imgs)), labs);
            target.backward(ce.backward(1.0));
            opt.step(params);
            ++steps;
        }
        std::printf("epoch %d  train loss %.4f\n", epoch, loss_sum / std::max(1L, steps));
    }

    const double acc_clean = eval_accuracy(target, data.test_clean);
    const double acc_affine = eval_accuracy(target, data.test_affine);
    save_checkpoint(out + "/baseline.ckpt", NetKind::Target, target.named_tensors());
    std::printf("baseline: clean test accuracy %.4f, affine test accuracy %.4f\n", acc_clean,
                acc_affine);
    std::printf("saved %s/baseline.ckpt\n", out.c_str());
    return 0;
}

TargetNet<float> load_target(const std::string& ckpt) {
    TargetNet<float> t;
    load_checkpoint(ckpt, NetKind::Target, t.named_tensors());
    return t;
}

int cmd_run(const RunConfig& cfg, const Flags& flags, bool terse_arm) {
    if (flags.baseline_ckpt.empty())
        throw CliError{2, "run subcommands require --baseline <checkpoint>"};
    const std::string out = require_out(cfg);
    OutDirLock lock(out);
    write_echo(cfg);
    const CliData data = load_cli_data(cfg);
    TargetNet<float> target = load_target(flags.baseline_ckpt);

    LoopConfig lc = cfg.loop_config();
    lc.out_dir = out;
    LoopData ld{&data.train, &data.test_clean, &data.test_affine};
    const std::vector<CycleMetrics> rows =
        terse_arm ? run_cycles(target, ld, lc) : random_augment_baseline(target, ld, lc);
    for (const CycleMetrics& m : rows) std::puts(metrics_csv_row(m).c_str());
    return 0;
}

int cmd_hardness_report(const RunConfig& cfg, const Flags& flags) {
    if (flags.target_ckpt.empty()) throw CliError{2, "hardness-report requires --target <checkpoint>"};
    if (flags.n <= 0) throw CliError{2, "hardness-report requires --n > 0"};
    const std::string out = require_out(cfg);
    OutDirLock lock(out);
    write_echo(cfg);
    const CliData data = load_cli_data(cfg);
    TargetNet<float> target = load_target(flags.target_ckpt);

    SynthesizerNet<float> synth(cfg.ranges());
    const bool learned = !flags.synth_ckpt.empty();
    if (learned) load_checkpoint(flags.synth_ckpt, NetKind::Synthesizer, synth.named_tensors());

    LoopConfig lc = cfg.loop_config();
    const HardnessHistogram hist = hardness_histogram(target, learned ? &synth : nullptr,
                                                      data.train, lc, flags.n, cfg.master_seed);
    std::ofstream os(out + "/hardness.csv", std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write hardness.csv under " + out);
    os << "bin_lo,bin_hi,fraction\n";
    char buf[64];
    for (int b = 0; b < 10; ++b) {
        std::snprintf(buf, sizeof(buf), "%.1f,%.1f,%.17g\n", b / 10.0, (b + 1) / 10.0,
                      hist.fractions[static_cast<std::size_t>(b)]);
        os << buf;
    }
    std::printf("%s generator: mean hardness %.4f over %d composites\n",
                learned ? "learned" : "random", hist.mean, hist.n);
    return 0;
}

int cmd_export_samples(const RunConfig& cfg, const Flags& flags) {
    if (flags.n <= 0) throw CliError{2, "export-samples requires --n > 0"};
    ImageFormat format;
    if (flags.format == "pgm") format = ImageFormat::Pgm;
    else if (flags.format == "png") format = ImageFormat::Png;
    else throw CliError{2, "unknown --format " + flags.format + " (want pgm or png)"};
    const std::string out = require_out(cfg);
    OutDirLock lock(out);
    write_echo(cfg);
    const CliData data = load_cli_data(cfg);

    SynthesizerNet<float> synth(cfg.ranges());
    const bool learned = !flags.synth_ckpt.empty();
    if (learned) {
        load_checkpoint(flags.synth_ckpt, NetKind::Synthesizer, synth.named_tensors());
        synth.set_train(false);
    }

    Rng rng(derive_seed(cfg.master_seed, kExportSeed));
    std::vector<ExportSample> samples;
    const TensorF black({kImageSize, kImageSize});
    for (int i = 0; i < flags.n; ++i) {
        const std::size_t idx = rng.below(data.train.size());
        const TensorF& digit = data.train.images[idx];
        AffineParamsT<float> p;
        if (learned) {
            std::vector<const TensorF*> one{&digit};
            std::vector<const TensorF*> oneb{&black};
            const TensorF params = synth.forward(make_image_batch(one), make_image_batch(oneb));
            synth.clear_frames();
            for (int k = 0; k < 6; ++k) p[k] = params.at2(0, k);
        } else {
            p = draw_affine_params<float>(cfg.ranges(), rng);
        }
        CompositeOp<float> op;
        ExportSample s;
        s.image = op.forward(digit, black, p);
        s.cycle = 0;
        s.index = i;
        s.label = data.train.labels[idx];
        samples.push_back(std::move(s));
    }
    const int written = export_samples(samples, out + "/samples", format);
    std::printf("wrote %d %s files under %s/samples\n", written, flags.format.c_str(), out.c_str());
    return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
    Flags flags;
    try {
        flags = parse_flags(args);
    } catch (const CliError& e) {
        (e.code == 0 ? std::cout : std::cerr) << e.message << "\n";
        return e.code;
    }
    try {
        if (flags.subcommand == "gradcheck") {
            build_config(flags);  // still validates any --set overrides
            return cmd_gradcheck();
        }
        const RunConfig cfg = build_config(flags);
        if (flags.subcommand == "train-baseline") return cmd_train_baseline(cfg);
        if (flags.subcommand == "run-terse") return cmd_run(cfg, flags, true);
        if (flags.subcommand == "run-random-baseline") return cmd_run(cfg, flags, false);
        if (flags.subcommand == "hardness-report") return cmd_hardness_report(cfg, flags);
        if (flags.subcommand == "export-samples") return cmd_export_samples(cfg, flags);
        throw CliError{2, "unknown subcommand '" + flags.subcommand + "'\n" + kUsage};
    } catch (const CliError& e) {
        std::cerr << e.message << "\n";
        return e.code;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int cli_main(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_main(args);
}

}  // namespace terse
