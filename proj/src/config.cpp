#include "terse/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <variant>

namespace terse {

namespace {

using FieldRef = std::variant<std::string*, std::uint64_t*, int*, double*, bool*>;

std::map<std::string, FieldRef> registry(RunConfig& c) {
    return {
        {"data_dir", &c.data_dir},
        {"out_dir", &c.out_dir},
        {"master_seed", &c.master_seed},
        {"cycles", &c.cycles},
        {"per_class_capacity", &c.per_class_capacity},
        {"increment_total", &c.increment_total},
        {"fig7_profile", &c.fig7_profile},
        {"synth_lr", &c.synth_lr},
        {"synth_wd", &c.synth_wd},
        {"synth_batch", &c.synth_batch},
        {"synth_epoch_cap", &c.synth_epoch_cap},
        {"target_lr", &c.target_lr},
        {"target_momentum", &c.target_momentum},
        {"target_wd", &c.target_wd},
        {"target_batch", &c.target_batch},
        {"target_epochs", &c.target_epochs},
        {"real_synth_ratio", &c.real_synth_ratio},
        {"use_discriminator", &c.use_discriminator},
        {"lambda_d", &c.lambda_d},
        {"disc_lr", &c.disc_lr},
        {"disc_wd", &c.disc_wd},
        {"saturating_gen_loss", &c.saturating_gen_loss},
        {"inject_artifacts", &c.inject_artifacts},
        {"clamp_rot_deg", &c.clamp_rot_deg},
        {"clamp_trans", &c.clamp_trans},
        {"clamp_shear", &c.clamp_shear},
        {"clamp_scale_lo", &c.clamp_scale_lo},
        {"clamp_scale_hi", &c.clamp_scale_hi},
        {"xavier_gain", &c.xavier_gain},
        {"train_subset", &c.train_subset},
        {"eval_subset", &c.eval_subset},
        {"affine_test_per_digit", &c.affine_test_per_digit},
        {"baseline_lr", &c.baseline_lr},
        {"baseline_momentum", &c.baseline_momentum},
        {"baseline_wd", &c.baseline_wd},
        {"baseline_batch", &c.baseline_batch},
        {"baseline_epochs", &c.baseline_epochs},
        {"dump_per_cycle", &c.dump_per_cycle},
    };
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as bool");
}

std::string format_double(double v) {
    // shortest representation that round-trips, so the echo reproduces runs
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = 0;
    for (int prec = 1; prec <= 16; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        std::sscanf(buf, "%lf", &back);
        if (back == v) break;
    }
    return buf;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    auto reg = registry(*this);
    auto it = reg.find(key);
    if (it == reg.end()) throw ConfigError("unknown config key '" + key + "'");
    const std::string v = trim(value);
    try {
        std::visit(
            [&](auto* field) {
                using P = std::decay_t<decltype(*field)>;
                if constexpr (std::is_same_v<P, std::string>) {
                    *field = v;
                } else if constexpr (std::is_same_v<P, bool>) {
                    *field = parse_bool(v, key);
                } else if constexpr (std::is_same_v<P, std::uint64_t>) {
                    std::size_t pos = 0;
                    *field = std::stoull(v, &pos);
                    if (pos != v.size()) throw std::invalid_argument(v);
                } else if constexpr (std::is_same_v<P, int>) {
                    std::size_t pos = 0;
                    *field = std::stoi(v, &pos);
                    if (pos != v.size()) throw std::invalid_argument(v);
                } else {
                    std::size_t pos = 0;
                    *field = std::stod(v, &pos);
                    if (pos != v.size()) throw std::invalid_argument(v);
                }
            },
            it->second);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse value '" + v + "'");
    }
    set_keys_.insert(key);
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void RunConfig::finalize() {
    if (fig7_profile && !was_set("increment_total")) increment_total = 500;

    auto positive = [](double v, const char* key) {
        if (!(v > 0)) throw ConfigError(std::string("config key '") + key + "' must be positive");
    };
    positive(synth_lr, "synth_lr");
    positive(target_lr, "target_lr");
    positive(disc_lr, "disc_lr");
    positive(baseline_lr, "baseline_lr");
    positive(xavier_gain, "xavier_gain");
    positive(synth_epoch_cap, "synth_epoch_cap");
    if (cycles < 0) throw ConfigError("config key 'cycles' must be non-negative");
    if (per_class_capacity <= 0 && increment_total <= 0)
        throw ConfigError("one of per_class_capacity / increment_total must be positive");
    if (synth_batch <= 0 || target_batch <= 1 || baseline_batch <= 0)
        throw ConfigError("batch sizes must be positive (target_batch at least 2)");
    if (target_epochs < 0 || baseline_epochs < 0)
        throw ConfigError("epoch counts must be non-negative");
    if (real_synth_ratio < 0) throw ConfigError("config key 'real_synth_ratio' must be >= 0");
    if (target_momentum < 0 || target_momentum >= 1 || baseline_momentum < 0 ||
        baseline_momentum >= 1)
        throw ConfigError("momentum must lie in [0,1)");
    if (affine_test_per_digit <= 0)
        throw ConfigError("config key 'affine_test_per_digit' must be positive");
    ranges().validate();
}

std::string RunConfig::echo() const {
    RunConfig& self = const_cast<RunConfig&>(*this);
    auto reg = registry(self);
    std::ostringstream os;
    os << "# resolved configuration (defaults included); out_dir comes from --out\n";
    for (const auto& [key, ref] : reg) {  // std::map iterates sorted
        if (key == "out_dir") continue;
        os << key << " = ";
        std::visit(
            [&](auto* field) {
                using P = std::decay_t<decltype(*field)>;
                if constexpr (std::is_same_v<P, std::string>)
                    os << *field;
                else if constexpr (std::is_same_v<P, bool>)
                    os << (*field ? "true" : "false");
                else if constexpr (std::is_same_v<P, double>)
                    os << format_double(*field);
                else
                    os << *field;
            },
            ref);
        os << "\n";
    }
    return os.str();
}

ClampRanges RunConfig::ranges() const {
    ClampRanges r;
    const double rot = clamp_rot_deg * 3.14159265358979323846 / 180.0;
    r.lo = {-rot, -clamp_trans, -clamp_trans, -clamp_shear, clamp_scale_lo, clamp_scale_lo};
    r.hi = {rot, clamp_trans, clamp_trans, clamp_shear, clamp_scale_hi, clamp_scale_hi};
    return r;
}

LoopConfig RunConfig::loop_config() const {
    LoopConfig lc;
    lc.master_seed = master_seed;
    lc.cycles = cycles;
    lc.per_class_capacity = per_class_capacity;
    lc.increment_total = increment_total;
    lc.synth_lr = synth_lr;
    lc.synth_wd = synth_wd;
    lc.synth_batch = synth_batch;
    lc.synth_epoch_cap = synth_epoch_cap;
    lc.target_lr = target_lr;
    lc.target_momentum = target_momentum;
    lc.target_wd = target_wd;
    lc.target_batch = target_batch;
    lc.target_epochs = target_epochs;
    lc.real_synth_ratio = real_synth_ratio;
    lc.use_discriminator = use_discriminator;
    lc.lambda_d = lambda_d;
    lc.disc_lr = disc_lr;
    lc.disc_wd = disc_wd;
    lc.saturating_gen_loss = saturating_gen_loss;
    lc.inject_artifacts = inject_artifacts;
    lc.ranges = ranges();
    lc.xavier_gain = xavier_gain;
    lc.eval_subset = eval_subset;
    lc.dump_per_cycle = dump_per_cycle;
    return lc;
}

}  // namespace terse
