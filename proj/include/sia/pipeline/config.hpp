#pragma once

#include <array>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sia/pseudolabel/pseudolabel.hpp"
#include "sia/segnet/segnet.hpp"
#include "sia/selftrain/selftrain.hpp"
#include "sia/synthdata/domain.hpp"
#include "sia/training/pretrain.hpp"
#include "sia/training/strategies.hpp"
#include "sia/util/text.hpp"

namespace sia {

enum class PriorChoice { none, small, large };
enum class EvaluatorChoice { consensus, pseudo, ground_truth };

inline std::string to_string(PriorChoice p) {
    switch (p) {
        case PriorChoice::none: return "none";
        case PriorChoice::small: return "small";
        case PriorChoice::large: return "large";
    }
    return "?";
}

inline std::string to_string(EvaluatorChoice e) {
    switch (e) {
        case EvaluatorChoice::consensus: return "consensus";
        case EvaluatorChoice::pseudo: return "pseudo";
        case EvaluatorChoice::ground_truth: return "ground_truth";
    }
    return "?";
}

inline EvaluatorChoice parse_evaluator(const std::string& s) {
    if (s == "consensus") return EvaluatorChoice::consensus;
    if (s == "pseudo") return EvaluatorChoice::pseudo;
    if (s == "ground_truth") return EvaluatorChoice::ground_truth;
    throw Error("unknown evaluator '" + s + "' (expected consensus, pseudo or ground_truth)");
}

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "run";

    DomainSpec source;
    DomainSpec target = default_target_spec();
    std::size_t source_size = 200;
    std::size_t target_train_size = 200;  // includes the held-out split
    std::size_t target_test_size = 100;

    SegNetConfig model;
    PriorChoice prior = PriorChoice::large;
    PriorSpec prior_spec = PriorSpec::large();

    UdaConfig uda;
    double pseudo_tau = kDefaultPseudoTau;
    bool pseudo_confidence = false;

    SelfTrainConfig selftrain;  // iterations/lr below override per augmentation
    std::array<std::size_t, 3> selftrain_iterations{500, 500, 500};
    std::array<double, 3> selftrain_lr{1e-4, 1e-4, 1e-4};

    EvaluatorChoice evaluator = EvaluatorChoice::consensus;
    double consensus_tau = 0.5;  // consensus labels below this mean confidence are ignored
    double heldout_fraction = 0.2;

    std::size_t heldout_size() const {
        return static_cast<std::size_t>(static_cast<double>(target_train_size) * heldout_fraction + 0.5);
    }

    std::vector<std::string> violations() const {
        std::vector<std::string> out;
        auto add = [&](const std::string& prefix, const std::vector<std::string>& v) {
            for (const auto& s : v) out.push_back(prefix + s);
        };
        add("dataset.source: ", source.violations());
        add("dataset.target: ", target.violations());
        if (source_size == 0) out.push_back("dataset.source_size must be >= 1");
        if (target_test_size == 0) out.push_back("dataset.target_test_size must be >= 1");
        if (!(heldout_fraction > 0 && heldout_fraction < 1)) out.push_back("soup.heldout_fraction must be in (0,1)");
        if (heldout_size() == 0 || heldout_size() >= target_train_size)
            out.push_back("dataset.target_train_size too small for a non-empty train and held-out split");
        add("model: ", model.violations());
        if (model.num_classes != kNumClasses) out.push_back("model.num_classes must be " + std::to_string(kNumClasses));
        const std::size_t f = std::size_t{1} << model.channels.size();
        for (const auto* d : {&source, &target})
            if (d->height % f || d->width % f)
                out.push_back("dataset image extents must be divisible by " + std::to_string(f));
        if (target.height % selftrain.aug.grid || target.width % selftrain.aug.grid)
            out.push_back("selftrain.grid must divide the target image extents");
        if (prior != PriorChoice::none) add("model.prior: ", prior_spec.violations());
        for (const auto& v : uda.violations()) out.push_back(v);
        if (!(pseudo_tau > 0 && pseudo_tau <= 1)) out.push_back("pseudo.tau must be in (0,1]");
        if (!(consensus_tau > 0 && consensus_tau <= 1)) out.push_back("soup.consensus_tau must be in (0,1]");
        for (const auto& v : selftrain.violations()) out.push_back(v);
        for (double lr : selftrain_lr)
            if (!(lr >= 0)) out.push_back("selftrain lr must be >= 0");
        return out;
    }

    bool operator==(const PipelineConfig&) const = default;
};

/// Per-augmentation self-training config (seed excluded; set by the stage).
inline SelfTrainConfig selftrain_for(const PipelineConfig& c, AugmentKind k) {
    SelfTrainConfig s = c.selftrain;
    s.aug.kind = k;
    s.iterations = c.selftrain_iterations[static_cast<std::size_t>(k)];
    s.lr = c.selftrain_lr[static_cast<std::size_t>(k)];
    return s;
}

namespace config_detail {

using Setter = std::function<void(PipelineConfig&, const std::string&)>;
using Getter = std::function<std::string(const PipelineConfig&)>;

struct Key {
    Getter get;
    Setter set;
};

inline std::string fmt_sizes(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
    return s;
}

inline std::vector<std::size_t> parse_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& p : split(s, ',')) {
        const auto t = trim(p);
        if (!t.empty()) out.push_back(parse_u64(t));
    }
    return out;
}

inline std::string b(bool v) { return v ? "true" : "false"; }

// Ordered table: section -> key -> accessor. Serialization follows this order.
inline const std::vector<std::pair<std::string, std::vector<std::pair<std::string, Key>>>>& schema() {
    using S = std::vector<std::pair<std::string, Key>>;
    static const auto table = [] {
        std::vector<std::pair<std::string, S>> t;
        S run{
            {"seed", {[](auto& c) { return std::to_string(c.seed); }, [](auto& c, auto& v) { c.seed = parse_u64(v); }}},
            {"out_dir", {[](auto& c) { return c.out_dir; }, [](auto& c, auto& v) { c.out_dir = v; }}},
        };
        t.emplace_back("run", std::move(run));

        S data{
            {"source_size", {[](auto& c) { return std::to_string(c.source_size); },
                             [](auto& c, auto& v) { c.source_size = parse_u64(v); }}},
            {"target_train_size", {[](auto& c) { return std::to_string(c.target_train_size); },
                                   [](auto& c, auto& v) { c.target_train_size = parse_u64(v); }}},
            {"target_test_size", {[](auto& c) { return std::to_string(c.target_test_size); },
                                  [](auto& c, auto& v) { c.target_test_size = parse_u64(v); }}},
        };
        for (const auto& [k, unused] : to_kv(DomainSpec{})) {
            const std::string key = k;
            data.push_back({"source." + key,
                            {[key](auto& c) {
                                 for (auto& [kk, vv] : to_kv(c.source))
                                     if (kk == key) return vv;
                                 return std::string();
                             },
                             [key](auto& c, auto& v) { set_domain_key(c.source, key, v); }}});
        }
        for (const auto& [k, unused] : to_kv(DomainSpec{})) {
            const std::string key = k;
            data.push_back({"target." + key,
                            {[key](auto& c) {
                                 for (auto& [kk, vv] : to_kv(c.target))
                                     if (kk == key) return vv;
                                 return std::string();
                             },
                             [key](auto& c, auto& v) { set_domain_key(c.target, key, v); }}});
        }
        t.emplace_back("dataset", std::move(data));

        S model{
            {"channels", {[](auto& c) { return fmt_sizes(c.model.channels); },
                          [](auto& c, auto& v) { c.model.channels = parse_sizes(v); }}},
            {"decoder_width", {[](auto& c) { return std::to_string(c.model.decoder_width); },
                               [](auto& c, auto& v) { c.model.decoder_width = parse_u64(v); }}},
            {"prior", {[](auto& c) { return to_string(c.prior); },
                       [](auto& c, auto& v) {
                           if (v == "none") c.prior = PriorChoice::none;
                           else if (v == "small") c.prior = PriorChoice::small, c.prior_spec = PriorSpec::small();
                           else if (v == "large") c.prior = PriorChoice::large, c.prior_spec = PriorSpec::large();
                           else throw Error("expected none, small or large");
                       }}},
            {"prior.classes", {[](auto& c) { return std::to_string(c.prior_spec.classes); },
                               [](auto& c, auto& v) { c.prior_spec.classes = parse_u64(v); }}},
            {"prior.dataset_size", {[](auto& c) { return std::to_string(c.prior_spec.dataset_size); },
                                    [](auto& c, auto& v) { c.prior_spec.dataset_size = parse_u64(v); }}},
            {"prior.iterations", {[](auto& c) { return std::to_string(c.prior_spec.iterations); },
                                  [](auto& c, auto& v) { c.prior_spec.iterations = parse_u64(v); }}},
            {"prior.batch_size", {[](auto& c) { return std::to_string(c.prior_spec.batch_size); },
                                  [](auto& c, auto& v) { c.prior_spec.batch_size = parse_u64(v); }}},
            {"prior.patch_size", {[](auto& c) { return std::to_string(c.prior_spec.patch_size); },
                                  [](auto& c, auto& v) { c.prior_spec.patch_size = parse_u64(v); }}},
            {"prior.lr", {[](auto& c) { return format_double(c.prior_spec.lr); },
                          [](auto& c, auto& v) { c.prior_spec.lr = parse_double(v); }}},
            {"prior.hue_jitter", {[](auto& c) { return format_double(c.prior_spec.hue_jitter); },
                                  [](auto& c, auto& v) { c.prior_spec.hue_jitter = parse_double(v); }}},
        };
        t.emplace_back("model", std::move(model));

        S uda{
            {"iterations", {[](auto& c) { return std::to_string(c.uda.iterations); },
                            [](auto& c, auto& v) { c.uda.iterations = parse_u64(v); }}},
            {"lr", {[](auto& c) { return format_double(c.uda.lr); }, [](auto& c, auto& v) { c.uda.lr = parse_double(v); }}},
            {"encoder_lr_scale", {[](auto& c) { return format_double(c.uda.encoder_lr_scale); },
                                  [](auto& c, auto& v) { c.uda.encoder_lr_scale = parse_double(v); }}},
            {"warmup", {[](auto& c) { return std::to_string(c.uda.warmup); },
                        [](auto& c, auto& v) { c.uda.warmup = parse_u64(v); }}},
            {"poly_decay", {[](auto& c) { return b(c.uda.poly_decay); },
                            [](auto& c, auto& v) { c.uda.poly_decay = parse_bool(v); }}},
            {"poly_power", {[](auto& c) { return format_double(c.uda.poly_power); },
                            [](auto& c, auto& v) { c.uda.poly_power = parse_double(v); }}},
            {"weight_decay", {[](auto& c) { return format_double(c.uda.weight_decay); },
                              [](auto& c, auto& v) { c.uda.weight_decay = parse_double(v); }}},
            {"fd_weight", {[](auto& c) { return format_double(c.uda.fd_weight); },
                           [](auto& c, auto& v) { c.uda.fd_weight = parse_double(v); }}},
            {"fd_classes", {[](auto& c) { return fmt_sizes(c.uda.fd_classes); },
                            [](auto& c, auto& v) { c.uda.fd_classes = parse_sizes(v); }}},
            {"rcs_enabled", {[](auto& c) { return b(c.uda.rcs_enabled); },
                             [](auto& c, auto& v) { c.uda.rcs_enabled = parse_bool(v); }}},
            {"rcs_temperature", {[](auto& c) { return format_double(c.uda.rcs_temperature); },
                                 [](auto& c, auto& v) { c.uda.rcs_temperature = parse_double(v); }}},
            {"ema_alpha", {[](auto& c) { return format_double(c.uda.ema_alpha); },
                           [](auto& c, auto& v) { c.uda.ema_alpha = parse_double(v); }}},
            {"tau_online", {[](auto& c) { return format_double(c.uda.tau_online); },
                            [](auto& c, auto& v) { c.uda.tau_online = parse_double(v); }}},
            {"self_training", {[](auto& c) { return b(c.uda.self_training); },
                               [](auto& c, auto& v) { c.uda.self_training = parse_bool(v); }}},
            {"student_augment", {[](auto& c) { return b(c.uda.student_augment); },
                                 [](auto& c, auto& v) { c.uda.student_augment = parse_bool(v); }}},
            {"class_mix", {[](auto& c) { return b(c.uda.class_mix); },
                           [](auto& c, auto& v) { c.uda.class_mix = parse_bool(v); }}},
            {"batch_size", {[](auto& c) { return std::to_string(c.uda.batch_size); },
                            [](auto& c, auto& v) { c.uda.batch_size = parse_u64(v); }}},
        };
        t.emplace_back("uda", std::move(uda));

        S pseudo{
            {"tau", {[](auto& c) { return format_double(c.pseudo_tau); },
                     [](auto& c, auto& v) { c.pseudo_tau = parse_double(v); }}},
            {"save_confidence", {[](auto& c) { return b(c.pseudo_confidence); },
                                 [](auto& c, auto& v) { c.pseudo_confidence = parse_bool(v); }}},
        };
        t.emplace_back("pseudo", std::move(pseudo));

        S st{
            {"iterations", {[](auto&) { return std::string(); },
                            [](auto& c, auto& v) { c.selftrain_iterations.fill(parse_u64(v)); }}},
            {"lr", {[](auto&) { return std::string(); }, [](auto& c, auto& v) { c.selftrain_lr.fill(parse_double(v)); }}},
        };
        for (auto k : kAllAugments) {
            const auto i = static_cast<std::size_t>(k);
            st.push_back({to_string(k) + ".iterations",
                          {[i](auto& c) { return std::to_string(c.selftrain_iterations[i]); },
                           [i](auto& c, auto& v) { c.selftrain_iterations[i] = parse_u64(v); }}});
            st.push_back({to_string(k) + ".lr", {[i](auto& c) { return format_double(c.selftrain_lr[i]); },
                                                 [i](auto& c, auto& v) { c.selftrain_lr[i] = parse_double(v); }}});
        }
        S st_rest{
            {"weight_decay", {[](auto& c) { return format_double(c.selftrain.weight_decay); },
                              [](auto& c, auto& v) { c.selftrain.weight_decay = parse_double(v); }}},
            {"batch_size", {[](auto& c) { return std::to_string(c.selftrain.batch_size); },
                            [](auto& c, auto& v) { c.selftrain.batch_size = parse_u64(v); }}},
            {"brightness_delta", {[](auto& c) { return format_double(c.selftrain.aug.photometric.brightness_delta); },
                                  [](auto& c, auto& v) { c.selftrain.aug.photometric.brightness_delta = parse_double(v); }}},
            {"contrast_range", {[](auto& c) {
                                    return format_double_list({c.selftrain.aug.photometric.contrast_lo,
                                                               c.selftrain.aug.photometric.contrast_hi});
                                },
                                [](auto& c, auto& v) {
                                    const auto r = parse_double_list(v);
                                    if (r.size() != 2) throw Error("expected lo, hi");
                                    c.selftrain.aug.photometric.contrast_lo = r[0];
                                    c.selftrain.aug.photometric.contrast_hi = r[1];
                                }}},
            {"saturation_range", {[](auto& c) {
                                      return format_double_list({c.selftrain.aug.photometric.saturation_lo,
                                                                 c.selftrain.aug.photometric.saturation_hi});
                                  },
                                  [](auto& c, auto& v) {
                                      const auto r = parse_double_list(v);
                                      if (r.size() != 2) throw Error("expected lo, hi");
                                      c.selftrain.aug.photometric.saturation_lo = r[0];
                                      c.selftrain.aug.photometric.saturation_hi = r[1];
                                  }}},
            {"hue_delta", {[](auto& c) { return format_double(c.selftrain.aug.photometric.hue_delta); },
                           [](auto& c, auto& v) { c.selftrain.aug.photometric.hue_delta = parse_double(v); }}},
            {"photometric_prob", {[](auto& c) { return format_double(c.selftrain.aug.photometric.prob); },
                                  [](auto& c, auto& v) { c.selftrain.aug.photometric.prob = parse_double(v); }}},
            {"noise_sigma_range", {[](auto& c) {
                                       return format_double_list({c.selftrain.aug.noise_sigma_lo, c.selftrain.aug.noise_sigma_hi});
                                   },
                                   [](auto& c, auto& v) {
                                       const auto r = parse_double_list(v);
                                       if (r.size() != 2) throw Error("expected lo, hi");
                                       c.selftrain.aug.noise_sigma_lo = r[0];
                                       c.selftrain.aug.noise_sigma_hi = r[1];
                                   }}},
            {"grid", {[](auto& c) { return std::to_string(c.selftrain.aug.grid); },
                      [](auto& c, auto& v) { c.selftrain.aug.grid = parse_u64(v); }}},
        };
        for (auto& kv : st_rest) st.push_back(std::move(kv));
        t.emplace_back("selftrain", std::move(st));

        S soup{
            {"evaluator", {[](auto& c) { return to_string(c.evaluator); },
                           [](auto& c, auto& v) { c.evaluator = parse_evaluator(v); }}},
            {"consensus_tau", {[](auto& c) { return format_double(c.consensus_tau); },
                               [](auto& c, auto& v) { c.consensus_tau = parse_double(v); }}},
            {"heldout_fraction", {[](auto& c) { return format_double(c.heldout_fraction); },
                                  [](auto& c, auto& v) { c.heldout_fraction = parse_double(v); }}},
        };
        t.emplace_back("soup", std::move(soup));
        return t;
    }();
    return table;
}

inline const Key* find_key(const std::string& section, const std::string& key) {
    for (const auto& [sec, keys] : schema()) {
        if (sec != section) continue;
        for (const auto& [k, acc] : keys)
            if (k == key) return &acc;
    }
    return nullptr;
}

}  // namespace config_detail

/// Every problem found while parsing or validating, one line each.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : Error(join(problems)), problems_(std::move(problems)) {}
    const std::vector<std::string>& problems() const { return problems_; }

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string s = "invalid configuration:";
        for (const auto& x : p) s += "\n  " + x;
        return s;
    }
    std::vector<std::string> problems_;
};

/// INI-style text: [section] headers, key = value lines, '#' or ';'
/// comments. Unknown sections and keys are errors. Keys missing from the
/// text keep their defaults. Throws ConfigError listing every problem.
inline PipelineConfig parse_config(const std::string& text, const std::string& source = "config") {
    PipelineConfig c;
    std::vector<std::string> problems;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = source + ":" + std::to_string(lineno) + ": ";
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                problems.push_back(where + "malformed section header");
                continue;
            }
            section = trim(t.substr(1, t.size() - 2));
            bool known = false;
            for (const auto& [sec, unused] : config_detail::schema()) known = known || sec == section;
            if (!known) problems.push_back(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            problems.push_back(where + "expected key = value");
            continue;
        }
        const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
        if (section.empty()) {
            problems.push_back(where + "key '" + key + "' outside any section");
            continue;
        }
        const auto* k = config_detail::find_key(section, key);
        if (!k) {
            problems.push_back(where + "unknown key '" + key + "' in [" + section + "]");
            continue;
        }
        try {
            k->set(c, value);
        } catch (const std::exception& e) {
            problems.push_back(where + section + "." + key + ": " + e.what());
        }
    }
    if (problems.empty())
        for (const auto& v : c.violations()) problems.push_back(source + ": " + v);
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return c;
}

inline PipelineConfig load_config(const std::string& path) { return parse_config(read_text_file(path), path); }

/// Full config text, every key spelled out. parse_config(serialize_config(c)) == c.
inline std::string serialize_config(const PipelineConfig& c) {
    std::ostringstream o;
    bool first = true;
    for (const auto& [sec, keys] : config_detail::schema()) {
        o << (first ? "" : "\n") << "[" << sec << "]\n";
        first = false;
        for (const auto& [k, acc] : keys) {
            const std::string v = acc.get(c);
            if (sec == "selftrain" && (k == "iterations" || k == "lr")) continue;  // write-only shorthands
            o << k << " = " << v << "\n";
        }
    }
    return o.str();
}

}  // namespace sia
