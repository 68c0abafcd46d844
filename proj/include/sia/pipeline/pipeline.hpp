#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sia/metrics/metrics.hpp"
#include "sia/pipeline/config.hpp"
#include "sia/pseudolabel/pseudolabel.hpp"
#include "sia/selftrain/selftrain.hpp"
#include "sia/soup/soup.hpp"
#include "sia/synthdata/dataset.hpp"
#include "sia/training/pretrain.hpp"
#include "sia/training/uda.hpp"
#include "sia/util/files.hpp"

namespace sia {

enum class Stage { gen_data, pretrain, uda_train, pseudo_label, self_train, soup, eval };

inline constexpr Stage kAllStages[] = {Stage::gen_data,     Stage::pretrain,   Stage::uda_train, Stage::pseudo_label,
                                       Stage::self_train,   Stage::soup,       Stage::eval};

inline std::string to_string(Stage s) {
    switch (s) {
        case Stage::gen_data: return "gen-data";
        case Stage::pretrain: return "pretrain";
        case Stage::uda_train: return "uda-train";
        case Stage::pseudo_label: return "pseudo-label";
        case Stage::self_train: return "self-train";
        case Stage::soup: return "soup";
        case Stage::eval: return "eval";
    }
    return "?";
}

inline Stage parse_stage(const std::string& s) {
    for (auto st : kAllStages)
        if (to_string(st) == s) return st;
    throw Error("unknown stage '" + s + "'");
}

/// Stage seeds: derive_seed(global seed, FNV-1a of the stage key).
inline std::uint64_t stage_seed(const PipelineConfig& c, const std::string& key) {
    return derive_seed(c.seed, hash_string(key));
}

/// Artifact locations under the run directory.
struct RunLayout {
    fs::path root;

    fs::path source() const { return root / "data" / "source"; }
    fs::path target_train() const { return root / "data" / "target_train"; }
    fs::path target_heldout() const { return root / "data" / "target_heldout"; }
    fs::path target_test() const { return root / "data" / "target_test"; }
    fs::path encoder() const { return root / "ckpt" / "encoder.ckpt"; }
    fs::path g_init() const { return root / "ckpt" / "g_init.ckpt"; }
    fs::path aug(AugmentKind k) const { return root / "ckpt" / (aug_tag(k) + ".ckpt"); }
    fs::path soup() const { return root / "ckpt" / "soup.ckpt"; }
    fs::path pseudo_train() const { return root / "pseudo" / "train"; }
    fs::path pseudo_heldout() const { return root / "pseudo" / "heldout"; }
    fs::path report() const { return root / "reports" / "report.txt"; }
    fs::path soup_report() const { return root / "reports" / "soup.txt"; }
    fs::path metrics(const std::string& tag) const { return root / "reports" / (tag + ".metrics.txt"); }
    fs::path config() const { return root / "config.ini"; }
    fs::path manifest() const { return root / "manifest.txt"; }
};

/// Per-artifact hashes, per-stage wall-clock seconds and metric snapshots.
/// Relative paths are keys. The only run file that is not deterministic.
struct RunManifest {
    struct Artifact {
        std::string stage;
        std::uint64_t hash = 0;
    };
    std::map<std::string, Artifact> artifacts;
    std::map<std::string, double> seconds;
    std::map<std::string, std::string> metrics;

    std::string serialize() const {
        std::ostringstream o;
        o << "sia-run 1\n";
        for (const auto& [p, a] : artifacts) o << "artifact " << p << " " << hex64(a.hash) << " " << a.stage << "\n";
        for (const auto& [s, t] : seconds) o << "time " << s << " " << format_double(t) << "\n";
        for (const auto& [k, v] : metrics) o << "metric " << k << " " << v << "\n";
        return o.str();
    }

    static RunManifest parse(const std::string& text) {
        RunManifest m;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            const auto parts = split(trim(line), ' ');
            if (parts.size() == 4 && parts[0] == "artifact") {
                m.artifacts[parts[1]] = {parts[3], std::stoull(parts[2], nullptr, 16)};
            } else if (parts.size() == 3 && parts[0] == "time") {
                m.seconds[parts[1]] = parse_double(parts[2]);
            } else if (parts.size() == 3 && parts[0] == "metric") {
                m.metrics[parts[1]] = parts[2];
            }
        }
        return m;
    }
};

struct StageOptions {
    std::optional<AugmentKind> aug;  // self-train: one augmentation only
    unsigned threads = 1;
};

class Pipeline {
public:
    explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)), layout_{cfg_.out_dir}, net_(cfg_.model) {
        const auto v = cfg_.violations();
        if (!v.empty()) throw ConfigError(v);
        if (fs::exists(layout_.manifest())) manifest_ = RunManifest::parse(read_text_file(layout_.manifest().string()));
    }

    const PipelineConfig& config() const { return cfg_; }
    const RunLayout& layout() const { return layout_; }
    const SegNet& net() const { return net_; }
    const RunManifest& manifest() const { return manifest_; }

    void run(Stage s, const StageOptions& opt = {}) {
        const auto t0 = std::chrono::steady_clock::now();
        fs::create_directories(layout_.root);
        write_file_atomic(layout_.config(), serialize_config(cfg_));
        switch (s) {
            case Stage::gen_data: gen_data(opt); break;
            case Stage::pretrain: pretrain(opt); break;
            case Stage::uda_train: uda_train(opt); break;
            case Stage::pseudo_label: pseudo_label(opt); break;
            case Stage::self_train: self_train_stage(opt); break;
            case Stage::soup: soup_stage(opt); break;
            case Stage::eval: eval_stage(opt); break;
        }
        std::string key = to_string(s);
        if (s == Stage::self_train && opt.aug) key += "." + aug_tag(*opt.aug);
        manifest_.seconds[key] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_file_atomic(layout_.manifest(), manifest_.serialize());
    }

    void run_all(unsigned threads = 1) {
        StageOptions opt;
        opt.threads = threads;
        for (auto s : kAllStages) run(s, opt);
    }

    /// Held-out, fine-tuned and soup rows of the eval report, in order.
    static std::vector<std::string> report_rows() {
        return {"UDA", aug_display_name(AugmentKind::photometric), aug_display_name(AugmentKind::gauss_noise),
                aug_display_name(AugmentKind::grid_shuffle), "Model Soup"};
    }

private:
    std::string rel(const fs::path& p) const { return fs::relative(p, layout_.root).generic_string(); }

    void record(const fs::path& file, Stage s) {
        manifest_.artifacts[rel(file)] = {to_string(s), hash_file(file)};
    }

    // Fails when an input is missing or differs from the hash recorded when
    // it was produced.
    void require(const fs::path& file, Stage producer, const std::string& hint = "") const {
        if (!fs::exists(file))
            throw Error("missing " + rel(file) + "; run the '" + to_string(producer) + "' stage" + hint + " first");
        auto it = manifest_.artifacts.find(rel(file));
        if (it != manifest_.artifacts.end() && it->second.hash != hash_file(file))
            throw Error(rel(file) + " changed since the '" + it->second.stage + "' stage wrote it; rerun that stage");
    }

    Dataset load_data(const fs::path& dir) const {
        require(dir / "manifest.txt", Stage::gen_data);
        return load_dataset(dir);
    }

    Checkpoint load_ckpt(const fs::path& p, Stage producer, const std::string& hint = "") const {
        require(p, producer, hint);
        return load_checkpoint(p);
    }

    static std::string aug_hint(AugmentKind k) { return " with --aug " + to_string(k) + " (" + aug_tag(k) + ")"; }

    void gen_data(const StageOptions& o) {
        const std::size_t held = cfg_.heldout_size(), train = cfg_.target_train_size - held;
        const auto tseed = stage_seed(cfg_, "data.target");
        const std::pair<fs::path, Dataset> sets[] = {
            {layout_.source(), gen_dataset(cfg_.source, cfg_.source_size, stage_seed(cfg_, "data.source"), o.threads)},
            {layout_.target_train(), gen_dataset(cfg_.target, train, tseed, o.threads, 0)},
            {layout_.target_heldout(), gen_dataset(cfg_.target, held, tseed, o.threads, train)},
            {layout_.target_test(), gen_dataset(cfg_.target, cfg_.target_test_size, stage_seed(cfg_, "data.test"), o.threads)},
        };
        for (const auto& [dir, d] : sets) {
            write_dataset(dir, d);
            record(dir / "manifest.txt", Stage::gen_data);
        }
    }

    void pretrain(const StageOptions& o) {
        PriorSpec prior = cfg_.prior_spec;
        if (cfg_.prior == PriorChoice::none) prior.iterations = 0;
        Checkpoint enc = pretrain_encoder(net_, prior, stage_seed(cfg_, "pretrain"), o.threads);
        enc.metadata["prior"] = to_string(cfg_.prior);
        save_checkpoint(layout_.encoder(), enc);
        record(layout_.encoder(), Stage::pretrain);
        if (auto a = enc.metadata.find("metric.prior_accuracy"); a != enc.metadata.end())
            manifest_.metrics["pretrain.prior_accuracy"] = a->second;
    }

    void uda_train(const StageOptions& o) {
        const auto enc = load_ckpt(layout_.encoder(), Stage::pretrain);
        const auto src = load_data(layout_.source());
        const auto tgt = load_data(layout_.target_train());
        UdaConfig u = cfg_.uda;
        u.seed = stage_seed(cfg_, "uda");
        const auto g = run_uda(net_, src.samples, tgt.samples, enc, u, o.threads);
        save_checkpoint(layout_.g_init(), g);
        record(layout_.g_init(), Stage::uda_train);
    }

    void pseudo_label(const StageOptions& o) {
        const auto g = load_ckpt(layout_.g_init(), Stage::uda_train);
        const std::pair<fs::path, fs::path> jobs[] = {{layout_.target_train(), layout_.pseudo_train()},
                                                      {layout_.target_heldout(), layout_.pseudo_heldout()}};
        for (const auto& [data_dir, out_dir] : jobs) {
            const auto d = load_data(data_dir);
            const auto s = generate_pseudo_labels(net_, g, d, out_dir, cfg_.pseudo_tau, cfg_.pseudo_confidence, o.threads);
            record(out_dir / "manifest.txt", Stage::pseudo_label);
            double kept = 0;
            for (const auto& m : s.maps) kept += m.retained_fraction;
            manifest_.metrics["pseudo." + out_dir.filename().string() + ".retained_fraction"] =
                format_double(kept / static_cast<double>(s.size()));
        }
    }

    void self_train_stage(const StageOptions& o) {
        const auto g = load_ckpt(layout_.g_init(), Stage::uda_train);
        require(layout_.pseudo_train() / "manifest.txt", Stage::pseudo_label);
        const auto pseudo = load_pseudo_labels(layout_.pseudo_train());
        const auto tgt = load_data(layout_.target_train());
        std::vector<AugmentKind> kinds;
        if (o.aug) kinds.push_back(*o.aug);
        else kinds.assign(std::begin(kAllAugments), std::end(kAllAugments));
        for (auto k : kinds) {
            SelfTrainConfig sc = selftrain_for(cfg_, k);
            sc.seed = stage_seed(cfg_, "selftrain." + aug_tag(k));
            const auto ck = self_train(net_, g, tgt, pseudo, sc, o.threads);
            save_checkpoint(layout_.aug(k), ck);
            record(layout_.aug(k), Stage::self_train);
        }
    }

    std::vector<SoupIngredient> ingredients() const {
        std::vector<SoupIngredient> items;
        items.push_back({"g_init", load_ckpt(layout_.g_init(), Stage::uda_train)});
        for (auto k : kAllAugments) items.push_back({aug_tag(k), load_ckpt(layout_.aug(k), Stage::self_train, aug_hint(k))});
        return items;
    }

    void soup_stage(const StageOptions& o) {
        soup_checkpoints(ingredients(), cfg_.evaluator, layout_.soup(), layout_.soup_report(), o.threads);
    }

public:
    /// Greedy soup of arbitrary ingredients scored on the held-out split;
    /// writes the soup checkpoint and a text summary.
    SoupResult soup_checkpoints(const std::vector<SoupIngredient>& items, EvaluatorChoice evaluator,
                                const fs::path& ckpt_path, const fs::path& report_path, unsigned threads = 1) {
        const auto held = load_data(layout_.target_heldout());
        SoupEvaluator ev;
        switch (evaluator) {
            case EvaluatorChoice::consensus: {
                std::vector<const ParamSet<float>*> models;
                for (const auto& it : items) models.push_back(&it.ckpt.params);
                ev = label_evaluator(net_, held.samples, consensus_labels(net_, models, held.samples, cfg_.consensus_tau, threads),
                                     threads);
                break;
            }
            case EvaluatorChoice::pseudo: {
                require(layout_.pseudo_heldout() / "manifest.txt", Stage::pseudo_label);
                auto pl = load_pseudo_labels(layout_.pseudo_heldout());
                if (pl.ids != held.ids) throw Error("held-out pseudo-labels do not match the held-out split; rerun pseudo-label");
                std::vector<Tensor<std::uint8_t>> labels;
                for (auto& m : pl.maps) labels.push_back(std::move(m.labels));
                ev = label_evaluator(net_, held.samples, std::move(labels), threads);
                break;
            }
            case EvaluatorChoice::ground_truth: ev = ground_truth_evaluator(net_, held.samples, threads); break;
        }
        const auto r = greedy_soup(items, ev, threads);

        Checkpoint out;
        out.params = r.params;
        out.metadata["stage"] = "soup";
        out.metadata["evaluator"] = to_string(evaluator);
        std::string sel, traj;
        for (std::size_t i = 0; i < r.selected.size(); ++i) {
            sel += (i ? "," : "") + r.selected[i];
            traj += (i ? "," : "") + format_double(r.trajectory[i]);
        }
        out.metadata["selected"] = sel;
        out.metadata["trajectory"] = traj;
        for (const auto& [id, s] : r.individual) out.metadata["metric.heldout." + id] = format_double(s);
        out.metadata["metric.heldout.soup"] = format_double(r.trajectory.back());
        save_checkpoint(ckpt_path, out);
        record(ckpt_path, Stage::soup);

        std::ostringstream rep;
        rep << "evaluator " << to_string(evaluator) << "\n";
        for (const auto& [id, s] : r.individual) rep << "score " << id << " " << format_double(s) << "\n";
        rep << "selected " << sel << "\n";
        rep << "trajectory " << traj << "\n";
        rep << "soup " << format_double(r.trajectory.back()) << "\n";
        write_file_atomic(report_path, rep.str());
        record(report_path, Stage::soup);
        manifest_.metrics["soup.heldout"] = format_double(r.trajectory.back());
        write_file_atomic(layout_.manifest(), manifest_.serialize());
        return r;
    }

    /// Ground-truth report of one checkpoint on the target test split.
    EvalReport evaluate_on_test(const ParamSet<float>& params, unsigned threads = 1) const {
        return evaluate(net_, params, load_data(layout_.target_test()).samples, threads);
    }

private:

    void eval_stage(const StageOptions& o) {
        auto items = ingredients();
        items.push_back({"soup", load_ckpt(layout_.soup(), Stage::soup)});
        const auto test = load_data(layout_.target_test());
        const auto names = report_rows();
        std::vector<NamedReport> rows;
        for (std::size_t i = 0; i < items.size(); ++i) {
            const auto rep = evaluate(net_, items[i].ckpt.params, test.samples, o.threads);
            write_file_atomic(layout_.metrics(items[i].id), report_kv(rep));
            record(layout_.metrics(items[i].id), Stage::eval);
            manifest_.metrics["test." + items[i].id + ".miou"] = format_double(rep.miou);
            rows.push_back({names[i], rep});
        }
        write_file_atomic(layout_.report(), emit_report(rows));
        record(layout_.report(), Stage::eval);
    }

    PipelineConfig cfg_;
    RunLayout layout_;
    SegNet net_;
    RunManifest manifest_;
};

}  // namespace sia
