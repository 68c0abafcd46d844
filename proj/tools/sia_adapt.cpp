// sia_adapt: command-line front end for the adaptation pipeline.
//
//   sia_adapt pipeline --config run.ini --out runs/a --threads 4
//   sia_adapt self-train --config run.ini --aug grid_shuffle
//   sia_adapt soup --config run.ini --ckpt a.ckpt --ckpt b.ckpt --evaluator ground_truth
//
// On failure a single JSON line {"error": ..., "command": ...} goes to stderr
// and the exit code is 1.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sia/pipeline/pipeline.hpp"

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    unsigned threads = 1;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "pipeline config file (defaults when omitted)")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "global seed, overrides [run] seed");
    app->add_option("--out", c.out, "run directory, overrides [run] out_dir");
    app->add_option("--threads", c.threads, "worker threads")->check(CLI::Range(1u, 256u));
}

sia::PipelineConfig resolve(const Common& c) {
    sia::PipelineConfig cfg = c.config.empty() ? sia::PipelineConfig{} : sia::load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.out_dir = c.out;
    return cfg;
}

int fail(const std::string& command, const std::string& message) {
    nlohmann::json j{{"error", message}, {"command", command}};
    std::cerr << j.dump() << "\n";
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-training domain adaptation with greedy model soups on synthetic segmentation data"};
    app.require_subcommand(1);
    Common common;

    struct Sub {
        sia::Stage stage;
        CLI::App* app;
    };
    std::vector<Sub> stages;
    for (auto s : sia::kAllStages) {
        auto* sub = app.add_subcommand(sia::to_string(s));
        add_common(sub, common);
        stages.push_back({s, sub});
    }
    stages[static_cast<std::size_t>(sia::Stage::gen_data)].app->description("generate source, target and test datasets");
    stages[static_cast<std::size_t>(sia::Stage::pretrain)].app->description("pretrain the encoder on the prior task");
    stages[static_cast<std::size_t>(sia::Stage::uda_train)].app->description("train the initial adaptive model");
    stages[static_cast<std::size_t>(sia::Stage::pseudo_label)].app->description("write thresholded target pseudo-labels");
    stages[static_cast<std::size_t>(sia::Stage::self_train)].app->description("augmentation-specific fine-tuning");
    stages[static_cast<std::size_t>(sia::Stage::soup)].app->description("greedy soup of the fine-tuned models");
    stages[static_cast<std::size_t>(sia::Stage::eval)].app->description("evaluate on the target test split");

    std::string aug;
    stages[static_cast<std::size_t>(sia::Stage::self_train)]
        .app->add_option("--aug", aug, "photometric, gauss_noise or grid_shuffle (default: all three)");

    std::vector<std::string> soup_ckpts;
    std::string evaluator, soup_output;
    auto* soup_app = stages[static_cast<std::size_t>(sia::Stage::soup)].app;
    soup_app->add_option("--ckpt", soup_ckpts, "ingredient checkpoints (default: g_init and aug_a/b/c of the run)")
        ->check(CLI::ExistingFile);
    soup_app->add_option("--evaluator", evaluator, "consensus, pseudo or ground_truth (overrides [soup] evaluator)");
    soup_app->add_option("--output", soup_output, "soup checkpoint path when --ckpt is given");

    std::string eval_ckpt;
    stages[static_cast<std::size_t>(sia::Stage::eval)]
        .app->add_option("--ckpt", eval_ckpt, "evaluate this checkpoint only")
        ->check(CLI::ExistingFile);

    auto* pipe = app.add_subcommand("pipeline", "run every stage in order");
    add_common(pipe, common);
    std::string stage_only;
    pipe->add_option("--stage-only", stage_only, "run a single stage");

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        auto cfg = resolve(common);
        if (!evaluator.empty()) cfg.evaluator = sia::parse_evaluator(evaluator);
        sia::Pipeline p(cfg);
        sia::StageOptions opt;
        opt.threads = common.threads;

        if (command == "pipeline") {
            if (!stage_only.empty()) {
                p.run(sia::parse_stage(stage_only), opt);
            } else {
                p.run_all(common.threads);
                std::cout << sia::read_text_file(p.layout().report().string());
            }
            return 0;
        }

        const auto stage = sia::parse_stage(command);
        if (stage == sia::Stage::self_train && !aug.empty()) opt.aug = sia::parse_augment_kind(aug);

        if (stage == sia::Stage::soup && !soup_ckpts.empty()) {
            std::vector<sia::SoupIngredient> items;
            for (const auto& path : soup_ckpts)
                items.push_back({sia::fs::path(path).stem().string(), sia::load_checkpoint(path)});
            const sia::fs::path out = soup_output.empty() ? p.layout().soup() : sia::fs::path(soup_output);
            const auto summary = out.parent_path() / (out.stem().string() + ".txt");
            p.soup_checkpoints(items, cfg.evaluator, out, summary, common.threads);
            std::cout << sia::read_text_file(summary.string());
            return 0;
        }

        if (stage == sia::Stage::eval && !eval_ckpt.empty()) {
            const auto ck = sia::load_checkpoint(eval_ckpt);
            const auto rep = p.evaluate_on_test(ck.params, common.threads);
            std::cout << sia::emit_report({{sia::fs::path(eval_ckpt).stem().string(), rep}});
            return 0;
        }

        p.run(stage, opt);
        if (stage == sia::Stage::eval) std::cout << sia::read_text_file(p.layout().report().string());
        if (stage == sia::Stage::soup) std::cout << sia::read_text_file(p.layout().soup_report().string());
        return 0;
    } catch (const std::exception& e) {
        return fail(command, e.what());
    }
}
