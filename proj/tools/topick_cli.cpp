#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "topick/error.hpp"
#include "topick/kernels.hpp"
#include "topick/pipeline.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"topick: topic-coverage demonstration selection for in-context learning"};
    app.require_subcommand(1, 1);

    std::string config_path;
    int threads = 0;
    std::optional<std::uint64_t> seed;
    bool explain = false;
    std::string variant = "full";

    app.add_option("--config", config_path, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    app.add_option("--threads", threads, "worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
    app.add_option("--seed", seed, "overrides train.seed");

    const char* help[] = {
        "mine candidate topic phrases from the demonstrations",
        "identify core topics and soft labels for every demonstration",
        "train the topic predictor",
        "estimate topical knowledge from zero-shot outcomes",
        "select K demonstrations for each test input",
        "topic coverage and redundancy report for one variant",
    };
    std::size_t i = 0;
    for (const char* stage : topick::kStages) {
        auto* sub = app.add_subcommand(stage, help[i++]);
        sub->fallthrough();
        if (std::string(stage) == "retrieve") {
            sub->add_flag("--explain", explain, "add per-step topic contributions to retrieve.jsonl");
        }
        if (std::string(stage) == "eval") {
            sub->add_option("--variant", variant, "full | no_core_topic | no_soft_label | no_cumulative");
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 3;
    }

    const std::string stage = app.get_subcommands().front()->get_name();
    try {
        auto cfg = topick::PipelineConfig::load(config_path);
        if (seed) cfg.train.seed = *seed;
        topick::StageOptions opt;
        opt.explain = explain;
        opt.variant = topick::parse_variant(variant);
        topick::kernels::set_threads(threads);
        topick::run_stage(stage, cfg, opt, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "topick " << stage << ": " << e.what() << "\n";
        return topick::exit_code_for(e);
    }
    return 0;
}
