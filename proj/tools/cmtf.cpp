#include <CLI11.hpp>
#include <iostream>

#include "cmtf/error.hpp"
#include "cmtf/log.hpp"
#include "cmtf/pipeline/pipeline.hpp"

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> parallelism;
    std::string out;
};

struct TuneFlags {
    std::optional<int> trials;
    std::string pruner;
};

struct SynthFlags {
    std::string kind;
    std::optional<int> tickers;
    std::optional<int> days;
};

cmtf::pipeline::PipelineConfig make_config(const Globals& g, const TuneFlags& tf, const SynthFlags& sf) {
    using namespace cmtf::pipeline;
    PipelineConfig cfg = g.config.empty() ? PipelineConfig{} : load_config(g.config);
    if (g.seed) cfg.seed = *g.seed;
    if (g.parallelism) cfg.parallelism = *g.parallelism;
    if (!g.out.empty()) cfg.output_dir = g.out;
    if (tf.trials) cfg.search.trials = *tf.trials;
    if (!tf.pruner.empty()) cfg.search.pruner.kind = cmtf::hpo::parse_pruner(tf.pruner);
    if (!sf.kind.empty()) cfg.synth.kind = parse_synth_kind(sf.kind);
    if (sf.tickers) cfg.synth.tickers = *sf.tickers;
    if (sf.days) cfg.synth.days = *sf.days;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-modal tensor fusion forecasting pipeline"};
    app.require_subcommand(1);
    Globals g;
    TuneFlags tf;
    SynthFlags sf;
    app.add_option("--config", g.config, "pipeline config JSON")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "random seed (overrides the config)");
    app.add_option("--parallelism", g.parallelism, "concurrent trials / ablation cells")->check(CLI::PositiveNumber);
    app.add_option("--out", g.out, "output directory");

    const std::vector<std::pair<const char*, const char*>> stages = {
        {"ingest", "validate and clean the raw CSV files"},
        {"encode", "fuse modalities onto the trading-day grid and scale"},
        {"select", "correlation filter + group LASSO stability selection"},
        {"train", "train the transformer forecaster"},
        {"tune", "TPE hyperparameter search, then retrain the best config"},
        {"evaluate", "score the forecaster and baselines on the test range"},
        {"report", "write the comparison table"},
        {"ablate", "run the 8-cell I/N/R ablation grid"},
        {"synth", "generate a synthetic dataset and config"}};
    for (const auto& [name, desc] : stages) {
        auto* sub = app.add_subcommand(name, desc);
        sub->fallthrough();
        if (std::string_view(name) == "tune") {
            sub->add_option("--trials", tf.trials, "number of trials")->check(CLI::PositiveNumber);
            sub->add_option("--pruner", tf.pruner, "ratio, halving or none");
        }
        if (std::string_view(name) == "synth") {
            sub->add_option("--kind", sf.kind, "planted-news or random-walk");
            sub->add_option("--tickers", sf.tickers, "number of stocks");
            sub->add_option("--days", sf.days, "number of trading days");
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        cmtf::log::init_from_env();
        const auto cfg = make_config(g, tf, sf);
        const auto stage = cmtf::pipeline::parse_stage(app.get_subcommands().front()->get_name());
        const auto result = cmtf::pipeline::run_stage(stage, cfg);
        for (const auto& p : result.outputs) std::cout << p.string() << '\n';
    } catch (const cmtf::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
