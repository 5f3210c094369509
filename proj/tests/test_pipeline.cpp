#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <set>
#include <sys/wait.h>
#include <fstream>
#include <sstream>

#include "cmtf/error.hpp"
#include "cmtf/pipeline/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cmtf::pipeline;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("cmtf_pipeline_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

// Small planted-news dataset with a config sized for a quick run.
PipelineConfig small_config(const fs::path& dir, int days = 320) {
    PipelineConfig base;
    base.seed = 3;
    base.synth.days = days;
    base.synth.tickers = 3;
    write_synthetic(base.synth, base, dir);
    auto cfg = load_config(dir / "config.json");
    cfg.selection.window = 30;
    cfg.selection.folds = 3;
    cfg.model.epochs = 3;
    cfg.model.d_model = 8;
    cfg.model.d_ffn = 16;
    cfg.search.trials = 2;
    cfg.output_dir = dir / "out";
    return cfg;
}

#ifdef CMTF_TOOL_PATH
int run_tool(const std::string& args) {
    const std::string cmd = std::string(CMTF_TOOL_PATH) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}
#endif

}  // namespace

TEST_CASE("config json round trip and validation") {
    PipelineConfig c;
    c.seed = 4;
    const auto j = to_json(c);
    CHECK(to_json(config_from_json(j)) == j);
    CHECK(config_hash(config_from_json(j)) == config_hash(c));
    auto bad = j;
    bad["schema_version"] = 99;
    CHECK_THROWS_AS(config_from_json(bad), cmtf::ConfigError);
    bad = j;
    bad["surprise"] = 1;
    CHECK_THROWS_AS(config_from_json(bad), cmtf::ConfigError);
    PipelineConfig s = c;
    s.split.train = 0.5;
    CHECK_THROWS_AS(s.validate(), cmtf::ConfigError);
    PipelineConfig noseed;
    CHECK_THROWS_AS(noseed.validate(), cmtf::ConfigError);
    PipelineConfig other = c;
    other.output_dir = "elsewhere";
    other.parallelism = 4;
    CHECK(config_hash(other) == config_hash(c));
    other.seed = 5;
    CHECK(config_hash(other) != config_hash(c));
}

TEST_CASE("missing upstream artifact names the producing stage") {
    const auto dir = fresh_dir("missing");
    auto cfg = small_config(dir);
    try {
        run_stage(Stage::Select, cfg);
        FAIL("expected PipelineError");
    } catch (const cmtf::PipelineError& e) {
        CHECK(std::string(e.what()).find("encode") != std::string::npos);
    }
    CHECK_THROWS_AS(run_stage(Stage::Evaluate, cfg), cmtf::PipelineError);
    cfg.data.prices = dir / "nope.csv";
    CHECK_THROWS_AS(run_stage(Stage::Ingest, cfg), cmtf::ConfigError);
}

TEST_CASE("full pipeline writes a complete manifest") {
    const auto dir = fresh_dir("full");
    const auto cfg = small_config(dir);
    const auto results = run_pipeline(cfg);
    CHECK(results.size() == 6);
    for (const auto& r : results)
        for (const auto& p : r.outputs) CHECK(fs::exists(p));
    const auto m = load_manifest(cfg.output_dir);
    CHECK(m["config_hash"] == config_hash(cfg));
    CHECK(m["seed"] == 3);
    for (const char* s : {"ingest", "encode", "select", "train", "evaluate", "report"}) CHECK(m["stages"].contains(s));
    const auto report =
        cmtf::eval::eval_report_from_json(nlohmann::json::parse(slurp(cfg.output_dir / "evaluate" / "eval_report.json")));
    CHECK(report.models.size() == 3);
    CHECK(report.metadata["seed"] == 3);
    CHECK(report.metadata.contains("splits"));
    const std::string csv = slurp(cfg.output_dir / "report" / "report.csv");
    CHECK(csv.find("zero_change") != std::string::npos);
}

TEST_CASE("tune stage writes a study and a retrained checkpoint") {
    const auto dir = fresh_dir("tune");
    const auto cfg = small_config(dir);
    for (Stage s : {Stage::Ingest, Stage::Encode, Stage::Select, Stage::Tune}) run_stage(s, cfg);
    const auto study = cmtf::hpo::study_from_json(nlohmann::json::parse(slurp(cfg.output_dir / "tune" / "study.json")));
    CHECK(study.trials.size() == 2);
    CHECK(fs::exists(cfg.output_dir / "train" / "checkpoint.json"));
    CHECK_NOTHROW(run_stage(Stage::Evaluate, cfg));
}

TEST_CASE("without interpretation every encoded column passes through") {
    const auto dir = fresh_dir("no_interp");
    auto cfg = small_config(dir);
    cfg.ablation.use_interpretation = false;
    for (Stage s : {Stage::Ingest, Stage::Encode, Stage::Select}) run_stage(s, cfg);
    const auto enc = load_encoded(cfg.output_dir);
    CHECK(load_selected_features(cfg.output_dir) == enc.frame.names());
}

TEST_CASE("without news and reports only price and macro columns remain") {
    const auto dir = fresh_dir("no_nr");
    auto cfg = small_config(dir);
    cfg.ablation.use_news = false;
    cfg.ablation.use_reports = false;
    for (Stage s : {Stage::Ingest, Stage::Encode, Stage::Select}) run_stage(s, cfg);
    const auto enc = load_encoded(cfg.output_dir);
    for (const auto& n : enc.frame.names()) {
        CHECK(n.find(".news.") == std::string::npos);
        CHECK(n.find(".report.") == std::string::npos);
    }
    for (const auto& n : load_selected_features(cfg.output_dir)) CHECK(n.find(".news.") == std::string::npos);
}

TEST_CASE("perturbing test-range prices leaves select and train outputs unchanged") {
    const auto da = fresh_dir("leak_a"), db = fresh_dir("leak_b");
    const auto a = small_config(da);
    auto b = small_config(db);
    auto prices = cmtf::ingest::load_prices(b.data.prices);
    const auto splits = cmtf::ingest::split_chronological(prices.front().rows.size(), b.split);
    for (auto& s : prices)
        for (std::size_t t = splits.test.begin + 1; t < s.rows.size(); ++t) {
            s.rows[t].close *= 1.5;
            s.rows[t].high *= 1.5;
            s.rows[t].open = std::min(s.rows[t].open, s.rows[t].high);
        }
    cmtf::ingest::save_prices(b.data.prices, prices);
    for (Stage s : {Stage::Ingest, Stage::Encode, Stage::Select, Stage::Train, Stage::Evaluate}) {
        run_stage(s, a);
        run_stage(s, b);
    }
    CHECK(slurp(a.output_dir / "select" / "selection.json") == slurp(b.output_dir / "select" / "selection.json"));
    CHECK(slurp(a.output_dir / "train" / "checkpoint.json") == slurp(b.output_dir / "train" / "checkpoint.json"));
    CHECK(slurp(a.output_dir / "evaluate" / "eval_report.json") != slurp(b.output_dir / "evaluate" / "eval_report.json"));
}

TEST_CASE("identical configs give byte-identical outputs") {
    const auto dir = fresh_dir("det");
    const auto a = small_config(dir);
    auto b = a;
    b.output_dir = dir / "out_again";
    run_pipeline(a);
    run_pipeline(b);
    for (const char* f : {"encode/frame.csv", "select/selection.json", "train/checkpoint.json", "train/history.json",
                          "evaluate/eval_report.json", "evaluate/predictions.csv"}) {
        CHECK_MESSAGE(slurp(a.output_dir / f) == slurp(b.output_dir / f), f);
    }
}

TEST_CASE("walk-forward evaluation retrains on a schedule") {
    const auto dir = fresh_dir("walk");
    auto cfg = small_config(dir);
    cfg.retrain_period_days = 21;
    run_pipeline(cfg);
    const auto j = nlohmann::json::parse(slurp(cfg.output_dir / "evaluate" / "eval_report.json"));
    CHECK(j["metadata"]["retrain_period_days"] == 21);
}

TEST_CASE("ablation matrix has eight cells with isolated modalities") {
    const auto dir = fresh_dir("ablate");
    auto cfg = small_config(dir, 260);
    cfg.parallelism = 2;
    const auto cells = ablation_matrix(cfg);
    REQUIRE(cells.size() == 8);
    std::set<std::string> labels;
    for (const auto& c : cells) labels.insert(c.flags.label());
    CHECK(labels.size() == 8);
    const std::string csv = slurp(dir / "out" / "ablate" / "ablation.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
    // Cells that differ only in news share their non-news columns.
    const auto with = load_encoded(dir / "out" / "ablate" / "cell_+I+N+R");
    const auto without = load_encoded(dir / "out" / "ablate" / "cell_+I-N+R");
    const auto wn = with.frame.names(), won = without.frame.names();
    for (std::size_t j = 0; j < won.size(); ++j) {
        const auto it = std::find(wn.begin(), wn.end(), won[j]);
        REQUIRE(it != wn.end());
        const auto k = static_cast<Eigen::Index>(it - wn.begin());
        CHECK(with.frame.matrix.col(k) == without.frame.matrix.col(static_cast<Eigen::Index>(j)));
    }
}

#ifdef CMTF_TOOL_PATH
TEST_CASE("command line exit codes") {
    const auto dir = fresh_dir("cli");
    CHECK(run_tool("--bogus") == 2);
    CHECK(run_tool("synth --out " + dir.string()) == 2);  // no seed
    CHECK(run_tool("synth --seed 2 --days 300 --tickers 2 --out " + dir.string()) == 0);
    CHECK(fs::exists(dir / "config.json"));
    const std::string cfg = "--config " + (dir / "config.json").string();
    CHECK(run_tool("evaluate " + cfg) == 3);
    CHECK(run_tool("ingest " + cfg) == 0);
    CHECK(fs::exists(dir / "out" / "ingest" / "prices.csv"));
    std::ofstream(dir / "broken.json") << "{\"schema_version\": 1, \"nope\": 2}";
    CHECK(run_tool("ingest --config " + (dir / "broken.json").string()) == 2);
    std::ofstream(dir / "prices_bad.csv") << "date,ticker,open,high,low,close,volume\n2020-01-02,A,1,1,1,-1,5\n";
    std::ofstream(dir / "bad.json") << "{\"schema_version\": 1, \"seed\": 1, \"data\": {\"prices\": \"prices_bad.csv\"}}";
    CHECK(run_tool("ingest --config " + (dir / "bad.json").string()) == 3);
}
#endif
