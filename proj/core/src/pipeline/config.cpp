#include "cmtf/pipeline/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "cmtf/error.hpp"

namespace cmtf::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string AblationFlags::label() const {
    std::string s;
    s += use_interpretation ? "+I" : "-I";
    s += use_news ? "+N" : "-N";
    s += use_reports ? "+R" : "-R";
    return s;
}

std::string to_string(SynthKind k) { return k == SynthKind::PlantedNews ? "planted-news" : "random-walk"; }

SynthKind parse_synth_kind(std::string_view s) {
    if (s == "planted-news") return SynthKind::PlantedNews;
    if (s == "random-walk") return SynthKind::RandomWalk;
    throw ConfigError("unknown synthetic dataset kind '" + std::string(s) + "' (expected planted-news or random-walk)");
}

void PipelineConfig::validate() const {
    if (schema_version != kSchemaVersion) {
        throw ConfigError("config schema_version " + std::to_string(schema_version) + " is not supported (expected " +
                          std::to_string(kSchemaVersion) + ")");
    }
    if (wma.window < 1) throw ConfigError("wma.window must be >= 1");
    selection.validate();
    model.validate();
    search.space.validate();
    search.pruner.validate();
    if (search.trials < 1) throw ConfigError("search.trials must be positive");
    for (double r : {split.train, split.validation, split.test}) {
        if (!(r > 0.0 && r < 1.0)) throw ConfigError("split ratios must lie in (0, 1)");
    }
    if (std::abs(split.train + split.validation + split.test - 1.0) > 1e-9) {
        throw ConfigError("split ratios must sum to 1");
    }
    if (retrain_period_days < 0) throw ConfigError("retrain_period_days must be non-negative");
    if (parallelism < 1) throw ConfigError("parallelism must be positive");
    if (synth.tickers < 1 || synth.days < 10) throw ConfigError("synth needs at least 1 ticker and 10 days");
    if (!seed) throw ConfigError("config has no seed; set \"seed\" or pass --seed");
}

std::uint64_t PipelineConfig::seed_value() const {
    if (!seed) throw ConfigError("config has no seed; set \"seed\" or pass --seed");
    return *seed;
}

namespace {

void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(std::string(section) + " must be an object");
    for (const auto& [key, v] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
    }
}

fs::path resolve(const json& v, const fs::path& base) {
    fs::path p = v.get<std::string>();
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return (base / p).lexically_normal();
}

}  // namespace

PipelineConfig config_from_json(const json& j, const fs::path& base_dir) {
    PipelineConfig c;
    try {
        check_keys(j, "config",
                   {"schema_version", "data", "wma", "selection", "model", "search", "ablation", "split",
                    "retrain_period_days", "synth", "seed", "parallelism", "output_dir"});
        if (!j.contains("schema_version")) throw ConfigError("config: missing schema_version");
        c.schema_version = j.at("schema_version").get<int>();
        if (c.schema_version != kSchemaVersion) {
            throw ConfigError("config schema_version " + std::to_string(c.schema_version) + " is not supported");
        }
        if (j.contains("data")) {
            const auto& d = j["data"];
            check_keys(d, "data", {"prices", "macro", "news", "reports"});
            if (d.contains("prices")) c.data.prices = resolve(d["prices"], base_dir);
            if (d.contains("macro")) c.data.macro = resolve(d["macro"], base_dir);
            if (d.contains("news")) c.data.news = resolve(d["news"], base_dir);
            if (d.contains("reports")) c.data.reports = resolve(d["reports"], base_dir);
        }
        if (j.contains("wma")) {
            check_keys(j["wma"], "wma", {"window"});
            c.wma.window = j["wma"].value("window", c.wma.window);
        }
        if (j.contains("selection")) {
            const auto& s = j["selection"];
            check_keys(s, "selection",
                       {"corr_threshold", "lag_order", "window", "alpha", "folds", "survival", "tol", "max_iter",
                        "parallel"});
            if (s.contains("corr_threshold")) {
                const auto& t = s["corr_threshold"];
                if (t.is_string()) {
                    if (t.get<std::string>() != "mean") {
                        throw ConfigError("selection.corr_threshold must be \"mean\" or a number");
                    }
                    c.selection.corr.threshold.reset();
                } else {
                    c.selection.corr.threshold = t.get<double>();
                }
            }
            c.selection.lag_order = s.value("lag_order", c.selection.lag_order);
            c.selection.window = s.value("window", c.selection.window);
            c.selection.alpha = s.value("alpha", c.selection.alpha);
            c.selection.folds = s.value("folds", c.selection.folds);
            c.selection.survival = s.value("survival", c.selection.survival);
            c.selection.tol = s.value("tol", c.selection.tol);
            c.selection.max_iter = s.value("max_iter", c.selection.max_iter);
            c.selection.parallel = s.value("parallel", c.selection.parallel);
        }
        if (j.contains("model")) c.model = forecast::transformer_config_from_json(j["model"], c.model);
        if (j.contains("search")) {
            const auto& s = j["search"];
            check_keys(s, "search",
                       {"trials", "pruner", "prune_gamma", "eta", "warmup", "min_resource", "n_startup",
                        "gamma_split", "n_ei", "space"});
            c.search.trials = s.value("trials", c.search.trials);
            if (s.contains("pruner")) c.search.pruner.kind = hpo::parse_pruner(s["pruner"].get<std::string>());
            c.search.pruner.gamma = s.value("prune_gamma", c.search.pruner.gamma);
            c.search.pruner.eta = s.value("eta", c.search.pruner.eta);
            c.search.pruner.warmup = s.value("warmup", c.search.pruner.warmup);
            c.search.pruner.min_resource = s.value("min_resource", c.search.pruner.min_resource);
            c.search.tpe.n_startup = s.value("n_startup", c.search.tpe.n_startup);
            c.search.tpe.gamma = s.value("gamma_split", c.search.tpe.gamma);
            c.search.tpe.n_ei = s.value("n_ei", c.search.tpe.n_ei);
            if (s.contains("space")) {
                static const std::set<std::string> known = {"d_model", "heads", "layers", "d_ffn",
                                                              "lr",      "batch", "epochs"};
                hpo::SearchSpace space;
                space.constraint = hpo::heads_divide_d_model;
                for (const auto& [name, values] : s["space"].items()) {
                    if (!known.count(name)) throw ConfigError("search.space: unknown dimension '" + name + "'");
                    space.dims.push_back({name, values.get<std::vector<double>>()});
                }
                c.search.space = std::move(space);
            }
        }
        if (j.contains("ablation")) {
            const auto& a = j["ablation"];
            check_keys(a, "ablation", {"use_interpretation", "use_news", "use_reports"});
            c.ablation.use_interpretation = a.value("use_interpretation", true);
            c.ablation.use_news = a.value("use_news", true);
            c.ablation.use_reports = a.value("use_reports", true);
        }
        if (j.contains("split")) {
            const auto& s = j["split"];
            check_keys(s, "split", {"train", "validation", "test"});
            c.split.train = s.value("train", c.split.train);
            c.split.validation = s.value("validation", c.split.validation);
            c.split.test = s.value("test", c.split.test);
        }
        c.retrain_period_days = j.value("retrain_period_days", c.retrain_period_days);
        if (j.contains("synth")) {
            const auto& s = j["synth"];
            check_keys(s, "synth", {"kind", "tickers", "days"});
            if (s.contains("kind")) c.synth.kind = parse_synth_kind(s["kind"].get<std::string>());
            c.synth.tickers = s.value("tickers", c.synth.tickers);
            c.synth.days = s.value("days", c.synth.days);
        }
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        c.parallelism = j.value("parallelism", c.parallelism);
        if (j.contains("output_dir")) c.output_dir = resolve(j["output_dir"], base_dir);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(j, path.parent_path());
}

json to_json(const PipelineConfig& c) {
    json data = json::object();
    if (!c.data.prices.empty()) data["prices"] = c.data.prices.string();
    if (!c.data.macro.empty()) data["macro"] = c.data.macro.string();
    if (!c.data.news.empty()) data["news"] = c.data.news.string();
    if (!c.data.reports.empty()) data["reports"] = c.data.reports.string();
    json space = json::object();
    for (const auto& d : c.search.space.dims) space[d.name] = d.values;
    json corr = c.selection.corr.threshold ? json(*c.selection.corr.threshold) : json("mean");
    json model = forecast::to_json(c.model);
    model.erase("seed");
    json out{{"schema_version", c.schema_version},
             {"data", data},
             {"wma", {{"window", c.wma.window}}},
             {"selection",
              {{"corr_threshold", corr},
               {"lag_order", c.selection.lag_order},
               {"window", c.selection.window},
               {"alpha", c.selection.alpha},
               {"folds", c.selection.folds},
               {"survival", c.selection.survival},
               {"tol", c.selection.tol},
               {"max_iter", c.selection.max_iter},
               {"parallel", c.selection.parallel}}},
             {"model", model},
             {"search",
              {{"trials", c.search.trials},
               {"pruner", hpo::to_string(c.search.pruner.kind)},
               {"prune_gamma", c.search.pruner.gamma},
               {"eta", c.search.pruner.eta},
               {"warmup", c.search.pruner.warmup},
               {"min_resource", c.search.pruner.min_resource},
               {"n_startup", c.search.tpe.n_startup},
               {"gamma_split", c.search.tpe.gamma},
               {"n_ei", c.search.tpe.n_ei},
               {"space", space}}},
             {"ablation",
              {{"use_interpretation", c.ablation.use_interpretation},
               {"use_news", c.ablation.use_news},
               {"use_reports", c.ablation.use_reports}}},
             {"split", {{"train", c.split.train}, {"validation", c.split.validation}, {"test", c.split.test}}},
             {"retrain_period_days", c.retrain_period_days},
             {"synth", {{"kind", to_string(c.synth.kind)}, {"tickers", c.synth.tickers}, {"days", c.synth.days}}},
             {"parallelism", c.parallelism},
             {"output_dir", c.output_dir.string()}};
    if (c.seed) out["seed"] = *c.seed;
    return out;
}

std::string config_hash(const PipelineConfig& c) {
    json j = to_json(c);
    j.erase("output_dir");
    j.erase("parallelism");
    const std::string s = j.dump();
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace cmtf::pipeline
