#include "cmtf/pipeline/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <mutex>
#include <thread>

#include "cmtf/error.hpp"
#include "cmtf/log.hpp"
#include "../util/csv.hpp"

namespace cmtf::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

constexpr std::array<std::pair<Stage, const char*>, 9> kStages = {{{Stage::Ingest, "ingest"},
                                                                   {Stage::Encode, "encode"},
                                                                   {Stage::Select, "select"},
                                                                   {Stage::Train, "train"},
                                                                   {Stage::Tune, "tune"},
                                                                   {Stage::Evaluate, "evaluate"},
                                                                   {Stage::Report, "report"},
                                                                   {Stage::Ablate, "ablate"},
                                                                   {Stage::Synth, "synth"}}};

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::ofstream open_out(const fs::path& p) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw DataError("cannot write " + p.string());
    return out;
}

void write_json(const fs::path& p, const json& j) { open_out(p) << j.dump(2) << '\n'; }

const fs::path& require(const fs::path& p, std::string_view producer) {
    if (!fs::exists(p)) {
        throw PipelineError("missing artifact " + p.string() + " (run the '" + std::string(producer) +
                            "' stage first)");
    }
    return p;
}

json read_json(const fs::path& p, std::string_view producer) {
    std::ifstream in(require(p, producer));
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(p.string() + ": " + e.what());
    }
}

void record_stage(const PipelineConfig& cfg, Stage stage, const std::vector<fs::path>& outputs,
                  const std::string& started) {
    const fs::path path = cfg.output_dir / "manifest.json";
    json m = json::object();
    if (fs::exists(path)) {
        std::ifstream in(path);
        m = json::parse(in, nullptr, false);
        if (m.is_discarded() || !m.is_object()) m = json::object();
    }
    const std::string hash = config_hash(cfg);
    if (m.value("config_hash", "") != hash) m["stages"] = json::object();
    m["config_hash"] = hash;
    m["seed"] = cfg.seed_value();
    m["versions"] = {{"cmtf", kVersion}, {"config_schema", kSchemaVersion}, {"checkpoint_format", 1}};
    json files = json::array();
    for (const auto& p : outputs) files.push_back(p.lexically_relative(cfg.output_dir).generic_string());
    m["stages"][to_string(stage)] = {{"outputs", files}, {"started", started}, {"finished", utc_now()}};
    write_json(path, m);
}

// ---------------------------------------------------------------------------
// ingest

std::vector<fs::path> stage_ingest(const PipelineConfig& cfg) {
    const auto need = [](const fs::path& p, const char* key) {
        if (!fs::exists(p)) throw ConfigError(std::string("data.") + key + ": file not found: " + p.string());
    };
    if (cfg.data.prices.empty()) throw ConfigError("data.prices is required");
    need(cfg.data.prices, "prices");
    const fs::path dir = cfg.output_dir / "ingest";
    fs::create_directories(dir);
    std::vector<fs::path> outs;

    auto prices = ingest::load_prices(cfg.data.prices);
    for (auto& s : prices) s = ingest::interpolate_missing(s);
    outs.push_back(dir / "prices.csv");
    ingest::save_prices(outs.back(), prices);
    const auto cal = ingest::build_calendar(prices);

    json summary{{"tickers", json::array()}, {"trading_days", cal.size()}};
    for (const auto& s : prices) summary["tickers"].push_back(s.ticker);
    if (cal.size() > 0) {
        summary["first_date"] = cal.dates.front().iso();
        summary["last_date"] = cal.dates.back().iso();
    }
    if (!cfg.data.macro.empty()) {
        need(cfg.data.macro, "macro");
        auto m = ingest::load_macro(cfg.data.macro);
        for (auto& s : m) s = ingest::interpolate_missing(s);
        outs.push_back(dir / "macro.csv");
        ingest::save_macro(outs.back(), m);
        summary["macro_series"] = m.size();
    }
    if (!cfg.data.news.empty()) {
        need(cfg.data.news, "news");
        auto n = ingest::load_news(cfg.data.news);
        for (auto& s : n) s = ingest::interpolate_missing(s);
        outs.push_back(dir / "news.csv");
        ingest::save_news(outs.back(), n);
        summary["news_series"] = n.size();
    }
    if (!cfg.data.reports.empty()) {
        need(cfg.data.reports, "reports");
        auto r = ingest::load_reports(cfg.data.reports);
        for (auto& s : r) s = ingest::interpolate_missing(s);
        outs.push_back(dir / "reports.csv");
        ingest::save_reports(outs.back(), r);
        summary["report_series"] = r.size();
    }
    outs.push_back(dir / "summary.json");
    write_json(outs.back(), summary);
    return outs;
}

// ---------------------------------------------------------------------------
// encode

json range_json(const ingest::IndexRange& r, const ingest::Calendar& cal) {
    json j{{"begin", r.begin}, {"end", r.end}};
    if (r.size() > 0) {
        j["first_date"] = cal.dates[r.begin].iso();
        j["last_date"] = cal.dates[r.end - 1].iso();
    }
    return j;
}

ingest::IndexRange range_from_json(const json& j) {
    return {j.at("begin").get<std::size_t>(), j.at("end").get<std::size_t>()};
}

std::vector<fs::path> stage_encode(const PipelineConfig& cfg) {
    const fs::path in = cfg.output_dir / "ingest";
    encoding::Modalities mods;
    mods.prices = ingest::load_prices(require(in / "prices.csv", "ingest"));
    if (fs::exists(in / "macro.csv")) mods.macro = ingest::load_macro(in / "macro.csv");
    if (cfg.ablation.use_news && fs::exists(in / "news.csv")) mods.news = ingest::load_news(in / "news.csv");
    if (cfg.ablation.use_reports && fs::exists(in / "reports.csv")) {
        mods.reports = ingest::load_reports(in / "reports.csv");
    }
    const auto frame = encoding::fuse(mods, cfg.wma, {cfg.ablation.use_news, cfg.ablation.use_reports});
    const auto splits = ingest::split_chronological(frame.calendar, cfg.split);
    if (splits.train.size() < 2) throw DataError("encode: training split has fewer than 2 days");
    const auto scaler = encoding::fit_scaler(frame, splits.train);
    const auto scaled = encoding::apply_scaler(frame, scaler);
    for (const auto& name : scaler.dropped) log::info("encode: dropped zero-variance column " + name);
    const auto closes = encoding::aligned_closes(mods.prices, frame.calendar);

    const fs::path dir = cfg.output_dir / "encode";
    std::vector<fs::path> outs{dir / "frame.csv", dir / "closes.csv", dir / "encoding.json"};
    {
        auto out = open_out(outs[0]);
        encoding::write_frame_csv(out, scaled);
    }
    {
        auto out = open_out(outs[1]);
        out << "date";
        for (const auto& t : closes.tickers) out << ',' << t;
        out << '\n';
        for (Eigen::Index t = 0; t < closes.closes.rows(); ++t) {
            out << frame.calendar.dates[static_cast<std::size_t>(t)].iso();
            for (Eigen::Index i = 0; i < closes.closes.cols(); ++i) out << ',' << util::format_double(closes.closes(t, i));
            out << '\n';
        }
    }
    json enc{{"columns", encoding::manifest_json(scaled)},
             {"scaler", encoding::to_json(scaler)},
             {"tickers", closes.tickers},
             {"ablation", cfg.ablation.label()},
             {"splits",
              {{"train", range_json(splits.train, frame.calendar)},
               {"validation", range_json(splits.validation, frame.calendar)},
               {"test", range_json(splits.test, frame.calendar)}}}};
    write_json(outs[2], enc);
    return outs;
}

// ---------------------------------------------------------------------------
// select

std::vector<fs::path> stage_select(const PipelineConfig& cfg) {
    const auto enc = load_encoded(cfg.output_dir);
    const auto names = enc.frame.names();
    const fs::path out = cfg.output_dir / "select" / "selection.json";
    if (!cfg.ablation.use_interpretation) {
        write_json(out, {{"skipped", true}, {"selected", names}});
        return {out};
    }
    // Row t of the features explains close(t+1); both stay inside train.
    const auto n = static_cast<Eigen::Index>(enc.splits.train.end) - 1;
    const Eigen::MatrixXd x = enc.frame.matrix.topRows(n);
    const Eigen::MatrixXd y = enc.closes.middleRows(1, n);
    const auto report = interp::stability_select(x, y, names, cfg.selection);
    auto selected = interp::final_feature_names(report);

    interp::ImportanceLedger ledger(names);
    const auto min_rows = static_cast<Eigen::Index>(cfg.selection.folds * cfg.selection.window) +
                          cfg.selection.lag_order;
    std::vector<Eigen::Index> ends{n};
    if (cfg.retrain_period_days > 0) {
        for (Eigen::Index e = n - cfg.retrain_period_days; e >= min_rows; e -= cfg.retrain_period_days) {
            ends.push_back(e);
        }
    }
    std::sort(ends.begin(), ends.end());
    for (Eigen::Index e : ends) {
        if (e == n) {
            ledger.update(report, e);
        } else {
            ledger.update(interp::stability_select(x.topRows(e), y.topRows(e), names, cfg.selection), e);
        }
    }

    bool fallback = false;
    if (selected.empty()) {
        log::warn("select: no feature survived stability selection; using the correlation-retained set");
        fallback = true;
        for (std::size_t i : report.corr.retained) selected.push_back(names[i]);
    }
    json j = interp::to_json(report, &ledger);
    j["skipped"] = false;
    j["fallback"] = fallback;
    j["selected"] = selected;
    write_json(out, j);
    return {out};
}

// ---------------------------------------------------------------------------
// train / tune

struct Samples {
    forecast::SequenceData data;
    std::vector<std::size_t> test;
};

std::vector<Eigen::Index> feature_indices(const encoding::AlignedFrame& frame, const std::vector<std::string>& want) {
    const auto names = frame.names();
    std::vector<Eigen::Index> idx;
    for (const auto& w : want) {
        const auto it = std::find(names.begin(), names.end(), w);
        if (it == names.end()) throw PipelineError("selected feature '" + w + "' is not in the encoded frame");
        idx.push_back(static_cast<Eigen::Index>(it - names.begin()));
    }
    return idx;
}

Samples build_samples(const EncodedData& enc, const std::vector<std::string>& features,
                      const forecast::TransformerConfig& mc) {
    const auto idx = feature_indices(enc.frame, features);
    const Eigen::Index t_len = enc.closes.rows();
    const Eigen::Index n = enc.closes.cols();
    Samples s;
    s.data.features.resize(t_len, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) s.data.features.col(static_cast<Eigen::Index>(k)) = enc.frame.matrix.col(idx[k]);
    s.data.targets = Eigen::MatrixXd::Zero(t_len, n);
    for (Eigen::Index t = 0; t + 1 < t_len; ++t) {
        for (Eigen::Index i = 0; i < n; ++i) {
            s.data.targets(t, i) = mc.mode == forecast::TaskMode::Classification
                                       ? (enc.closes(t + 1, i) > enc.closes(t, i) ? 1.0 : 0.0)
                                       : enc.closes(t + 1, i);
        }
    }
    const auto w = static_cast<std::size_t>(mc.lookback);
    for (std::size_t t = w - 1; t + 1 < static_cast<std::size_t>(t_len); ++t) {
        if (enc.splits.train.contains(t + 1)) s.data.train.push_back(t);
        else if (enc.splits.validation.contains(t + 1)) s.data.validation.push_back(t);
        else if (enc.splits.test.contains(t + 1)) s.test.push_back(t);
    }
    if (s.data.train.empty()) throw DataError("train: no training windows (lookback too long for the split)");
    return s;
}

forecast::TransformerConfig seeded(forecast::TransformerConfig mc, const PipelineConfig& cfg) {
    mc.seed = cfg.seed_value();
    return mc;
}

forecast::TransformerConfig apply_params(forecast::TransformerConfig mc, const hpo::Params& p) {
    const auto get = [&](const char* k, auto& field) {
        const auto it = p.find(k);
        if (it != p.end()) field = static_cast<std::decay_t<decltype(field)>>(it->second);
    };
    get("d_model", mc.d_model);
    get("heads", mc.num_heads);
    get("layers", mc.num_layers);
    get("d_ffn", mc.d_ffn);
    get("lr", mc.learning_rate);
    get("batch", mc.batch_size);
    get("epochs", mc.epochs);
    return mc;
}

std::vector<fs::path> save_training(const PipelineConfig& cfg, const forecast::TransformerConfig& mc,
                                    const forecast::TrainResult& r, const std::vector<std::string>& features,
                                    const EncodedData& enc) {
    const fs::path dir = cfg.output_dir / "train";
    fs::create_directories(dir);
    std::vector<fs::path> outs{dir / "checkpoint.json", dir / "history.json"};
    forecast::save_checkpoint(outs[0], {mc, r.params, features, enc.tickers});
    write_json(outs[1], forecast::to_json(r.history));
    return outs;
}

std::vector<fs::path> stage_train(const PipelineConfig& cfg, const forecast::TransformerConfig& model) {
    const auto enc = load_encoded(cfg.output_dir);
    const auto features = load_selected_features(cfg.output_dir);
    const auto mc = seeded(model, cfg);
    const auto samples = build_samples(enc, features, mc);
    log::info("train: " + std::to_string(samples.data.train.size()) + " training windows, " +
              std::to_string(features.size()) + " features");
    const auto r = forecast::train(samples.data, mc);
    return save_training(cfg, mc, r, features, enc);
}

std::vector<fs::path> stage_tune(const PipelineConfig& cfg) {
    const auto enc = load_encoded(cfg.output_dir);
    const auto features = load_selected_features(cfg.output_dir);
    const auto base = seeded(cfg.model, cfg);
    const auto samples = build_samples(enc, features, base);

    const hpo::Objective objective = [&](const hpo::Params& p, hpo::TrialContext& ctx) {
        const auto mc = apply_params(base, p);
        mc.validate();
        const auto r = forecast::train(samples.data, mc, [&](int, double v) { return ctx.report(v); });
        const auto& h = r.history;
        if (h.best_epoch < 0) return std::numeric_limits<double>::infinity();
        const auto& losses = h.validation_loss.empty() ? h.train_loss : h.validation_loss;
        return losses[static_cast<std::size_t>(h.best_epoch)];
    };
    hpo::TuneOptions opts;
    opts.n_trials = cfg.search.trials;
    opts.seed = cfg.seed_value();
    opts.parallelism = cfg.parallelism;
    opts.tpe = cfg.search.tpe;
    opts.pruner = cfg.search.pruner;
    const auto study = hpo::tune(objective, cfg.search.space, opts);
    const auto& best = study.best_trial();

    const fs::path dir = cfg.output_dir / "tune";
    std::vector<fs::path> outs{dir / "study.json", dir / "best.json"};
    write_json(outs[0], hpo::to_json(study));
    const auto mc = apply_params(base, best.params);
    write_json(outs[1], {{"trial", best.id}, {"params", best.params}, {"value", *best.value},
                         {"model", forecast::to_json(mc)}});
    const auto r = forecast::train(samples.data, mc);
    for (auto& p : save_training(cfg, mc, r, features, enc)) outs.push_back(std::move(p));
    return outs;
}

// ---------------------------------------------------------------------------
// evaluate / report

Eigen::MatrixXd cmtf_outputs(const forecast::Checkpoint& ck, const PipelineConfig& cfg, Samples& s,
                             const EncodedData& enc) {
    if (cfg.retrain_period_days <= 0 || s.test.empty()) {
        return forecast::predict(ck.params, ck.config, s.data.features, s.test);
    }
    // Walk forward: before each period, slide the train/validation boundary
    // up to the period start and retrain.
    const std::size_t period = static_cast<std::size_t>(cfg.retrain_period_days);
    const std::size_t v_len = enc.splits.validation.size();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(s.test.size()), enc.closes.cols());
    std::size_t done = 0;
    while (done < s.test.size()) {
        const std::size_t start_day = s.test[done] + 1;
        std::vector<std::size_t> ends;
        for (std::size_t k = done; k < s.test.size() && s.test[k] + 1 < start_day + period; ++k) ends.push_back(s.test[k]);
        forecast::SequenceData d;
        d.features = s.data.features;
        d.targets = s.data.targets;
        const std::size_t boundary = start_day > v_len ? start_day - v_len : 0;
        const auto w = static_cast<std::size_t>(ck.config.lookback);
        for (std::size_t t = w - 1; t + 1 < start_day; ++t) {
            if (t + 1 < enc.splits.train.begin) continue;
            (t + 1 < boundary ? d.train : d.validation).push_back(t);
        }
        const auto r = forecast::train(d, ck.config);
        log::info("evaluate: retrained through " + enc.frame.calendar.dates[start_day - 1].iso());
        out.middleRows(static_cast<Eigen::Index>(done), static_cast<Eigen::Index>(ends.size())) =
            forecast::predict(r.params, ck.config, s.data.features, ends);
        done += ends.size();
    }
    return out;
}

std::vector<fs::path> stage_evaluate(const PipelineConfig& cfg) {
    const auto enc = load_encoded(cfg.output_dir);
    const auto ck = forecast::load_checkpoint(require(cfg.output_dir / "train" / "checkpoint.json", "train"));
    if (ck.target_names != enc.tickers) throw PipelineError("checkpoint tickers do not match the encoded frame");
    auto s = build_samples(enc, ck.feature_names, ck.config);
    if (s.test.empty()) throw DataError("evaluate: no test windows");
    const auto m = static_cast<Eigen::Index>(s.test.size());
    const Eigen::Index n = enc.closes.cols();
    const auto& closes = enc.closes;

    Eigen::MatrixXi truth(m, n);
    Eigen::MatrixXd price_truth(m, n), last(m, n);
    int ties = 0;
    for (Eigen::Index k = 0; k < m; ++k) {
        const auto t = static_cast<Eigen::Index>(s.test[static_cast<std::size_t>(k)]);
        for (Eigen::Index i = 0; i < n; ++i) {
            truth(k, i) = closes(t + 1, i) > closes(t, i) ? 1 : 0;
            ties += closes(t + 1, i) == closes(t, i) ? 1 : 0;
            price_truth(k, i) = closes(t + 1, i);
            last(k, i) = closes(t, i);
        }
    }

    // CMTF
    const Eigen::MatrixXd raw = cmtf_outputs(ck, cfg, s, enc);
    Eigen::MatrixXi cmtf_dir(m, n);
    int boundary = 0;
    for (Eigen::Index k = 0; k < m; ++k) {
        const Eigen::VectorXd row = raw.row(k).transpose();
        const Eigen::VectorXd lc = last.row(k).transpose();
        const auto d = forecast::pred_direction({row.data(), static_cast<std::size_t>(n)},
                                                {lc.data(), static_cast<std::size_t>(n)}, ck.config.mode);
        boundary += d.boundary;
        for (Eigen::Index i = 0; i < n; ++i) cmtf_dir(k, i) = d.direction[static_cast<std::size_t>(i)];
    }
    const bool regression = ck.config.mode == forecast::TaskMode::Regression;

    // zero-change
    const auto zc = eval::zero_change_predict(closes);
    Eigen::MatrixXi zc_dir(m, n);
    Eigen::MatrixXd zc_price(m, n);
    for (Eigen::Index k = 0; k < m; ++k) {
        const auto t = static_cast<Eigen::Index>(s.test[static_cast<std::size_t>(k)]);
        zc_dir.row(k) = zc.direction.row(t);
        zc_price.row(k) = zc.price.row(t);
    }

    // per-stock linear regression of close(t+1) on the selected features at t
    std::vector<Eigen::Index> fit_rows;
    for (std::size_t t = 0; t + 1 < static_cast<std::size_t>(closes.rows()); ++t)
        if (enc.splits.train.contains(t + 1)) fit_rows.push_back(static_cast<Eigen::Index>(t));
    const Eigen::MatrixXd& feats = s.data.features;
    Eigen::MatrixXd xf(static_cast<Eigen::Index>(fit_rows.size()), feats.cols());
    for (std::size_t r = 0; r < fit_rows.size(); ++r) xf.row(static_cast<Eigen::Index>(r)) = feats.row(fit_rows[r]);
    Eigen::MatrixXd xt(m, feats.cols());
    for (Eigen::Index k = 0; k < m; ++k) xt.row(k) = feats.row(static_cast<Eigen::Index>(s.test[static_cast<std::size_t>(k)]));
    Eigen::MatrixXd lin_price(m, n);
    Eigen::MatrixXi lin_dir(m, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd yf(static_cast<Eigen::Index>(fit_rows.size()));
        for (std::size_t r = 0; r < fit_rows.size(); ++r) yf(static_cast<Eigen::Index>(r)) = closes(fit_rows[r] + 1, i);
        const auto model = eval::linear_fit(xf, yf);
        lin_price.col(i) = eval::linear_predict(model, xt);
        for (Eigen::Index k = 0; k < m; ++k) lin_dir(k, i) = lin_price(k, i) - last(k, i) > 0.0 ? 1 : 0;
    }

    eval::EvalReport report;
    report.models.push_back(eval::evaluate_model("cmtf", enc.tickers, cmtf_dir, truth, regression ? &raw : nullptr,
                                                 regression ? &price_truth : nullptr));
    report.models.push_back(eval::evaluate_model("zero_change", enc.tickers, zc_dir, truth, &zc_price, &price_truth));
    report.models.push_back(eval::evaluate_model("linear", enc.tickers, lin_dir, truth, &lin_price, &price_truth));
    const auto& cal = enc.frame.calendar;
    report.metadata = {{"config_hash", config_hash(cfg)},
                       {"seed", cfg.seed_value()},
                       {"ablation", cfg.ablation.label()},
                       {"mode", forecast::to_string(ck.config.mode)},
                       {"averaging", "micro"},
                       {"retrain_period_days", cfg.retrain_period_days},
                       {"features", ck.feature_names.size()},
                       {"test_samples", m},
                       {"ties", ties},
                       {"boundary_predictions", boundary},
                       {"splits",
                        {{"train", range_json(enc.splits.train, cal)},
                         {"validation", range_json(enc.splits.validation, cal)},
                         {"test", range_json(enc.splits.test, cal)}}}};

    const fs::path dir = cfg.output_dir / "evaluate";
    std::vector<fs::path> outs{dir / "eval_report.json", dir / "predictions.csv"};
    write_json(outs[0], eval::to_json(report));
    std::vector<forecast::PredictionRow> rows;
    for (Eigen::Index k = 0; k < m; ++k) {
        const auto day = cal.dates[s.test[static_cast<std::size_t>(k)] + 1];
        for (Eigen::Index i = 0; i < n; ++i) {
            rows.push_back({day, enc.tickers[static_cast<std::size_t>(i)], cmtf_dir(k, i),
                            regression ? raw(k, i) : forecast::sigmoid(raw(k, i))});
        }
    }
    auto out = open_out(outs[1]);
    forecast::write_predictions_csv(out, rows);
    return outs;
}

std::vector<fs::path> stage_report(const PipelineConfig& cfg) {
    const auto report = eval::eval_report_from_json(read_json(cfg.output_dir / "evaluate" / "eval_report.json", "evaluate"));
    const fs::path p = cfg.output_dir / "report" / "report.csv";
    auto out = open_out(p);
    eval::write_report_csv(out, report);
    return {p};
}

// ---------------------------------------------------------------------------
// ablation

std::string cell_dir(const AblationFlags& f) { return "cell_" + f.label(); }

}  // namespace

std::string to_string(Stage s) {
    for (const auto& [k, name] : kStages)
        if (k == s) return name;
    return "unknown";
}

Stage parse_stage(std::string_view s) {
    for (const auto& [k, name] : kStages)
        if (s == name) return k;
    throw ConfigError("unknown stage '" + std::string(s) + "'");
}

StageResult run_stage(Stage stage, const PipelineConfig& cfg) {
    cfg.validate();
    const std::string started = utc_now();
    log::info("stage " + to_string(stage) + " -> " + cfg.output_dir.string());
    StageResult r{stage, {}};
    switch (stage) {
        case Stage::Ingest: r.outputs = stage_ingest(cfg); break;
        case Stage::Encode: r.outputs = stage_encode(cfg); break;
        case Stage::Select: r.outputs = stage_select(cfg); break;
        case Stage::Train: r.outputs = stage_train(cfg, cfg.model); break;
        case Stage::Tune: r.outputs = stage_tune(cfg); break;
        case Stage::Evaluate: r.outputs = stage_evaluate(cfg); break;
        case Stage::Report: r.outputs = stage_report(cfg); break;
        case Stage::Ablate: {
            ablation_matrix(cfg);
            const fs::path dir = cfg.output_dir / "ablate";
            r.outputs = {dir / "ablation.json", dir / "ablation.csv"};
            break;
        }
        case Stage::Synth: r.outputs = write_synthetic(cfg.synth, cfg, cfg.output_dir); break;
    }
    record_stage(cfg, stage, r.outputs, started);
    return r;
}

std::vector<StageResult> run_pipeline(const PipelineConfig& cfg) {
    std::vector<StageResult> out;
    for (Stage s : {Stage::Ingest, Stage::Encode, Stage::Select, Stage::Train, Stage::Evaluate, Stage::Report}) {
        out.push_back(run_stage(s, cfg));
    }
    return out;
}

std::vector<AblationCell> ablation_matrix(const PipelineConfig& cfg) {
    cfg.validate();
    std::vector<AblationCell> cells;
    for (int mask = 7; mask >= 0; --mask) {
        cells.push_back({{(mask & 4) != 0, (mask & 2) != 0, (mask & 1) != 0}, {}});
    }
    const fs::path dir = cfg.output_dir / "ablate";
    std::vector<std::string> errors(cells.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t k = next++; k < cells.size(); k = next++) {
            PipelineConfig c = cfg;
            c.ablation = cells[k].flags;
            c.output_dir = dir / cell_dir(cells[k].flags);
            c.parallelism = 1;
            try {
                run_pipeline(c);
                cells[k].report = eval::eval_report_from_json(read_json(c.output_dir / "evaluate" / "eval_report.json", "evaluate"));
            } catch (const std::exception& e) {
                errors[k] = e.what();
            }
        }
    };
    const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.parallelism), cells.size());
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    std::string diag;
    for (std::size_t k = 0; k < cells.size(); ++k)
        if (!errors[k].empty()) diag += "\n  " + cells[k].flags.label() + ": " + errors[k];
    if (!diag.empty()) throw PipelineError("ablation failed in one or more cells:" + diag);

    json table = json::array();
    auto csv = open_out(dir / "ablation.csv");
    csv << "cell,use_interpretation,use_news,use_reports,precision,recall,f1,accuracy\n";
    for (const auto& c : cells) {
        const auto& a = c.report.model("cmtf").aggregate;
        table.push_back({{"cell", c.flags.label()},
                         {"use_interpretation", c.flags.use_interpretation},
                         {"use_news", c.flags.use_news},
                         {"use_reports", c.flags.use_reports},
                         {"precision", a.precision},
                         {"recall", a.recall},
                         {"f1", a.f1},
                         {"accuracy", a.accuracy},
                         {"report", (dir / cell_dir(c.flags) / "evaluate" / "eval_report.json")
                                        .lexically_relative(dir)
                                        .generic_string()}});
        csv << c.flags.label() << ',' << c.flags.use_interpretation << ',' << c.flags.use_news << ','
            << c.flags.use_reports << ',' << util::format_double(a.precision) << ',' << util::format_double(a.recall)
            << ',' << util::format_double(a.f1) << ',' << util::format_double(a.accuracy) << '\n';
    }
    write_json(dir / "ablation.json", {{"config_hash", config_hash(cfg)}, {"seed", cfg.seed_value()}, {"cells", table}});
    return cells;
}

EncodedData load_encoded(const fs::path& out_dir) {
    const fs::path dir = out_dir / "encode";
    const json meta = read_json(dir / "encoding.json", "encode");
    EncodedData e;
    try {
        const auto columns = encoding::columns_from_manifest(meta.at("columns"));
        {
            std::ifstream in(require(dir / "frame.csv", "encode"));
            e.frame = encoding::read_frame_csv(in, columns, (dir / "frame.csv").string());
            e.frame.scaled = true;
        }
        e.tickers = meta.at("tickers").get<std::vector<std::string>>();
        const auto& sp = meta.at("splits");
        e.splits = {range_from_json(sp.at("train")), range_from_json(sp.at("validation")),
                    range_from_json(sp.at("test"))};
    } catch (const json::exception& ex) {
        throw DataError((dir / "encoding.json").string() + ": " + ex.what());
    }
    const fs::path cp = require(dir / "closes.csv", "encode");
    std::ifstream in(cp);
    util::CsvReader r(in, cp.string());
    std::vector<std::string_view> expected{"date"};
    for (const auto& t : e.tickers) expected.push_back(t);
    const auto idx = r.header(expected);
    e.closes.resize(static_cast<Eigen::Index>(e.frame.rows()), static_cast<Eigen::Index>(e.tickers.size()));
    std::vector<std::string> f;
    Eigen::Index t = 0;
    while (r.next(f)) {
        r.require_width(f);
        if (t >= e.closes.rows()) r.fail("more rows than the encoded frame");
        for (std::size_t i = 0; i < e.tickers.size(); ++i) {
            e.closes(t, static_cast<Eigen::Index>(i)) = r.number(f[idx[i + 1]], e.tickers[i]);
        }
        ++t;
    }
    if (t != e.closes.rows()) throw DataError(cp.string() + ": row count does not match the encoded frame");
    return e;
}

std::vector<std::string> load_selected_features(const fs::path& out_dir) {
    const json j = read_json(out_dir / "select" / "selection.json", "select");
    try {
        return j.at("selected").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw DataError(std::string("selection.json: ") + e.what());
    }
}

json load_manifest(const fs::path& out_dir) { return read_json(out_dir / "manifest.json", "ingest"); }

}  // namespace cmtf::pipeline
