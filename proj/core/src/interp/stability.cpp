#include <algorithm>
#include <future>

#include "cmtf/error.hpp"
#include "cmtf/interp/interp.hpp"

namespace cmtf::interp {

void SelectionConfig::validate() const {
    if (folds < 2) throw ConfigError("selection: folds must be at least 2");
    if (!(survival > 0.0 && survival <= 1.0)) throw ConfigError("selection: survival threshold must lie in (0, 1]");
    if (!(alpha >= 0.0)) throw ConfigError("selection: alpha must be non-negative");
    if (lag_order < 0) throw ConfigError("selection: lag order must be non-negative");
    if (window < static_cast<std::size_t>(lag_order) + 2) {
        throw ConfigError("selection: window must be at least lag order + 2");
    }
    if (!(tol > 0.0)) throw ConfigError("selection: tolerance must be positive");
    if (max_iter < 1) throw ConfigError("selection: max_iter must be positive");
    if (corr.threshold && !(*corr.threshold > 0.0)) throw ConfigError("selection: correlation threshold must be positive");
}

SelectionReport stability_select(const Eigen::MatrixXd& x, const Eigen::MatrixXd& targets,
                                 std::vector<std::string> names, const SelectionConfig& cfg) {
    cfg.validate();
    if (names.size() != static_cast<std::size_t>(x.cols())) {
        throw DimensionError("stability_select: " + std::to_string(names.size()) + " names for " +
                             std::to_string(x.cols()) + " columns");
    }
    if (targets.rows() != x.rows()) throw DimensionError("stability_select: targets and frame row counts differ");

    const std::size_t t_rows = static_cast<std::size_t>(x.rows());
    const std::size_t lags = static_cast<std::size_t>(cfg.lag_order);
    const std::size_t need = cfg.folds * cfg.window + lags;
    if (t_rows < need) {
        throw WindowError("stability_select: " + std::to_string(cfg.folds) + " folds of window " +
                          std::to_string(cfg.window) + " with lag order " + std::to_string(cfg.lag_order) +
                          " require at least " + std::to_string(need) + " rows, got " + std::to_string(t_rows));
    }

    SelectionReport rep;
    rep.feature_names = std::move(names);
    rep.survival = cfg.survival;
    rep.lag_order = cfg.lag_order;
    rep.corr = correlation_filter(x, cfg.corr);
    const std::vector<std::size_t>& kept = rep.corr.retained;

    // Leading rows reserved for lags; leftover rows after equal division are dropped from the start.
    const std::size_t fold_len = (t_rows - lags) / cfg.folds;
    const std::size_t offset = t_rows - cfg.folds * fold_len;

    GroupLassoOptions opts;
    opts.alpha = cfg.alpha;
    opts.tol = cfg.tol;
    opts.max_iter = cfg.max_iter;
    opts.standardize = true;

    auto run_fold = [&](std::size_t k) {
        FoldResult fr;
        fr.rows = {offset + k * fold_len, offset + (k + 1) * fold_len};
        const auto end = static_cast<Eigen::Index>(fr.rows.end);
        const LaggedDesign design = expand_lags(x.topRows(end), kept, cfg.lag_order, cfg.window, targets.topRows(end));
        fr.fit = group_lasso_fit(design.x, design.y, opts);
        fr.active.assign(kept.size(), false);
        for (Eigen::Index p = 0; p < fr.fit.weights.rows(); ++p) {
            if (fr.fit.weights.row(p).squaredNorm() > 0.0) fr.active[static_cast<std::size_t>(p) / (lags + 1)] = true;
        }
        return fr;
    };

    rep.folds.resize(cfg.folds);
    if (cfg.parallel) {
        std::vector<std::future<FoldResult>> pending;
        for (std::size_t k = 0; k < cfg.folds; ++k) pending.push_back(std::async(std::launch::async, run_fold, k));
        for (std::size_t k = 0; k < cfg.folds; ++k) rep.folds[k] = pending[k].get();
    } else {
        for (std::size_t k = 0; k < cfg.folds; ++k) rep.folds[k] = run_fold(k);
    }

    rep.votes.assign(kept.size(), 0.0);
    for (std::size_t j = 0; j < kept.size(); ++j) {
        int hits = 0;
        for (const auto& f : rep.folds) hits += f.active[j] ? 1 : 0;
        rep.votes[j] = static_cast<double>(hits) / static_cast<double>(cfg.folds);
        if (rep.votes[j] >= cfg.survival - 1e-12) rep.final_features.push_back(kept[j]);
    }
    return rep;
}

std::vector<std::string> final_feature_names(const SelectionReport& report) {
    std::vector<std::string> out;
    for (std::size_t j : report.final_features) out.push_back(report.feature_names.at(j));
    return out;
}

ImportanceLedger::ImportanceLedger(std::vector<std::string> features)
    : features_(std::move(features)), counts_(features_.size(), 0) {}

void ImportanceLedger::update(const SelectionReport& report, std::int64_t period_id) {
    const auto names = final_feature_names(report);
    update(std::span<const std::string>(names), period_id);
}

void ImportanceLedger::update(std::span<const std::string> selected, std::int64_t period_id) {
    if (!periods_.empty() && period_id <= periods_.back()) {
        throw ContractError("ledger: period " + std::to_string(period_id) + " does not follow period " +
                            std::to_string(periods_.back()));
    }
    for (const auto& name : selected) {
        auto it = std::find(features_.begin(), features_.end(), name);
        if (it == features_.end()) throw ContractError("ledger: unknown feature '" + name + "'");
        ++counts_[static_cast<std::size_t>(it - features_.begin())];
    }
    periods_.push_back(period_id);
    history_.push_back(counts_);
}

int ImportanceLedger::count(const std::string& feature) const {
    auto it = std::find(features_.begin(), features_.end(), feature);
    if (it == features_.end()) throw ContractError("ledger: unknown feature '" + feature + "'");
    return counts_[static_cast<std::size_t>(it - features_.begin())];
}

nlohmann::json to_json(const ImportanceLedger& ledger) {
    nlohmann::json counts = nlohmann::json::object();
    for (std::size_t i = 0; i < ledger.features().size(); ++i) counts[ledger.features()[i]] = ledger.counts()[i];
    return {{"features", ledger.features()},
            {"counts", counts},
            {"periods", ledger.periods()},
            {"history", ledger.history()}};
}

nlohmann::json to_json(const SelectionReport& report, const ImportanceLedger* ledger) {
    using nlohmann::json;
    json features = json::array();
    std::vector<int> kept_pos(report.feature_names.size(), -1);
    for (std::size_t j = 0; j < report.corr.retained.size(); ++j) kept_pos[report.corr.retained[j]] = static_cast<int>(j);
    for (std::size_t d = 0; d < report.feature_names.size(); ++d) {
        json f{{"name", report.feature_names[d]}};
        if (!report.corr.mean_abs_corr.empty()) f["mean_abs_corr"] = report.corr.mean_abs_corr[d];
        const int pos = kept_pos[d];
        if (pos < 0) {
            f["status"] = "dropped";
            f["reason"] = "correlation";
        } else {
            f["vote"] = report.votes[static_cast<std::size_t>(pos)];
            const bool final = std::find(report.final_features.begin(), report.final_features.end(), d) !=
                               report.final_features.end();
            f["status"] = final ? "selected" : "dropped";
            if (!final) f["reason"] = "stability";
        }
        features.push_back(std::move(f));
    }
    json folds = json::array();
    for (const auto& fr : report.folds) {
        std::vector<int> active(fr.active.begin(), fr.active.end());
        folds.push_back({{"rows", {fr.rows.begin, fr.rows.end}},
                         {"iterations", fr.fit.iterations},
                         {"objective", fr.fit.objective},
                         {"kkt_residual", fr.fit.kkt_residual},
                         {"alpha_max", fr.fit.alpha_max},
                         {"active", active}});
    }
    json out{{"corr_threshold", report.corr.threshold},
             {"lag_order", report.lag_order},
             {"survival", report.survival},
             {"features", features},
             {"folds", folds},
             {"selected", final_feature_names(report)}};
    if (ledger) out["ledger"] = to_json(*ledger);
    return out;
}

}  // namespace cmtf::interp
