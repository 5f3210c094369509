#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cmtf::eval {

// ---------------------------------------------------------------------------
// Baselines

/// Row t holds the forecast for day t+1: price p_t and the direction realised
/// on day t (p_t > p_{t-1}). Row 0 has no realised direction and predicts 0.
struct ZeroChange {
    Eigen::MatrixXd price;      // T x N
    Eigen::MatrixXi direction;  // T x N
};

ZeroChange zero_change_predict(const Eigen::MatrixXd& closes);

struct LinearModel {
    Eigen::VectorXd slopes;
    double intercept = 0.0;
    bool ridge_fallback = false;
};

/// OLS with intercept through a Cholesky solve of the normal equations. An
/// ill-conditioned or rank-deficient design falls back to ridge 1e-8.
LinearModel linear_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);
double linear_predict(const LinearModel& m, const Eigen::VectorXd& x);
Eigen::VectorXd linear_predict(const LinearModel& m, const Eigen::MatrixXd& x);

// ---------------------------------------------------------------------------
// Metrics

struct ConfusionCounts {
    long tp = 0, fp = 0, fn = 0, tn = 0;

    long total() const noexcept { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct ClassificationMetrics {
    ConfusionCounts counts;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double accuracy = 0.0;
    bool precision_undefined = false;  // TP + FP == 0, reported as 0
    bool recall_undefined = false;     // TP + FN == 0, reported as 0
};

ClassificationMetrics metrics_from_counts(const ConfusionCounts& c);
ConfusionCounts confusion(std::span<const int> pred, std::span<const int> truth);
ClassificationMetrics classification_metrics(std::span<const int> pred, std::span<const int> truth);

struct RegressionMetrics {
    double rmse = 0.0;
    double mape = 0.0;  // percent
};

/// Throws DataError listing the rows where truth is zero.
RegressionMetrics regression_metrics(std::span<const double> pred, std::span<const double> truth);

// ---------------------------------------------------------------------------
// Reports

struct ModelEval {
    std::string model;
    ClassificationMetrics aggregate;  // pooled over stocks (micro average)
    std::vector<std::string> tickers;
    std::vector<ClassificationMetrics> per_stock;
    std::optional<RegressionMetrics> regression;
};

struct EvalReport {
    std::vector<ModelEval> models;
    nlohmann::json metadata = nlohmann::json::object();

    const ModelEval& model(std::string_view name) const;
};

/// Builds a ModelEval from T x N prediction/truth matrices.
ModelEval evaluate_model(std::string name, std::span<const std::string> tickers, const Eigen::MatrixXi& pred,
                         const Eigen::MatrixXi& truth, const Eigen::MatrixXd* price_pred = nullptr,
                         const Eigen::MatrixXd* price_truth = nullptr);

nlohmann::json to_json(const ClassificationMetrics& m);
nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

/// Flat model x metric table.
void write_report_csv(std::ostream& out, const EvalReport& r);

}  // namespace cmtf::eval
