#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmtf/ingest/ingest.hpp"

namespace cmtf::interp {

// ---------------------------------------------------------------------------
// Correlation-guided pre-selection

/// Threshold on a column's mean absolute off-diagonal correlation. With no
/// explicit value the threshold is the mean of those per-column means, so
/// columns more collinear than average are dropped.
struct CorrelationRule {
    std::optional<double> threshold;
};

struct CorrelationResult {
    std::vector<std::size_t> retained;
    std::vector<double> mean_abs_corr;  // one per input column
    double threshold = 0.0;
};

/// Pearson correlation matrix; zero-variance columns correlate 0 with
/// everything (and 1 with themselves).
Eigen::MatrixXd pearson_matrix(const Eigen::MatrixXd& x);

CorrelationResult correlation_filter(const Eigen::MatrixXd& x, const CorrelationRule& rule);

// ---------------------------------------------------------------------------
// Temporal feature expansion

struct LaggedDesign {
    Eigen::MatrixXd x;                // window x |features|*(L+1)
    Eigen::MatrixXd y;                // window x N
    std::vector<std::size_t> feature; // source column of each design column
    std::vector<int> lag;             // lag of each design column
};

/// Uses the trailing `window` rows of `x`. Design columns come in blocks of
/// [x_d(t), x_d(t-1), ..., x_d(t-L)] per selected feature d; `y` is the
/// matching trailing block of the caller-aligned targets.
LaggedDesign expand_lags(const Eigen::MatrixXd& x, std::span<const std::size_t> features, int lag_order,
                         std::size_t window, const Eigen::MatrixXd& targets);

// ---------------------------------------------------------------------------
// Multi-task group LASSO

struct GroupLassoOptions {
    double alpha = 0.05;
    double tol = 1e-8;
    int max_iter = 100000;
    bool standardize = true;     // centre and scale X and Y columns before solving
    bool record_trace = false;   // keep the accepted objective after every iteration
};

struct GroupLassoResult {
    Eigen::MatrixXd weights;  // P x N, rows are groups; standardised units when standardize
    int iterations = 0;
    double objective = 0.0;
    double kkt_residual = 0.0;
    double lipschitz = 0.0;
    double alpha_max = 0.0;
    bool monotone = true;
    std::vector<double> trace;
};

/// Smallest alpha at which the all-zero solution is optimal:
/// max_d ||x_d^T y||_2 / T'.
double group_lasso_alpha_max(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, bool standardize);

/// (1/2T')||Y - XW||_F^2 + alpha * sum_d ||W_d||_2 on the data as given.
double group_lasso_objective(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Eigen::MatrixXd& w,
                             double alpha);

/// Max KKT violation over rows of W (see GroupLassoResult::kkt_residual).
double group_lasso_kkt(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Eigen::MatrixXd& w, double alpha);

/// Accelerated proximal gradient with fixed step 1/L, L = lambda_max(X^T X)/T',
/// block soft-thresholding on each row and a monotone acceptance step.
/// Throws ConvergenceError when max_iter is exhausted.
GroupLassoResult group_lasso_fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const GroupLassoOptions& opts);

// ---------------------------------------------------------------------------
// Stability selection

struct SelectionConfig {
    CorrelationRule corr;
    int lag_order = 1;
    std::size_t window = 90;
    double alpha = 0.05;
    std::size_t folds = 5;
    double survival = 0.8;
    double tol = 1e-8;
    int max_iter = 100000;
    bool parallel = false;

    void validate() const;
};

struct FoldResult {
    ingest::IndexRange rows;
    GroupLassoResult fit;
    std::vector<bool> active;  // per correlation-retained feature
};

struct SelectionReport {
    std::vector<std::string> feature_names;  // all input columns
    CorrelationResult corr;
    std::vector<FoldResult> folds;
    std::vector<double> votes;               // per correlation-retained feature
    std::vector<std::size_t> final_features; // subset of corr.retained
    double survival = 0.8;
    int lag_order = 1;
};

/// Correlation filter, then one group-LASSO fit per contiguous chronological
/// fold; a feature survives when any of its lag groups is active in at least
/// `survival` of the folds. `targets` row t is the value to explain from
/// features at row t (typically next-day closes).
SelectionReport stability_select(const Eigen::MatrixXd& x, const Eigen::MatrixXd& targets,
                                 std::vector<std::string> names, const SelectionConfig& cfg);

std::vector<std::string> final_feature_names(const SelectionReport& report);

// ---------------------------------------------------------------------------
// Importance ledger

/// Cumulative per-period selection counts for a fixed feature list.
class ImportanceLedger {
public:
    ImportanceLedger() = default;
    explicit ImportanceLedger(std::vector<std::string> features);

    /// Adds one to every feature in `report`'s final set. Throws
    /// ContractError unless `period_id` exceeds every recorded period.
    void update(const SelectionReport& report, std::int64_t period_id);
    void update(std::span<const std::string> selected, std::int64_t period_id);

    const std::vector<std::string>& features() const noexcept { return features_; }
    const std::vector<int>& counts() const noexcept { return counts_; }
    int count(const std::string& feature) const;
    const std::vector<std::int64_t>& periods() const noexcept { return periods_; }
    /// counts snapshot after each recorded period
    const std::vector<std::vector<int>>& history() const noexcept { return history_; }

private:
    std::vector<std::string> features_;
    std::vector<int> counts_;
    std::vector<std::int64_t> periods_;
    std::vector<std::vector<int>> history_;
};

nlohmann::json to_json(const SelectionReport& report, const ImportanceLedger* ledger = nullptr);
nlohmann::json to_json(const ImportanceLedger& ledger);

}  // namespace cmtf::interp
