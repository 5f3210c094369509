#include <cmath>

#include "cmtf/error.hpp"
#include "cmtf/interp/interp.hpp"

namespace cmtf::interp {

Eigen::MatrixXd pearson_matrix(const Eigen::MatrixXd& x) {
    const Eigen::Index d = x.cols();
    const double n = static_cast<double>(x.rows());
    Eigen::MatrixXd z = x.rowwise() - x.colwise().mean();
    Eigen::VectorXd sd(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        sd(j) = std::sqrt(z.col(j).squaredNorm() / n);
        const double mean_abs = x.col(j).cwiseAbs().mean();
        if (sd(j) > 1e-12 * std::max(1.0, mean_abs)) {
            z.col(j) /= sd(j);
        } else {
            z.col(j).setZero();
        }
    }
    Eigen::MatrixXd c = (z.transpose() * z) / n;
    for (Eigen::Index j = 0; j < d; ++j) c(j, j) = 1.0;
    return c;
}

CorrelationResult correlation_filter(const Eigen::MatrixXd& x, const CorrelationRule& rule) {
    if (x.rows() < 3) throw WindowError("correlation_filter: need at least 3 rows, got " + std::to_string(x.rows()));
    if (x.cols() < 1) throw DataError("correlation_filter: frame has no columns");
    CorrelationResult res;
    const Eigen::Index d = x.cols();
    if (d == 1) {
        res.retained = {0};
        res.mean_abs_corr = {0.0};
        res.threshold = rule.threshold.value_or(0.0);
        return res;
    }
    const Eigen::MatrixXd c = pearson_matrix(x);
    res.mean_abs_corr.resize(static_cast<std::size_t>(d));
    for (Eigen::Index j = 0; j < d; ++j) {
        const double off = c.col(j).cwiseAbs().sum() - std::abs(c(j, j));
        res.mean_abs_corr[static_cast<std::size_t>(j)] = off / static_cast<double>(d - 1);
    }
    if (rule.threshold) {
        res.threshold = *rule.threshold;
    } else {
        double s = 0.0;
        for (double v : res.mean_abs_corr) s += v;
        res.threshold = s / static_cast<double>(d);
    }
    for (std::size_t j = 0; j < res.mean_abs_corr.size(); ++j) {
        if (res.mean_abs_corr[j] < res.threshold) res.retained.push_back(j);
    }
    return res;
}

LaggedDesign expand_lags(const Eigen::MatrixXd& x, std::span<const std::size_t> features, int lag_order,
                         std::size_t window, const Eigen::MatrixXd& targets) {
    if (lag_order < 0) throw ConfigError("lag order must be non-negative");
    if (targets.rows() != x.rows()) throw DimensionError("expand_lags: targets and frame have different row counts");
    const std::size_t lags = static_cast<std::size_t>(lag_order);
    const std::size_t need = window + lags;
    if (window == 0 || static_cast<std::size_t>(x.rows()) < need) {
        throw WindowError("expand_lags: window " + std::to_string(window) + " with lag order " +
                          std::to_string(lag_order) + " requires at least " + std::to_string(need) + " rows, got " +
                          std::to_string(x.rows()));
    }
    LaggedDesign out;
    const Eigen::Index start = x.rows() - static_cast<Eigen::Index>(window);
    const Eigen::Index w = static_cast<Eigen::Index>(window);
    out.x.resize(w, static_cast<Eigen::Index>(features.size() * (lags + 1)));
    Eigen::Index col = 0;
    for (std::size_t f : features) {
        if (f >= static_cast<std::size_t>(x.cols())) throw DimensionError("expand_lags: feature index out of range");
        for (std::size_t l = 0; l <= lags; ++l) {
            out.x.col(col++) = x.col(static_cast<Eigen::Index>(f)).segment(start - static_cast<Eigen::Index>(l), w);
            out.feature.push_back(f);
            out.lag.push_back(static_cast<int>(l));
        }
    }
    out.y = targets.middleRows(start, w);
    return out;
}

}  // namespace cmtf::interp
