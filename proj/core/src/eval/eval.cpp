#include "cmtf/eval/eval.hpp"

#include <cmath>
#include <ostream>

#include "cmtf/error.hpp"
#include "cmtf/log.hpp"
#include "../util/csv.hpp"

namespace cmtf::eval {

ZeroChange zero_change_predict(const Eigen::MatrixXd& closes) {
    if (closes.rows() < 2) throw DataError("zero_change_predict: need at least 2 days");
    ZeroChange z;
    z.price = closes;
    z.direction = Eigen::MatrixXi::Zero(closes.rows(), closes.cols());
    for (Eigen::Index t = 1; t < closes.rows(); ++t)
        for (Eigen::Index i = 0; i < closes.cols(); ++i) z.direction(t, i) = closes(t, i) > closes(t - 1, i) ? 1 : 0;
    return z;
}

LinearModel linear_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (x.rows() != y.size()) throw ContractError("linear_fit: design and target lengths differ");
    if (x.rows() == 0) throw DataError("linear_fit: no rows");
    if (!x.allFinite() || !y.allFinite()) throw NumericError("linear_fit: non-finite input");
    const Eigen::Index p = x.cols();
    Eigen::MatrixXd a(x.rows(), p + 1);
    a.leftCols(p) = x;
    a.col(p).setOnes();
    Eigen::MatrixXd gram = a.transpose() * a;
    const Eigen::VectorXd rhs = a.transpose() * y;

    LinearModel m;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    bool ok = llt.info() == Eigen::Success && x.rows() > p && llt.rcond() > 1e-12;
    if (!ok) {
        m.ridge_fallback = true;
        log::warn("linear_fit: design is rank deficient or ill-conditioned; using ridge penalty 1e-8");
        gram.diagonal().array() += 1e-8;
        llt.compute(gram);
        if (llt.info() != Eigen::Success) throw NumericError("linear_fit: normal equations are not positive definite");
    }
    const Eigen::VectorXd beta = llt.solve(rhs);
    if (!beta.allFinite()) throw NumericError("linear_fit: non-finite coefficients");
    m.slopes = beta.head(p);
    m.intercept = beta(p);
    return m;
}

double linear_predict(const LinearModel& m, const Eigen::VectorXd& x) {
    if (x.size() != m.slopes.size()) throw ContractError("linear_predict: feature count mismatch");
    return m.slopes.dot(x) + m.intercept;
}

Eigen::VectorXd linear_predict(const LinearModel& m, const Eigen::MatrixXd& x) {
    if (x.cols() != m.slopes.size()) throw ContractError("linear_predict: feature count mismatch");
    return (x * m.slopes).array() + m.intercept;
}

ConfusionCounts confusion(std::span<const int> pred, std::span<const int> truth) {
    if (pred.size() != truth.size()) {
        throw ContractError("metrics: " + std::to_string(pred.size()) + " predictions for " +
                            std::to_string(truth.size()) + " labels");
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if ((pred[i] != 0 && pred[i] != 1) || (truth[i] != 0 && truth[i] != 1)) {
            throw ContractError("metrics: values must be 0 or 1");
        }
        if (pred[i] == 1) {
            (truth[i] == 1 ? c.tp : c.fp)++;
        } else {
            (truth[i] == 1 ? c.fn : c.tn)++;
        }
    }
    return c;
}

ClassificationMetrics metrics_from_counts(const ConfusionCounts& c) {
    ClassificationMetrics m;
    m.counts = c;
    const auto d = [](long v) { return static_cast<double>(v); };
    if (c.tp + c.fp == 0) {
        m.precision_undefined = true;
    } else {
        m.precision = d(c.tp) / d(c.tp + c.fp);
    }
    if (c.tp + c.fn == 0) {
        m.recall_undefined = true;
    } else {
        m.recall = d(c.tp) / d(c.tp + c.fn);
    }
    if (m.precision + m.recall > 0.0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    if (c.total() > 0) m.accuracy = d(c.tp + c.tn) / d(c.total());
    return m;
}

ClassificationMetrics classification_metrics(std::span<const int> pred, std::span<const int> truth) {
    return metrics_from_counts(confusion(pred, truth));
}

RegressionMetrics regression_metrics(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw ContractError("regression_metrics: length mismatch");
    if (pred.empty()) throw ContractError("regression_metrics: no values");
    std::string zeros;
    int n_zero = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == 0.0) {
            if (n_zero++ < 20) zeros += (zeros.empty() ? "" : ", ") + std::to_string(i);
        }
    }
    if (n_zero > 0) {
        throw DataError("regression_metrics: MAPE undefined, truth is zero at rows " + zeros +
                        (n_zero > 20 ? " ..." : ""));
    }
    double se = 0.0, ape = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - truth[i];
        se += e * e;
        ape += std::abs(e / truth[i]);
    }
    const double n = static_cast<double>(pred.size());
    return {std::sqrt(se / n), 100.0 * ape / n};
}

const ModelEval& EvalReport::model(std::string_view name) const {
    for (const auto& m : models)
        if (m.model == name) return m;
    throw ContractError("report has no model '" + std::string(name) + "'");
}

ModelEval evaluate_model(std::string name, std::span<const std::string> tickers, const Eigen::MatrixXi& pred,
                         const Eigen::MatrixXi& truth, const Eigen::MatrixXd* price_pred,
                         const Eigen::MatrixXd* price_truth) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
        throw ContractError("evaluate_model: prediction and truth shapes differ");
    }
    if (static_cast<std::size_t>(pred.cols()) != tickers.size()) throw ContractError("evaluate_model: ticker count");
    ModelEval m;
    m.model = std::move(name);
    m.tickers.assign(tickers.begin(), tickers.end());
    ConfusionCounts pooled;
    for (Eigen::Index i = 0; i < pred.cols(); ++i) {
        const Eigen::VectorXi p = pred.col(i), t = truth.col(i);
        const auto c = confusion({p.data(), static_cast<std::size_t>(p.size())},
                                 {t.data(), static_cast<std::size_t>(t.size())});
        pooled += c;
        m.per_stock.push_back(metrics_from_counts(c));
    }
    m.aggregate = metrics_from_counts(pooled);
    if (price_pred && price_truth) {
        if (price_pred->rows() != price_truth->rows() || price_pred->cols() != price_truth->cols()) {
            throw ContractError("evaluate_model: price shapes differ");
        }
        // Column-major storage pools every (stock, day) pair.
        m.regression = regression_metrics({price_pred->data(), static_cast<std::size_t>(price_pred->size())},
                                          {price_truth->data(), static_cast<std::size_t>(price_truth->size())});
    }
    return m;
}

nlohmann::json to_json(const ClassificationMetrics& m) {
    return {{"tp", m.counts.tp},
            {"fp", m.counts.fp},
            {"fn", m.counts.fn},
            {"tn", m.counts.tn},
            {"precision", m.precision},
            {"recall", m.recall},
            {"f1", m.f1},
            {"accuracy", m.accuracy},
            {"precision_undefined", m.precision_undefined},
            {"recall_undefined", m.recall_undefined}};
}

namespace {

ClassificationMetrics metrics_from_json(const nlohmann::json& j) {
    ConfusionCounts c{j.at("tp").get<long>(), j.at("fp").get<long>(), j.at("fn").get<long>(), j.at("tn").get<long>()};
    return metrics_from_counts(c);
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json models = nlohmann::json::array();
    for (const auto& m : r.models) {
        nlohmann::json per = nlohmann::json::object();
        for (std::size_t i = 0; i < m.tickers.size(); ++i) per[m.tickers[i]] = to_json(m.per_stock[i]);
        nlohmann::json e{{"model", m.model}, {"aggregate", to_json(m.aggregate)}, {"per_stock", per}};
        if (m.regression) e["regression"] = {{"rmse", m.regression->rmse}, {"mape", m.regression->mape}};
        models.push_back(std::move(e));
    }
    return {{"averaging", "micro"}, {"metadata", r.metadata}, {"models", models}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
    try {
        EvalReport r;
        r.metadata = j.at("metadata");
        for (const auto& e : j.at("models")) {
            ModelEval m;
            m.model = e.at("model").get<std::string>();
            m.aggregate = metrics_from_json(e.at("aggregate"));
            for (const auto& [ticker, v] : e.at("per_stock").items()) {
                m.tickers.push_back(ticker);
                m.per_stock.push_back(metrics_from_json(v));
            }
            if (e.contains("regression")) {
                m.regression = RegressionMetrics{e["regression"].at("rmse").get<double>(),
                                                 e["regression"].at("mape").get<double>()};
            }
            r.models.push_back(std::move(m));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("eval report: ") + e.what());
    }
}

void write_report_csv(std::ostream& out, const EvalReport& r) {
    out << "model,precision,recall,f1,accuracy,tp,fp,fn,tn,rmse,mape\n";
    for (const auto& m : r.models) {
        const auto& a = m.aggregate;
        out << m.model << ',' << util::format_double(a.precision) << ',' << util::format_double(a.recall) << ','
            << util::format_double(a.f1) << ',' << util::format_double(a.accuracy) << ',' << a.counts.tp << ','
            << a.counts.fp << ',' << a.counts.fn << ',' << a.counts.tn << ',';
        if (m.regression) out << util::format_double(m.regression->rmse) << ',' << util::format_double(m.regression->mape);
        else out << ',';
        out << '\n';
    }
}

}  // namespace cmtf::eval
