#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "cmtf/error.hpp"
#include "cmtf/interp/interp.hpp"
#include "oracles.hpp"

using namespace cmtf::interp;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> z(0, 1);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = z(rng);
    return m;
}

Eigen::MatrixXd standardize(const Eigen::MatrixXd& m) {
    Eigen::MatrixXd z = m.rowwise() - m.colwise().mean();
    for (Eigen::Index j = 0; j < z.cols(); ++j) z.col(j) /= std::sqrt(z.col(j).squaredNorm() / static_cast<double>(z.rows()));
    return z;
}

// Cyclic block coordinate descent, exact per-block minimisation.
Eigen::MatrixXd reference_group_lasso(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double alpha, int sweeps) {
    const double n = static_cast<double>(x.rows());
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(x.cols(), y.cols());
    Eigen::MatrixXd r = y;
    for (int s = 0; s < sweeps; ++s) {
        for (Eigen::Index d = 0; d < x.cols(); ++d) {
            const double nd = x.col(d).squaredNorm() / n;
            r += x.col(d) * w.row(d);
            const Eigen::RowVectorXd z = x.col(d).transpose() * r / n;
            const double zn = z.norm();
            w.row(d) = zn <= alpha ? Eigen::RowVectorXd::Zero(y.cols()) : Eigen::RowVectorXd((1 - alpha / zn) * z / nd);
            r -= x.col(d) * w.row(d);
        }
    }
    return w;
}

std::vector<std::string> names_for(Eigen::Index n) {
    std::vector<std::string> out;
    for (Eigen::Index i = 0; i < n; ++i) out.push_back("x" + std::to_string(i));
    return out;
}

}  // namespace

TEST_CASE("pearson matrix against the direct formula") {
    std::mt19937_64 rng(2);
    Eigen::MatrixXd x = gaussian(50, 5, rng);
    x.col(3) = 0.5 * x.col(0) + 0.1 * x.col(3);
    const auto c = pearson_matrix(x);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) CHECK(c(i, j) == doctest::Approx(oracle::pearson(x.col(i), x.col(j))).epsilon(1e-12));
    x.col(4).setConstant(3.0);
    const auto z = pearson_matrix(x);
    CHECK(z(4, 4) == 1.0);
    CHECK(z(4, 0) == 0.0);
}

TEST_CASE("correlation filter examples") {
    Eigen::MatrixXd two(4, 2);
    two << 1, 1, -1, 1, 1, -1, -1, -1;  // exactly uncorrelated
    const auto r = correlation_filter(two, {0.1});
    CHECK(r.retained == std::vector<std::size_t>{0, 1});

    std::mt19937_64 rng(4);
    Eigen::MatrixXd dup = gaussian(200, 3, rng);
    dup.col(1) = dup.col(0);
    const auto d = correlation_filter(dup, {0.5});
    CHECK(d.retained == std::vector<std::size_t>{2});
}

TEST_CASE("correlation filter membership matches brute force") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        Eigen::MatrixXd x = gaussian(60, 5, rng);
        x.col(1) += x.col(0);
        x.col(2) += 0.3 * x.col(1);
        std::vector<double> mac(5, 0.0);
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 5; ++j)
                if (i != j) mac[static_cast<std::size_t>(i)] += std::abs(oracle::pearson(x.col(i), x.col(j))) / 4.0;
        }
        const double tau = std::accumulate(mac.begin(), mac.end(), 0.0) / 5.0;
        std::vector<std::size_t> expect;
        for (std::size_t i = 0; i < 5; ++i)
            if (mac[i] <= tau) expect.push_back(i);
        const auto r = correlation_filter(x, {});
        CHECK(r.threshold == doctest::Approx(tau).epsilon(1e-12));
        CHECK(r.retained == expect);
    }
}

TEST_CASE("lag expansion") {
    Eigen::MatrixXd x(3, 1);
    x << 1, 2, 3;
    const Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, 1);
    const std::vector<std::size_t> f{0};
    const auto d = expand_lags(x, f, 1, 2, y);
    Eigen::MatrixXd expect(2, 2);
    expect << 2, 1, 3, 2;
    CHECK(d.x == expect);
    CHECK(d.lag == std::vector<int>{0, 1});

    std::mt19937_64 rng(1);
    const Eigen::MatrixXd m = gaussian(10, 4, rng);
    const std::vector<std::size_t> sel{1, 3};
    const auto l0 = expand_lags(m, sel, 0, 10, Eigen::MatrixXd::Zero(10, 2));
    CHECK(l0.x.col(0) == m.col(1));
    CHECK(l0.x.col(1) == m.col(3));
    CHECK_THROWS_AS(expand_lags(x, f, 1, 3, y), cmtf::WindowError);
}

TEST_CASE("group lasso zero solution at alpha_max") {
    std::mt19937_64 rng(3);
    const Eigen::MatrixXd x = gaussian(40, 6, rng), y = gaussian(40, 2, rng);
    const double amax = group_lasso_alpha_max(x, y, true);
    GroupLassoOptions o;
    o.alpha = amax;
    const auto r = group_lasso_fit(x, y, o);
    CHECK((r.weights.array() == 0.0).all());
    o.alpha = 0.999 * amax;
    CHECK((group_lasso_fit(x, y, o).weights.array() != 0.0).any());
}

TEST_CASE("group lasso identity design recovers targets") {
    std::mt19937_64 rng(5);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Identity(6, 6), y = gaussian(6, 3, rng);
    GroupLassoOptions o;
    o.alpha = 0.0;
    o.standardize = false;
    const auto r = group_lasso_fit(x, y, o);
    CHECK((r.weights - y).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("group lasso matches block coordinate descent") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        const Eigen::MatrixXd x = standardize(gaussian(40, 6, rng));
        Eigen::MatrixXd y = x.leftCols(2) * 0.8 + 0.5 * gaussian(40, 2, rng);
        y = standardize(y);
        GroupLassoOptions o;
        o.alpha = 0.1;
        o.standardize = false;
        const auto r = group_lasso_fit(x, y, o);
        const auto ref = reference_group_lasso(x, y, 0.1, 20000);
        CHECK(std::abs(r.objective - group_lasso_objective(x, y, ref, 0.1)) < 1e-6);
        CHECK(r.kkt_residual <= 10 * o.tol);
        CHECK(group_lasso_kkt(x, y, r.weights, 0.1) <= 10 * o.tol);
    }
}

TEST_CASE("group lasso objective trace never increases") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        Eigen::MatrixXd x = gaussian(30, 20, rng);
        x.col(1) = x.col(0) + 0.01 * x.col(1);  // near-collinear pair
        const Eigen::MatrixXd y = gaussian(30, 3, rng);
        GroupLassoOptions o;
        o.alpha = 0.05;
        o.record_trace = true;
        const auto r = group_lasso_fit(x, y, o);
        CHECK(r.monotone);
        for (std::size_t k = 1; k < r.trace.size(); ++k) CHECK(r.trace[k] <= r.trace[k - 1]);
    }
}

TEST_CASE("group lasso sparsity pattern is invariant to column scaling") {
    std::mt19937_64 rng(8);
    const Eigen::MatrixXd x = gaussian(60, 8, rng);
    const Eigen::MatrixXd y = x.col(2) * 2.0 + gaussian(60, 1, rng);
    GroupLassoOptions o;
    o.alpha = 0.1;
    const auto a = group_lasso_fit(x, y, o);
    Eigen::MatrixXd xs = x;
    xs.col(2) *= 1000.0;
    xs.col(5) *= 0.001;
    const auto b = group_lasso_fit(xs, y, o);
    for (Eigen::Index d = 0; d < 8; ++d) CHECK((a.weights.row(d).norm() > 0) == (b.weights.row(d).norm() > 0));
}

TEST_CASE("group lasso input errors") {
    GroupLassoOptions o;
    CHECK_THROWS_AS(group_lasso_fit(Eigen::MatrixXd::Ones(5, 2), Eigen::MatrixXd::Ones(4, 1), o), cmtf::DimensionError);
    o.alpha = -1;
    CHECK_THROWS_AS(group_lasso_fit(Eigen::MatrixXd::Ones(5, 2), Eigen::MatrixXd::Ones(5, 1), o), cmtf::ConfigError);
    std::mt19937_64 rng(1);
    GroupLassoOptions tight;
    tight.alpha = 0.01;
    tight.max_iter = 1;
    CHECK_THROWS_AS(group_lasso_fit(gaussian(30, 10, rng), gaussian(30, 2, rng), tight), cmtf::ConvergenceError);
}

TEST_CASE("selection config validation") {
    SelectionConfig c;
    CHECK_NOTHROW(c.validate());
    c.folds = 1;
    CHECK_THROWS_AS(c.validate(), cmtf::ConfigError);
    c = {};
    c.survival = 0.0;
    CHECK_THROWS_AS(c.validate(), cmtf::ConfigError);
    c = {};
    c.alpha = -0.1;
    CHECK_THROWS_AS(c.validate(), cmtf::ConfigError);
    c = {};
    c.corr.threshold = 0.0;
    CHECK_THROWS_AS(c.validate(), cmtf::ConfigError);
}

TEST_CASE("stability selection keeps a planted feature") {
    std::mt19937_64 rng(21);
    const Eigen::MatrixXd x = gaussian(460, 11, rng);
    const Eigen::MatrixXd y = 3.0 * x.col(0) + 0.01 * gaussian(460, 1, rng);
    SelectionConfig c;
    c.corr.threshold = 0.5;
    const auto rep = stability_select(x, y, names_for(11), c);
    REQUIRE(rep.corr.retained.size() == 11);
    CHECK(rep.votes[0] == 1.0);
    CHECK(final_feature_names(rep) == std::vector<std::string>{"x0"});
    CHECK(rep.folds.size() == 5);
    for (const auto& f : rep.folds) {
        CHECK(f.rows.size() == (460 - 1) / 5);
        CHECK(f.fit.kkt_residual <= 10 * c.tol);
    }
    CHECK(rep.folds.back().rows.end == 460);
}

TEST_CASE("stability selection with alpha above every fold's alpha_max selects nothing") {
    std::mt19937_64 rng(22);
    const Eigen::MatrixXd x = gaussian(201, 4, rng), y = gaussian(201, 2, rng);
    SelectionConfig c;
    c.window = 40;
    c.corr.threshold = 1.0;
    c.alpha = 10.0;
    const auto rep = stability_select(x, y, names_for(4), c);
    CHECK(rep.final_features.empty());
}

TEST_CASE("vote arithmetic: active in one of two folds with threshold 0.8") {
    std::mt19937_64 rng(23);
    Eigen::MatrixXd x = gaussian(121, 3, rng);
    Eigen::MatrixXd y(121, 1);
    // x1 drives the target only in the second half (the second fold).
    for (Eigen::Index t = 0; t < 121; ++t) y(t, 0) = 2.0 * x(t, 0) + (t >= 61 ? 2.0 * x(t, 1) : 0.0);
    SelectionConfig c;
    c.folds = 2;
    c.window = 60;
    c.corr.threshold = 1.0;
    c.survival = 0.8;
    const auto rep = stability_select(x, y, names_for(3), c);
    CHECK(rep.votes[0] == 1.0);
    CHECK(rep.votes[1] == 0.5);
    CHECK(final_feature_names(rep) == std::vector<std::string>{"x0"});
}

TEST_CASE("selected set is invariant to column order") {
    std::mt19937_64 rng(24);
    const Eigen::MatrixXd x = gaussian(300, 6, rng);
    const Eigen::MatrixXd y = 2.0 * x.col(1) - x.col(4) + 0.1 * gaussian(300, 1, rng);
    SelectionConfig c;
    c.window = 50;
    c.corr.threshold = 0.5;
    const auto a = final_feature_names(stability_select(x, y, names_for(6), c));
    const std::vector<int> perm{5, 3, 1, 0, 4, 2};
    Eigen::MatrixXd xp(300, 6);
    std::vector<std::string> np;
    for (int j = 0; j < 6; ++j) {
        xp.col(j) = x.col(perm[static_cast<std::size_t>(j)]);
        np.push_back("x" + std::to_string(perm[static_cast<std::size_t>(j)]));
    }
    auto b = final_feature_names(stability_select(xp, y, np, c));
    std::sort(b.begin(), b.end());
    CHECK(a == b);
}

TEST_CASE("parallel folds give the same report") {
    std::mt19937_64 rng(25);
    const Eigen::MatrixXd x = gaussian(300, 6, rng);
    const Eigen::MatrixXd y = x.col(2) + 0.1 * gaussian(300, 2, rng);
    SelectionConfig c;
    c.window = 50;
    c.corr.threshold = 0.5;
    const auto a = stability_select(x, y, names_for(6), c);
    c.parallel = true;
    const auto b = stability_select(x, y, names_for(6), c);
    CHECK(to_json(a) == to_json(b));
}

TEST_CASE("too few rows is a window error") {
    std::mt19937_64 rng(26);
    SelectionConfig c;
    CHECK_THROWS_AS(stability_select(gaussian(450, 3, rng), gaussian(450, 1, rng), names_for(3), c), cmtf::WindowError);
}

TEST_CASE("ledger counts") {
    ImportanceLedger led({"a", "b", "c"});
    const std::vector<std::string> sel{"a", "c"};
    const std::vector<std::string> only_a{"a"};
    led.update(sel, 21);
    led.update(only_a, 42);
    led.update(sel, 63);
    CHECK(led.count("a") == 3);
    CHECK(led.count("c") == 2);
    CHECK(led.count("b") == 0);
    CHECK(led.features().size() == 3);
    CHECK(led.history().size() == 3);
    CHECK(led.history()[1] == std::vector<int>{2, 0, 1});
    CHECK_THROWS_AS(led.update(sel, 63), cmtf::ContractError);
    CHECK_THROWS_AS(led.update(sel, 10), cmtf::ContractError);
    const auto j = to_json(led);
    CHECK(j["counts"]["a"] == 3);
}

TEST_CASE("ledger over a monthly walk equals replayed selections") {
    std::mt19937_64 rng(27);
    const Eigen::MatrixXd x = gaussian(400, 5, rng);
    Eigen::MatrixXd y(400, 1);
    for (Eigen::Index t = 0; t < 400; ++t) y(t, 0) = x(t, 0) + (t > 300 ? 1.5 * x(t, 3) : 0.0);
    SelectionConfig c;
    c.window = 50;
    c.folds = 3;
    c.corr.threshold = 0.5;
    ImportanceLedger led(names_for(5));
    std::vector<int> replay(5, 0);
    for (Eigen::Index end = 160; end <= 400; end += 21) {
        const auto rep = stability_select(x.topRows(end), y.topRows(end), names_for(5), c);
        led.update(rep, end);
        for (std::size_t j : rep.final_features) replay[j] += 1;
    }
    CHECK(led.counts() == replay);
    CHECK(led.count("x0") == static_cast<int>(led.periods().size()));
}

TEST_CASE("selection report json carries diagnostics") {
    std::mt19937_64 rng(28);
    const Eigen::MatrixXd x = gaussian(300, 4, rng);
    const Eigen::MatrixXd y = x.col(0) + 0.1 * gaussian(300, 1, rng);
    SelectionConfig c;
    c.window = 50;
    c.corr.threshold = 0.5;
    const auto j = to_json(stability_select(x, y, names_for(4), c));
    CHECK(j["features"].size() == 4);
    CHECK(j["folds"].size() == 5);
    CHECK(j["folds"][0].contains("kkt_residual"));
    CHECK(j["folds"][0].contains("iterations"));
    CHECK(j["selected"][0] == "x0");
}

TEST_CASE("group lasso without penalty is least squares") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed + 100);
        const Eigen::MatrixXd x = gaussian(80, 5, rng), y = gaussian(80, 2, rng);
        GroupLassoOptions o;
        o.alpha = 0.0;
        o.standardize = false;
        const auto r = group_lasso_fit(x, y, o);
        const Eigen::MatrixXd ols = (x.transpose() * x).ldlt().solve(x.transpose() * y);
        CHECK((r.weights - ols).cwiseAbs().maxCoeff() < 1e-6);
    }
}
