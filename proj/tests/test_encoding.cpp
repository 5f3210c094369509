#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

#include "cmtf/encoding/encoding.hpp"
#include "cmtf/error.hpp"
#include "oracles.hpp"

using namespace cmtf::encoding;
using cmtf::ingest::Calendar;
using cmtf::ingest::Date;

namespace {

Calendar days(int n, int start = 0) {
    Calendar c;
    for (int i = 0; i < n; ++i) c.dates.push_back(Date{start + i});
    return c;
}

// Two tickers on weekdays, macro daily + monthly, news, reports.
Modalities fixture(int n_days = 120) {
    Modalities m;
    std::mt19937_64 rng(17);
    std::normal_distribution<double> z(0, 1);
    std::vector<Date> cal;
    for (int d = 18000; static_cast<int>(cal.size()) < n_days; ++d) {
        const int wd = ((d % 7) + 7 + 3) % 7;
        if (wd < 5) cal.push_back(Date{d});
    }
    for (const char* t : {"AAA", "BBB"}) {
        cmtf::ingest::PriceSeries p{t, {}};
        double c = 50;
        for (auto d : cal) {
            c *= std::exp(0.01 * z(rng));
            p.rows.push_back({d, c, c * 1.01, c * 0.99, c, 1000 + 10 * z(rng)});
        }
        m.prices.push_back(p);
        cmtf::ingest::NewsTensorSeries n{t, {}};
        for (std::size_t i = 0; i < cal.size(); i += 3) n.rows.push_back({cal[i], 1, 0, z(rng)});
        m.news.push_back(n);
        cmtf::ingest::ReportRatingSeries r{t, {}};
        r.rows.push_back({cal[0], {1, 2, 3, 4, 5}});
        r.rows.push_back({cal[65], {2, 3, 4, 5, 6}});
        m.reports.push_back(r);
    }
    cmtf::ingest::MacroSeries y{"yield", cmtf::ingest::Granularity::Daily, {}, {}};
    for (auto d : cal) {
        y.dates.push_back(d);
        y.values.push_back(1.0 + 0.01 * z(rng));
    }
    cmtf::ingest::MacroSeries cpi{"cpi", cmtf::ingest::Granularity::Monthly, {}, {}};
    for (std::size_t i = 0; i < cal.size(); i += 21) {
        cpi.dates.push_back(cal[i]);
        cpi.values.push_back(100.0 + static_cast<double>(i));
    }
    m.macro = {y, cpi};
    return m;
}

std::set<char> tags_of(const AlignedFrame& f) {
    std::set<char> s;
    for (const auto& c : f.columns) s.insert(tag(c.modality));
    return s;
}

}  // namespace

TEST_CASE("forward fill examples") {
    const std::vector<Date> d0{Date{0}};
    const std::vector<double> v0{5};
    CHECK(forward_fill_daily(d0, v0, days(4)) == std::vector<double>{5, 5, 5, 5});
    const std::vector<Date> d1{Date{0}, Date{2}};
    const std::vector<double> v1{1, 3};
    CHECK(forward_fill_daily(d1, v1, days(4)) == std::vector<double>{1, 1, 3, 3});
    // Before the first observation the first value is carried back.
    const std::vector<Date> d2{Date{5}};
    CHECK(forward_fill_daily(d2, v0, days(3, 2)) == std::vector<double>{5, 5, 5});
}

TEST_CASE("monthly series fill matches a hand-written step function") {
    const Calendar cal = days(90);
    const std::vector<Date> d{Date{0}, Date{31}, Date{59}};
    const std::vector<double> v{10, 20, 30};
    const auto out = forward_fill_daily(d, v, cal);
    for (int t = 0; t < 90; ++t) {
        const double expect = t < 31 ? 10 : (t < 59 ? 20 : 30);
        CHECK(out[static_cast<std::size_t>(t)] == expect);
    }
}

TEST_CASE("wma examples") {
    const std::vector<double> x{1, 2, 3};
    CHECK(wma(x, {3})[2] == doctest::Approx(14.0 / 6.0).epsilon(1e-15));
    CHECK(wma(x, {1}) == x);
    const std::vector<double> c(40, 2.5);
    for (double v : wma(c, {7})) CHECK(v == doctest::Approx(2.5).epsilon(1e-15));
    CHECK_THROWS_AS(wma(x, {0}), cmtf::ConfigError);
}

TEST_CASE("wma matches the direct weighted sum") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> z(0, 1);
    for (int rep = 0; rep < 100; ++rep) {
        const int b = 1 + static_cast<int>(rng() % 40);
        std::vector<double> s(1 + rng() % 200);
        for (auto& v : s) v = z(rng);
        const auto got = wma(s, {b});
        const auto ref = oracle::wma(s, b);
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(got[i] - ref[i]) <= 1e-12);
    }
}

TEST_CASE("scaler hand case and zero-variance drop") {
    AlignedFrame f;
    f.calendar = days(3);
    f.matrix.resize(3, 2);
    f.matrix << 0, 7, 2, 7, 5, 9;
    f.columns = {{"a", Modality::History, "X"}, {"flat", Modality::Macro, "flat"}};
    const auto st = fit_scaler(f, {0, 2});
    CHECK(st.mean[0] == 1.0);
    CHECK(st.stddev[0] == 1.0);
    CHECK(st.dropped == std::vector<std::string>{"flat"});
    const auto s = apply_scaler(f, st);
    REQUIRE(s.cols() == 1);
    CHECK(s.matrix(0, 0) == -1.0);
    CHECK(s.matrix(1, 0) == 1.0);
    CHECK(s.matrix(2, 0) == 4.0);
    CHECK(s.scaled);
    CHECK_THROWS_AS(apply_scaler(s, st), cmtf::ContractError);
}

TEST_CASE("scaler statistics ignore rows outside the training range") {
    auto m = fixture();
    const auto f = fuse(m, {5}, {});
    const auto a = fit_scaler(f, {0, 60});
    auto g = f;
    g.matrix.bottomRows(30).setConstant(1e6);
    const auto b = fit_scaler(g, {0, 60});
    CHECK(a == b);
}

TEST_CASE("scaled training columns have zero mean and unit std") {
    const auto f = fuse(fixture(), {5}, {});
    const auto s = apply_scaler(f, fit_scaler(f, {0, 80}));
    for (Eigen::Index j = 0; j < s.matrix.cols(); ++j) {
        const Eigen::VectorXd col = s.matrix.col(j).head(80);
        const double mean = col.mean();
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::sqrt((col.array() - mean).square().mean()) == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("fuse column layout") {
    const auto m = fixture();
    const auto full = fuse(m, {30}, {});
    // 2 tickers x (5 price + 3 news + 5 report) + 2 macro
    CHECK(full.cols() == 2 * 5 + 2 + 2 * 3 + 2 * 5);
    CHECK(full.rows() == 120);
    CHECK(tags_of(full) == std::set<char>{'h', 'm', 'n', 'r'});
    CHECK(full.columns.front().name == "AAA.open");
    CHECK(full.columns_with(Modality::News).size() == 6);

    const auto hm = fuse(m, {30}, {false, false});
    CHECK(tags_of(hm) == std::set<char>{'h', 'm'});
    CHECK(hm.cols() == 12);

    Modalities one;
    one.prices = {m.prices[0]};
    const auto p = fuse(one, {30}, {});
    CHECK(p.cols() == 5);
}

TEST_CASE("disabling news leaves the other columns untouched") {
    const auto m = fixture();
    const auto with_news = fuse(m, {10}, {true, true});
    const auto without = fuse(m, {10}, {false, true});
    for (std::size_t j = 0; j < without.cols(); ++j) {
        const auto& name = without.columns[j].name;
        const auto names = with_news.names();
        const auto k = static_cast<Eigen::Index>(std::find(names.begin(), names.end(), name) - names.begin());
        REQUIRE(k < static_cast<Eigen::Index>(names.size()));
        CHECK(with_news.matrix.col(k) == without.matrix.col(static_cast<Eigen::Index>(j)));
    }
}

TEST_CASE("coarse series are filled then smoothed") {
    const auto m = fixture();
    const auto f = fuse(m, {4}, {});
    const auto names = f.names();
    const auto j = static_cast<Eigen::Index>(std::find(names.begin(), names.end(), "cpi") - names.begin());
    std::vector<double> filled = forward_fill_daily(m.macro[1].dates, m.macro[1].values, f.calendar);
    const auto ref = oracle::wma(filled, 4);
    for (std::size_t t = 0; t < ref.size(); ++t) CHECK(f.matrix(static_cast<Eigen::Index>(t), j) == doctest::Approx(ref[t]).epsilon(1e-12));
    // Daily macro passes through unsmoothed.
    const auto y = static_cast<Eigen::Index>(std::find(names.begin(), names.end(), "yield") - names.begin());
    CHECK(f.matrix(7, y) == m.macro[0].values[7]);
}

TEST_CASE("weekend news snaps to the next trading day, later row winning") {
    Modalities m;
    // Friday 2021-01-08, Monday 2021-01-11, Tuesday 2021-01-12
    const Date fri = Date::from_ymd(2021, 1, 8), mon = Date::from_ymd(2021, 1, 11), tue = Date::from_ymd(2021, 1, 12);
    m.prices = {{"AAA", {{fri, 1, 1, 1, 1, 1}, {mon, 1, 1, 1, 2, 1}, {tue, 1, 1, 1, 3, 1}}}};
    m.news = {{"AAA",
               {{fri, 0, 0, 0.1},
                {Date::from_ymd(2021, 1, 9), 1, 0, 0.4},
                {Date::from_ymd(2021, 1, 10), 0, 1, -0.7}}}};
    const auto f = fuse(m, {1}, {});
    const auto names = f.names();
    const auto j = static_cast<Eigen::Index>(std::find(names.begin(), names.end(), "AAA.news.score") - names.begin());
    CHECK(f.matrix(0, j) == 0.1);
    CHECK(f.matrix(1, j) == -0.7);
    CHECK(f.matrix(2, j) == -0.7);
}

TEST_CASE("frame csv and manifest round-trip") {
    const auto f = fuse(fixture(40), {3}, {});
    std::stringstream ss;
    write_frame_csv(ss, f);
    const auto cols = columns_from_manifest(manifest_json(f));
    CHECK(cols == f.columns);
    const auto back = read_frame_csv(ss, cols, "frame.csv");
    CHECK(back.calendar.dates == f.calendar.dates);
    CHECK(back.matrix == f.matrix);
}

TEST_CASE("scaler json round-trip") {
    const auto f = fuse(fixture(40), {3}, {});
    const auto st = fit_scaler(f, {0, 30});
    CHECK(scaler_from_json(to_json(st)) == st);
}

TEST_CASE("aligned closes follow ticker order") {
    const auto m = fixture(20);
    const auto f = fuse(m, {3}, {});
    const auto c = aligned_closes(m.prices, f.calendar);
    CHECK(c.tickers == std::vector<std::string>{"AAA", "BBB"});
    CHECK(c.closes(5, 1) == m.prices[1].rows[5].close);
}
