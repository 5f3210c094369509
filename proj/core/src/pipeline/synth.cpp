#include <cmath>
#include <fstream>
#include <random>

#include "cmtf/error.hpp"
#include "cmtf/pipeline/pipeline.hpp"

namespace cmtf::pipeline {

namespace fs = std::filesystem;
using ingest::Date;

namespace {

std::vector<Date> weekdays(Date start, int n) {
    std::vector<Date> out;
    Date d = start;
    while (static_cast<int>(out.size()) < n) {
        // 1970-01-01 was a Thursday; weekday index 0 = Monday.
        const int wd = ((d.days % 7) + 7 + 3) % 7;
        if (wd < 5) out.push_back(d);
        d.days += 1;
    }
    return out;
}

std::string ticker_name(int i) {
    const std::string n = std::to_string(i + 1);
    return "S" + std::string(n.size() < 2 ? 2 - n.size() : 0, '0') + n;
}

// First trading day of each month (or of every third month).
std::vector<std::size_t> period_starts(const std::vector<Date>& cal, int months) {
    std::vector<std::size_t> out;
    int last_key = -1;
    for (std::size_t t = 0; t < cal.size(); ++t) {
        const std::chrono::sys_days sd{std::chrono::days{cal[t].days}};
        const std::chrono::year_month_day ymd{sd};
        const int month0 = static_cast<int>(static_cast<unsigned>(ymd.month())) - 1;
        const int key = static_cast<int>(ymd.year()) * 12 + month0;
        if (month0 % months != 0 || key == last_key) continue;
        last_key = key;
        out.push_back(t);
    }
    return out;
}

}  // namespace

SyntheticData make_synthetic(const SynthOptions& opts, int wma_window, std::uint64_t seed) {
    if (opts.tickers < 1 || opts.days < 10) throw ConfigError("synth: need at least 1 ticker and 10 days");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    const auto cal = weekdays(Date::from_ymd(2019, 1, 1), opts.days);
    const std::size_t t_len = cal.size();
    SyntheticData out;
    auto& m = out.modalities;

    const encoding::WmaConfig wcfg{wma_window};
    for (int i = 0; i < opts.tickers; ++i) {
        const std::string tk = ticker_name(i);
        ingest::NewsTensorSeries news{tk, {}};
        std::vector<double> score(t_len);
        for (std::size_t t = 0; t < t_len; ++t) {
            score[t] = z(rng);
            news.rows.push_back({cal[t], score[t] > 0.5 ? 1.0 : 0.0, score[t] < -0.5 ? 1.0 : 0.0, score[t]});
        }
        std::vector<double> close(t_len);
        if (opts.kind == SynthKind::PlantedNews) {
            const auto encoded = encoding::wma(score, wcfg);
            close[0] = 100.0;
            for (std::size_t t = 1; t < t_len; ++t) close[t] = 100.0 + 20.0 * encoded[t - 1];
        } else {
            close[0] = 100.0;
            for (std::size_t t = 1; t < t_len; ++t) close[t] = close[t - 1] * std::exp(0.01 * z(rng));
        }
        ingest::PriceSeries ps{tk, {}};
        for (std::size_t t = 0; t < t_len; ++t) {
            ingest::PriceBar b;
            b.date = cal[t];
            b.close = close[t];
            b.open = t == 0 ? close[0] : close[t - 1] * (1.0 + 0.002 * z(rng));
            b.high = std::max(b.open, b.close) * (1.0 + 0.005 * std::abs(z(rng)));
            b.low = std::min(b.open, b.close) * (1.0 - 0.005 * std::abs(z(rng)));
            b.volume = std::round(1e6 * std::exp(0.3 * z(rng)));
            ps.rows.push_back(b);
        }
        m.prices.push_back(std::move(ps));
        m.news.push_back(std::move(news));
        out.signal_columns.push_back(tk + ".news.score");
    }

    ingest::MacroSeries bond{"bond_yield_10y", ingest::Granularity::Daily, {}, {}};
    double y = 2.0;
    for (std::size_t t = 0; t < t_len; ++t) {
        y += 0.02 * z(rng);
        bond.dates.push_back(cal[t]);
        bond.values.push_back(y);
    }
    ingest::MacroSeries cpi{"cpi", ingest::Granularity::Monthly, {}, {}};
    double level = 100.0;
    for (std::size_t t : period_starts(cal, 1)) {
        level *= std::exp(0.002 + 0.002 * z(rng));
        cpi.dates.push_back(cal[t]);
        cpi.values.push_back(level);
    }
    ingest::MacroSeries gdp{"gdp", ingest::Granularity::Quarterly, {}, {}};
    level = 500.0;
    for (std::size_t t : period_starts(cal, 3)) {
        level *= std::exp(0.005 + 0.01 * z(rng));
        gdp.dates.push_back(cal[t]);
        gdp.values.push_back(level);
    }
    m.macro = {std::move(bond), std::move(cpi), std::move(gdp)};

    std::uniform_int_distribution<int> step(-1, 1);
    std::uniform_int_distribution<int> start(3, 7);
    const auto quarters = period_starts(cal, 3);
    for (int i = 0; i < opts.tickers; ++i) {
        ingest::ReportRatingSeries rs{ticker_name(i), {}};
        std::array<int, 5> r{};
        for (auto& v : r) v = start(rng);
        for (std::size_t q : quarters) {
            const std::size_t t = std::min(q + 15, t_len - 1);
            ingest::ReportRow row;
            row.date = cal[t];
            for (std::size_t k = 0; k < 5; ++k) {
                r[k] = std::clamp(r[k] + step(rng), 1, 9);
                row.ratings[k] = r[k];
            }
            if (!rs.rows.empty() && rs.rows.back().date == row.date) continue;
            rs.rows.push_back(row);
        }
        m.reports.push_back(std::move(rs));
    }
    return out;
}

std::vector<fs::path> write_synthetic(const SynthOptions& opts, const PipelineConfig& base, const fs::path& dir) {
    fs::create_directories(dir);
    const std::uint64_t seed = base.seed_value();
    const auto data = make_synthetic(opts, base.wma.window, seed);
    const auto& m = data.modalities;
    std::vector<fs::path> files{dir / "prices.csv", dir / "macro.csv", dir / "news.csv", dir / "reports.csv",
                                dir / "config.json"};
    ingest::save_prices(files[0], m.prices);
    ingest::save_macro(files[1], m.macro);
    ingest::save_news(files[2], m.news);
    ingest::save_reports(files[3], m.reports);

    // Defaults sized for a desk-scale run of the generated data.
    PipelineConfig cfg = base;
    cfg.data = {"prices.csv", "macro.csv", "news.csv", "reports.csv"};
    cfg.output_dir = "out";
    cfg.synth = opts;
    cfg.selection.corr.threshold = 0.9;
    cfg.model.d_model = 16;
    cfg.model.num_heads = 2;
    cfg.model.num_layers = 1;
    cfg.model.d_ffn = 32;
    cfg.model.lookback = 8;
    cfg.model.learning_rate = 3e-3;
    cfg.model.batch_size = 32;
    cfg.model.epochs = 30;
    cfg.model.mode = opts.kind == SynthKind::PlantedNews ? forecast::TaskMode::Classification
                                                         : forecast::TaskMode::Regression;
    hpo::SearchSpace space;
    space.constraint = hpo::heads_divide_d_model;
    space.dims = {{"d_model", {16, 32}}, {"heads", {2, 4}}, {"lr", {1e-3, 3e-3}}, {"epochs", {10, 20}}};
    cfg.search.space = std::move(space);
    cfg.search.trials = 6;
    cfg.retrain_period_days = 0;

    std::ofstream out(files[4]);
    if (!out) throw DataError("cannot write " + files[4].string());
    out << to_json(cfg).dump(2) << '\n';
    return files;
}

}  // namespace cmtf::pipeline
