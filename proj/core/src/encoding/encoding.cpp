#include "cmtf/encoding/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "../util/csv.hpp"
#include "cmtf/error.hpp"

namespace cmtf::encoding {

using ingest::Calendar;
using ingest::Date;

char tag(Modality m) noexcept { return static_cast<char>(m); }

Modality modality_from_tag(char c) {
    switch (c) {
        case 'h': return Modality::History;
        case 'm': return Modality::Macro;
        case 'n': return Modality::News;
        case 'r': return Modality::Report;
        default: throw DataError(std::string("unknown modality tag '") + c + "'");
    }
}

AlignedFrame AlignedFrame::select_columns(std::span<const std::size_t> keep) const {
    AlignedFrame out;
    out.calendar = calendar;
    out.scaled = scaled;
    out.matrix.resize(matrix.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        if (keep[k] >= cols()) throw DimensionError("select_columns: index " + std::to_string(keep[k]) + " out of range");
        out.matrix.col(static_cast<Eigen::Index>(k)) = matrix.col(static_cast<Eigen::Index>(keep[k]));
        out.columns.push_back(columns[keep[k]]);
    }
    return out;
}

std::vector<std::size_t> AlignedFrame::columns_with(Modality m) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i].modality == m) idx.push_back(i);
    return idx;
}

std::vector<std::string> AlignedFrame::names() const {
    std::vector<std::string> n;
    for (const auto& c : columns) n.push_back(c.name);
    return n;
}

std::vector<double> forward_fill_daily(std::span<const Date> dates, std::span<const double> values,
                                       const Calendar& calendar) {
    if (dates.size() != values.size()) throw DimensionError("forward_fill_daily: dates/values length mismatch");
    if (dates.empty()) throw DataError("unrecoverable data: cannot forward-fill an empty series");
    std::vector<double> out(calendar.size());
    std::size_t j = 0;
    for (std::size_t i = 0; i < calendar.size(); ++i) {
        while (j + 1 < dates.size() && dates[j + 1] <= calendar.dates[i]) ++j;
        out[i] = values[j];
    }
    return out;
}

std::vector<double> wma(std::span<const double> series, const WmaConfig& cfg) {
    if (cfg.window < 1) throw ConfigError("wma window must be >= 1, got " + std::to_string(cfg.window));
    const std::size_t b = static_cast<std::size_t>(cfg.window);
    std::vector<double> out(series.size());
    for (std::size_t t = 0; t < series.size(); ++t) {
        const std::size_t n = std::min(b, t + 1);
        double num = 0.0;
        for (std::size_t a = 1; a <= n; ++a) num += static_cast<double>(a) * series[t + 1 - n + a - 1];
        out[t] = num / (static_cast<double>(n) * static_cast<double>(n + 1) / 2.0);
    }
    return out;
}

ScalerState fit_scaler(const AlignedFrame& frame, ingest::IndexRange train) {
    if (train.size() == 0 || train.end > frame.rows()) throw ConfigError("fit_scaler: empty or out-of-range train range");
    ScalerState s;
    s.input_names = frame.names();
    const auto block = frame.matrix.middleRows(static_cast<Eigen::Index>(train.begin),
                                               static_cast<Eigen::Index>(train.size()));
    const double n = static_cast<double>(train.size());
    for (std::size_t c = 0; c < frame.cols(); ++c) {
        const auto col = block.col(static_cast<Eigen::Index>(c));
        const double mean = col.sum() / n;
        const double var = (col.array() - mean).square().sum() / n;
        const double sd = std::sqrt(var);
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
            s.dropped.push_back(frame.columns[c].name);
            continue;
        }
        s.kept.push_back(c);
        s.mean.push_back(mean);
        s.stddev.push_back(sd);
    }
    return s;
}

AlignedFrame apply_scaler(const AlignedFrame& frame, const ScalerState& state) {
    if (frame.scaled) throw ContractError("apply_scaler: frame is already scaled");
    if (frame.names() != state.input_names) throw ContractError("apply_scaler: frame columns differ from fitted columns");
    AlignedFrame out = frame.select_columns(state.kept);
    for (std::size_t k = 0; k < state.kept.size(); ++k) {
        auto col = out.matrix.col(static_cast<Eigen::Index>(k));
        col = (col.array() - state.mean[k]) / state.stddev[k];
    }
    out.scaled = true;
    return out;
}

namespace {

struct Column {
    ColumnInfo info;
    std::vector<double> values;
};

std::vector<double> smooth(std::vector<double> daily, const WmaConfig& cfg) { return wma(daily, cfg); }

// News dated on a non-trading day moves to the next trading day; when two
// rows collide the later one wins. Rows after the last trading day drop out.
ingest::NewsTensorSeries snap_news_to_calendar(const ingest::NewsTensorSeries& s, const Calendar& cal) {
    ingest::NewsTensorSeries out;
    out.ticker = s.ticker;
    for (const auto& row : s.rows) {
        const std::size_t i = cal.lower_bound(row.date);
        if (i == cal.size()) continue;
        ingest::NewsRow r = row;
        r.date = cal.dates[i];
        if (!out.rows.empty() && out.rows.back().date == r.date) {
            out.rows.back() = r;
        } else {
            out.rows.push_back(r);
        }
    }
    return out;
}

}  // namespace

AlignedFrame fuse(const Modalities& data, const WmaConfig& cfg, const Ablation& ablation) {
    if (cfg.window < 1) throw ConfigError("wma window must be >= 1, got " + std::to_string(cfg.window));
    if (data.prices.empty()) throw ConfigError("fuse: no price series loaded");
    AlignedFrame frame;
    frame.calendar = ingest::build_calendar(data.prices);
    const Calendar& cal = frame.calendar;
    std::vector<Column> cols;

    static constexpr std::array<const char*, 5> kPriceFields = {"open", "high", "low", "close", "volume"};
    for (const auto& raw : data.prices) {
        const auto s = ingest::interpolate_missing(raw, ingest::InterpMethod::Linear);
        std::vector<Date> dates;
        for (const auto& b : s.rows) dates.push_back(b.date);
        std::array<std::vector<double>, 5> fields;
        for (const auto& b : s.rows) {
            fields[0].push_back(b.open);
            fields[1].push_back(b.high);
            fields[2].push_back(b.low);
            fields[3].push_back(b.close);
            fields[4].push_back(b.volume);
        }
        for (std::size_t k = 0; k < 5; ++k) {
            cols.push_back({{s.ticker + "." + kPriceFields[k], Modality::History, s.ticker},
                            ingest::align_to_calendar(dates, fields[k], cal)});
        }
    }

    for (const auto& raw : data.macro) {
        const auto s = ingest::interpolate_missing(raw, ingest::InterpMethod::Linear);
        auto daily = forward_fill_daily(s.dates, s.values, cal);
        if (s.granularity != ingest::Granularity::Daily) daily = smooth(std::move(daily), cfg);
        cols.push_back({{s.name, Modality::Macro, s.name}, std::move(daily)});
    }

    if (ablation.use_news) {
        for (const auto& raw : data.news) {
            if (raw.rows.empty()) continue;
            const auto s = snap_news_to_calendar(ingest::interpolate_missing(raw, ingest::InterpMethod::Zero), cal);
            if (s.rows.empty()) continue;
            std::vector<Date> dates;
            std::array<std::vector<double>, 3> fields;
            for (const auto& r : s.rows) {
                dates.push_back(r.date);
                fields[0].push_back(r.label_up);
                fields[1].push_back(r.label_down);
                fields[2].push_back(r.score);
            }
            static constexpr std::array<const char*, 3> kNames = {"label_up", "label_down", "score"};
            for (std::size_t k = 0; k < 3; ++k) {
                cols.push_back({{s.ticker + ".news." + kNames[k], Modality::News, s.ticker},
                                smooth(forward_fill_daily(dates, fields[k], cal), cfg)});
            }
        }
    }

    if (ablation.use_reports) {
        for (const auto& raw : data.reports) {
            if (raw.rows.empty()) continue;
            const auto s = ingest::interpolate_missing(raw, ingest::InterpMethod::Zero);
            std::vector<Date> dates;
            for (const auto& r : s.rows) dates.push_back(r.date);
            for (std::size_t k = 0; k < ingest::kRatingNames.size(); ++k) {
                std::vector<double> v;
                for (const auto& r : s.rows) v.push_back(r.ratings[k]);
                cols.push_back({{s.ticker + ".report." + std::string(ingest::kRatingNames[k]), Modality::Report,
                                 s.ticker},
                                smooth(forward_fill_daily(dates, v, cal), cfg)});
            }
        }
    }

    if (cols.empty() || cal.size() == 0) throw ConfigError("fuse: resulting frame is empty");
    frame.matrix.resize(static_cast<Eigen::Index>(cal.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
        for (std::size_t t = 0; t < cal.size(); ++t) frame.matrix(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = cols[c].values[t];
        frame.columns.push_back(std::move(cols[c].info));
    }
    if (!frame.matrix.allFinite()) throw DataError("fuse: non-finite value in fused frame");
    return frame;
}

CloseMatrix aligned_closes(std::span<const ingest::PriceSeries> prices, const Calendar& calendar) {
    CloseMatrix out;
    out.closes.resize(static_cast<Eigen::Index>(calendar.size()), static_cast<Eigen::Index>(prices.size()));
    for (std::size_t i = 0; i < prices.size(); ++i) {
        const auto s = ingest::interpolate_missing(prices[i], ingest::InterpMethod::Linear);
        std::vector<Date> dates;
        std::vector<double> close;
        for (const auto& b : s.rows) {
            dates.push_back(b.date);
            close.push_back(b.close);
        }
        const auto aligned = ingest::align_to_calendar(dates, close, calendar);
        for (std::size_t t = 0; t < calendar.size(); ++t) out.closes(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = aligned[t];
        out.tickers.push_back(s.ticker);
    }
    return out;
}

void write_frame_csv(std::ostream& out, const AlignedFrame& frame) {
    out << "date";
    for (const auto& c : frame.columns) out << ',' << c.name;
    out << '\n';
    for (std::size_t t = 0; t < frame.rows(); ++t) {
        out << frame.calendar.dates[t].iso();
        for (std::size_t c = 0; c < frame.cols(); ++c)
            out << ',' << util::format_double(frame.matrix(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)));
        out << '\n';
    }
}

AlignedFrame read_frame_csv(std::istream& in, const std::vector<ColumnInfo>& columns, std::string_view source) {
    util::CsvReader r(in, source);
    std::vector<std::string_view> expected{"date"};
    for (const auto& c : columns) expected.push_back(c.name);
    const auto idx = r.header(expected);
    AlignedFrame frame;
    frame.columns = columns;
    std::vector<std::vector<double>> rows;
    std::vector<std::string> f;
    while (r.next(f)) {
        r.require_width(f);
        try {
            frame.calendar.dates.push_back(Date::parse(f[idx[0]]));
        } catch (const DataError& e) {
            r.fail(e.what());
        }
        std::vector<double> row;
        for (std::size_t c = 0; c < columns.size(); ++c) {
            const double v = r.number(f[idx[c + 1]], columns[c].name);
            if (std::isnan(v)) r.fail("missing value in fused frame");
            row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    frame.matrix.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t t = 0; t < rows.size(); ++t)
        for (std::size_t c = 0; c < columns.size(); ++c) frame.matrix(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = rows[t][c];
    return frame;
}

nlohmann::json manifest_json(const AlignedFrame& frame) {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : frame.columns) {
        cols.push_back({{"name", c.name}, {"tag", std::string(1, tag(c.modality))}, {"source", c.source}});
    }
    return {{"rows", frame.rows()}, {"scaled", frame.scaled}, {"columns", cols}};
}

std::vector<ColumnInfo> columns_from_manifest(const nlohmann::json& j) {
    std::vector<ColumnInfo> out;
    for (const auto& c : j.at("columns")) {
        const auto t = c.at("tag").get<std::string>();
        if (t.size() != 1) throw DataError("bad modality tag '" + t + "'");
        out.push_back({c.at("name").get<std::string>(), modality_from_tag(t[0]), c.at("source").get<std::string>()});
    }
    return out;
}

nlohmann::json to_json(const ScalerState& s) {
    return {{"kept", s.kept},       {"mean", s.mean}, {"stddev", s.stddev}, {"dropped", s.dropped},
            {"input", s.input_names}};
}

ScalerState scaler_from_json(const nlohmann::json& j) {
    ScalerState s;
    j.at("kept").get_to(s.kept);
    j.at("mean").get_to(s.mean);
    j.at("stddev").get_to(s.stddev);
    j.at("dropped").get_to(s.dropped);
    j.at("input").get_to(s.input_names);
    return s;
}

}  // namespace cmtf::encoding
