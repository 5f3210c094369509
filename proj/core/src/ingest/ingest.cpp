#include "cmtf/ingest/ingest.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <ostream>

#include "../util/csv.hpp"
#include "cmtf/error.hpp"

namespace cmtf::ingest {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

Date parse_date_cell(const util::CsvReader& r, const std::string& cell) {
    try {
        return Date::parse(cell);
    } catch (const DataError& e) {
        r.fail(e.what());
    }
}

// Expected day spacing and tolerance per granularity.
bool spacing_ok(Granularity g, std::int32_t gap) {
    switch (g) {
        case Granularity::Daily: return gap >= 1 && gap <= 7;
        case Granularity::Monthly: return std::abs(gap - 30.44) <= 7.0;
        case Granularity::Quarterly: return std::abs(gap - 91.31) <= 45.0;
    }
    return false;
}

template <class Row>
void sort_and_check_unique(std::vector<Row>& rows, const std::string& key, std::string_view source,
                           Date Row::*date) {
    std::stable_sort(rows.begin(), rows.end(), [&](const Row& a, const Row& b) { return a.*date < b.*date; });
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].*date == rows[i - 1].*date) {
            throw DataError(std::string(source) + ": duplicate row for (" + key + ", " + (rows[i].*date).iso() + ")");
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Date

Date Date::from_ymd(int y, unsigned m, unsigned d) {
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{m}, day{d}};
    if (!ymd.ok()) throw DataError("invalid calendar date " + std::to_string(y) + "-" + std::to_string(m) + "-" +
                                   std::to_string(d));
    return Date{static_cast<std::int32_t>(sys_days{ymd}.time_since_epoch().count())};
}

Date Date::parse(std::string_view iso) {
    auto bad = [&]() -> DataError { return DataError("unparseable date '" + std::string(iso) + "'"); };
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') throw bad();
    auto num = [&](std::size_t pos, std::size_t len) {
        int v = 0;
        auto [ptr, ec] = std::from_chars(iso.data() + pos, iso.data() + pos + len, v);
        if (ec != std::errc() || ptr != iso.data() + pos + len) throw bad();
        return v;
    };
    const int y = num(0, 4), m = num(5, 2), d = num(8, 2);
    if (m < 1 || m > 12 || d < 1 || d > 31) throw bad();
    try {
        return from_ymd(y, static_cast<unsigned>(m), static_cast<unsigned>(d));
    } catch (const DataError&) {
        throw bad();
    }
}

std::string Date::iso() const {
    using namespace std::chrono;
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

Granularity parse_granularity(std::string_view s) {
    if (s == "daily") return Granularity::Daily;
    if (s == "monthly") return Granularity::Monthly;
    if (s == "quarterly") return Granularity::Quarterly;
    throw DataError("unknown granularity '" + std::string(s) + "'");
}

std::string_view to_string(Granularity g) {
    switch (g) {
        case Granularity::Daily: return "daily";
        case Granularity::Monthly: return "monthly";
        case Granularity::Quarterly: return "quarterly";
    }
    return "?";
}

std::size_t Calendar::lower_bound(Date d) const {
    return static_cast<std::size_t>(std::lower_bound(dates.begin(), dates.end(), d) - dates.begin());
}

// ---------------------------------------------------------------------------
// Loaders

std::vector<PriceSeries> read_prices(std::istream& in, std::string_view source) {
    util::CsvReader r(in, source);
    const auto col = r.header({"date", "ticker", "open", "high", "low", "close", "volume"});
    std::map<std::string, PriceSeries> by_ticker;
    std::vector<std::string> f;
    while (r.next(f)) {
        r.require_width(f);
        PriceBar bar;
        bar.date = parse_date_cell(r, f[col[0]]);
        const std::string& ticker = f[col[1]];
        if (ticker.empty()) r.fail("empty ticker");
        static constexpr std::array<std::string_view, 5> names = {"open", "high", "low", "close", "volume"};
        std::array<double*, 5> dst = {&bar.open, &bar.high, &bar.low, &bar.close, &bar.volume};
        for (std::size_t k = 0; k < 5; ++k) {
            const double v = r.number(f[col[2 + k]], names[k]);
            if (!std::isnan(v)) {
                if (k < 4 && v <= 0.0) r.fail(std::string(names[k]) + " must be positive, got " + f[col[2 + k]]);
                if (k == 4 && v < 0.0) r.fail("volume must be non-negative, got " + f[col[2 + k]]);
            }
            *dst[k] = v;
        }
        auto& s = by_ticker[ticker];
        s.ticker = ticker;
        s.rows.push_back(bar);
    }
    std::vector<PriceSeries> out;
    for (auto& [ticker, s] : by_ticker) {
        sort_and_check_unique(s.rows, ticker, source, &PriceBar::date);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<MacroSeries> read_macro(std::istream& in, std::string_view source) {
    util::CsvReader r(in, source);
    const auto col = r.header({"date", "name", "value", "granularity"});
    struct Obs {
        Date date;
        double value;
    };
    std::map<std::string, std::pair<Granularity, std::vector<Obs>>> by_name;
    std::vector<std::string> f;
    while (r.next(f)) {
        r.require_width(f);
        const Date d = parse_date_cell(r, f[col[0]]);
        const std::string& name = f[col[1]];
        if (name.empty()) r.fail("empty macro name");
        const double v = r.number(f[col[2]], "value");
        Granularity g{};
        try {
            g = parse_granularity(f[col[3]]);
        } catch (const DataError& e) {
            r.fail(e.what());
        }
        auto [it, inserted] = by_name.try_emplace(name, g, std::vector<Obs>{});
        if (!inserted && it->second.first != g) r.fail("granularity for '" + name + "' changes mid-series");
        it->second.second.push_back({d, v});
    }
    std::vector<MacroSeries> out;
    for (auto& [name, entry] : by_name) {
        auto& obs = entry.second;
        sort_and_check_unique(obs, name, source, &Obs::date);
        MacroSeries s;
        s.name = name;
        s.granularity = entry.first;
        for (std::size_t i = 0; i < obs.size(); ++i) {
            if (i > 0 && !spacing_ok(s.granularity, obs[i].date.days - obs[i - 1].date.days)) {
                throw DataError(std::string(source) + ": series '" + name + "' spacing " +
                                std::to_string(obs[i].date.days - obs[i - 1].date.days) + " days at " +
                                obs[i].date.iso() + " inconsistent with granularity " +
                                std::string(to_string(s.granularity)));
            }
            s.dates.push_back(obs[i].date);
            s.values.push_back(obs[i].value);
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<NewsTensorSeries> read_news(std::istream& in, std::string_view source) {
    util::CsvReader r(in, source);
    const auto col = r.header({"date", "ticker", "label_up", "label_down", "score"});
    std::map<std::string, NewsTensorSeries> by_ticker;
    std::vector<std::string> f;
    while (r.next(f)) {
        r.require_width(f);
        NewsRow row;
        row.date = parse_date_cell(r, f[col[0]]);
        const std::string& ticker = f[col[1]];
        if (ticker.empty()) r.fail("empty ticker");
        row.label_up = r.number(f[col[2]], "label_up");
        row.label_down = r.number(f[col[3]], "label_down");
        row.score = r.number(f[col[4]], "score");
        for (double lab : {row.label_up, row.label_down}) {
            if (!std::isnan(lab) && lab != 0.0 && lab != 1.0) r.fail("news labels must be 0 or 1");
        }
        auto& s = by_ticker[ticker];
        s.ticker = ticker;
        s.rows.push_back(row);
    }
    std::vector<NewsTensorSeries> out;
    for (auto& [ticker, s] : by_ticker) {
        sort_and_check_unique(s.rows, ticker, source, &NewsRow::date);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ReportRatingSeries> read_reports(std::istream& in, std::string_view source) {
    util::CsvReader r(in, source);
    const auto col = r.header({"date", "ticker", "risk", "market_conditions", "regulation", "esg", "innovation"});
    std::map<std::string, ReportRatingSeries> by_ticker;
    std::vector<std::string> f;
    while (r.next(f)) {
        r.require_width(f);
        ReportRow row;
        row.date = parse_date_cell(r, f[col[0]]);
        const std::string& ticker = f[col[1]];
        if (ticker.empty()) r.fail("empty ticker");
        for (std::size_t k = 0; k < 5; ++k) {
            const double v = r.number(f[col[2 + k]], kRatingNames[k]);
            if (!std::isnan(v) && (v != std::floor(v) || v < 1.0 || v > 9.0)) {
                r.fail(std::string(kRatingNames[k]) + " rating must be an integer in [1, 9], got " + f[col[2 + k]]);
            }
            row.ratings[k] = v;
        }
        auto& s = by_ticker[ticker];
        s.ticker = ticker;
        s.rows.push_back(row);
    }
    std::vector<ReportRatingSeries> out;
    for (auto& [ticker, s] : by_ticker) {
        sort_and_check_unique(s.rows, ticker, source, &ReportRow::date);
        for (std::size_t i = 1; i < s.rows.size(); ++i) {
            const auto gap = s.rows[i].date.days - s.rows[i - 1].date.days;
            if (!spacing_ok(Granularity::Quarterly, gap)) {
                throw DataError(std::string(source) + ": reports for '" + ticker + "' are not quarterly (gap of " +
                                std::to_string(gap) + " days at " + s.rows[i].date.iso() + ")");
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<PriceSeries> load_prices(const std::filesystem::path& p) {
    auto in = open_input(p);
    return read_prices(in, p.string());
}
std::vector<MacroSeries> load_macro(const std::filesystem::path& p) {
    auto in = open_input(p);
    return read_macro(in, p.string());
}
std::vector<NewsTensorSeries> load_news(const std::filesystem::path& p) {
    auto in = open_input(p);
    return read_news(in, p.string());
}
std::vector<ReportRatingSeries> load_reports(const std::filesystem::path& p) {
    auto in = open_input(p);
    return read_reports(in, p.string());
}

// ---------------------------------------------------------------------------
// Writers

using util::format_double;

void write_prices(std::ostream& out, std::span<const PriceSeries> series) {
    out << "date,ticker,open,high,low,close,volume\n";
    for (const auto& s : series)
        for (const auto& b : s.rows)
            out << b.date.iso() << ',' << s.ticker << ',' << format_double(b.open) << ',' << format_double(b.high)
                << ',' << format_double(b.low) << ',' << format_double(b.close) << ',' << format_double(b.volume)
                << '\n';
}

void write_macro(std::ostream& out, std::span<const MacroSeries> series) {
    out << "date,name,value,granularity\n";
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.dates.size(); ++i)
            out << s.dates[i].iso() << ',' << s.name << ',' << format_double(s.values[i]) << ','
                << to_string(s.granularity) << '\n';
}

void write_news(std::ostream& out, std::span<const NewsTensorSeries> series) {
    out << "date,ticker,label_up,label_down,score\n";
    for (const auto& s : series)
        for (const auto& r : s.rows)
            out << r.date.iso() << ',' << s.ticker << ',' << format_double(r.label_up) << ','
                << format_double(r.label_down) << ',' << format_double(r.score) << '\n';
}

void write_reports(std::ostream& out, std::span<const ReportRatingSeries> series) {
    out << "date,ticker,risk,market_conditions,regulation,esg,innovation\n";
    for (const auto& s : series)
        for (const auto& r : s.rows) {
            out << r.date.iso() << ',' << s.ticker;
            for (double v : r.ratings) out << ',' << format_double(v);
            out << '\n';
        }
}

void save_prices(const std::filesystem::path& p, std::span<const PriceSeries> s) {
    auto out = open_output(p);
    write_prices(out, s);
}
void save_macro(const std::filesystem::path& p, std::span<const MacroSeries> s) {
    auto out = open_output(p);
    write_macro(out, s);
}
void save_news(const std::filesystem::path& p, std::span<const NewsTensorSeries> s) {
    auto out = open_output(p);
    write_news(out, s);
}
void save_reports(const std::filesystem::path& p, std::span<const ReportRatingSeries> s) {
    auto out = open_output(p);
    write_reports(out, s);
}

// ---------------------------------------------------------------------------
// Interpolation

namespace {

std::vector<double> fill_gaps(std::span<const double> values, InterpMethod method,
                              const std::function<double(std::size_t)>& position) {
    std::vector<double> out(values.begin(), values.end());
    if (out.empty()) return out;
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!std::isnan(out[i])) valid.push_back(i);
    if (valid.empty()) throw DataError("unrecoverable data: series has no valid observations");
    if (method == InterpMethod::Zero) {
        for (auto& v : out)
            if (std::isnan(v)) v = 0.0;
        return out;
    }
    for (std::size_t i = 0; i < valid.front(); ++i) out[i] = out[valid.front()];
    for (std::size_t i = valid.back() + 1; i < out.size(); ++i) out[i] = out[valid.back()];
    for (std::size_t k = 1; k < valid.size(); ++k) {
        const std::size_t lo = valid[k - 1], hi = valid[k];
        const double x0 = position(lo), x1 = position(hi);
        for (std::size_t i = lo + 1; i < hi; ++i) {
            const double w = (position(i) - x0) / (x1 - x0);
            out[i] = out[lo] + w * (out[hi] - out[lo]);
        }
    }
    return out;
}

}  // namespace

std::vector<double> interpolate_missing(std::span<const double> values, InterpMethod method) {
    return fill_gaps(values, method, [](std::size_t i) { return static_cast<double>(i); });
}

std::vector<double> interpolate_missing(std::span<const Date> dates, std::span<const double> values,
                                        InterpMethod method) {
    if (dates.size() != values.size()) throw DimensionError("interpolate_missing: dates/values length mismatch");
    return fill_gaps(values, method, [&](std::size_t i) { return static_cast<double>(dates[i].days); });
}

namespace {

template <class Row, std::size_t K>
void interpolate_fields(std::vector<Row>& rows, const std::array<double Row::*, K>& fields, InterpMethod method) {
    std::vector<Date> dates;
    for (const auto& r : rows) dates.push_back(r.date);
    for (auto field : fields) {
        std::vector<double> vals;
        for (const auto& r : rows) vals.push_back(r.*field);
        auto filled = interpolate_missing(dates, vals, method);
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i].*field = filled[i];
    }
}

}  // namespace

PriceSeries interpolate_missing(const PriceSeries& s, InterpMethod method) {
    PriceSeries out = s;
    try {
        interpolate_fields<PriceBar, 5>(
            out.rows, {&PriceBar::open, &PriceBar::high, &PriceBar::low, &PriceBar::close, &PriceBar::volume}, method);
    } catch (const DataError& e) {
        throw DataError("prices for '" + s.ticker + "': " + e.what());
    }
    return out;
}

MacroSeries interpolate_missing(const MacroSeries& s, InterpMethod method) {
    MacroSeries out = s;
    try {
        out.values = interpolate_missing(s.dates, s.values, method);
    } catch (const DataError& e) {
        throw DataError("macro series '" + s.name + "': " + e.what());
    }
    return out;
}

NewsTensorSeries interpolate_missing(const NewsTensorSeries& s, InterpMethod method) {
    NewsTensorSeries out = s;
    try {
        interpolate_fields<NewsRow, 3>(out.rows, {&NewsRow::label_up, &NewsRow::label_down, &NewsRow::score}, method);
    } catch (const DataError& e) {
        throw DataError("news for '" + s.ticker + "': " + e.what());
    }
    return out;
}

ReportRatingSeries interpolate_missing(const ReportRatingSeries& s, InterpMethod method) {
    ReportRatingSeries out = s;
    std::vector<Date> dates;
    for (const auto& r : s.rows) dates.push_back(r.date);
    for (std::size_t k = 0; k < 5; ++k) {
        std::vector<double> vals;
        for (const auto& r : s.rows) vals.push_back(r.ratings[k]);
        std::vector<double> filled;
        try {
            filled = interpolate_missing(dates, vals, method);
        } catch (const DataError& e) {
            throw DataError("reports for '" + s.ticker + "', " + std::string(kRatingNames[k]) + ": " + e.what());
        }
        for (std::size_t i = 0; i < s.rows.size(); ++i) out.rows[i].ratings[k] = filled[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Calendar and splits

Calendar build_calendar(std::span<const PriceSeries> prices) {
    Calendar c;
    for (const auto& s : prices)
        for (const auto& b : s.rows) c.dates.push_back(b.date);
    std::sort(c.dates.begin(), c.dates.end());
    c.dates.erase(std::unique(c.dates.begin(), c.dates.end()), c.dates.end());
    return c;
}

std::vector<double> align_to_calendar(std::span<const Date> dates, std::span<const double> values,
                                      const Calendar& calendar) {
    if (dates.size() != values.size()) throw DimensionError("align_to_calendar: dates/values length mismatch");
    if (dates.empty()) throw DataError("align_to_calendar: empty series");
    std::vector<double> out(calendar.size(), kNaN);
    // Walk both sorted sequences; interpolate between the bracketing observations.
    std::size_t j = 0;
    for (std::size_t i = 0; i < calendar.size(); ++i) {
        const Date d = calendar.dates[i];
        while (j < dates.size() && dates[j] < d) ++j;
        if (j < dates.size() && dates[j] == d) {
            out[i] = values[j];
        } else if (j == 0) {
            out[i] = values.front();
        } else if (j == dates.size()) {
            out[i] = values.back();
        } else {
            const double w = static_cast<double>(d.days - dates[j - 1].days) /
                             static_cast<double>(dates[j].days - dates[j - 1].days);
            out[i] = values[j - 1] + w * (values[j] - values[j - 1]);
        }
    }
    return out;
}

Splits split_chronological(std::size_t n, const SplitRatios& ratios) {
    for (double r : {ratios.train, ratios.validation, ratios.test}) {
        if (!(r > 0.0 && r < 1.0)) throw ConfigError("split ratio " + format_double(r) + " outside (0, 1)");
    }
    if (std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
        throw ConfigError("split ratios must sum to 1");
    }
    if (n == 0) throw ConfigError("cannot split an empty calendar");
    const auto floor_count = [n](double r) {
        return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9));
    };
    const std::size_t n_val = floor_count(ratios.validation);
    const std::size_t n_test = floor_count(ratios.test);
    const std::size_t n_train = n - n_val - n_test;
    Splits s;
    s.train = {0, n_train};
    s.validation = {n_train, n_train + n_val};
    s.test = {n_train + n_val, n};
    return s;
}

}  // namespace cmtf::ingest
