#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cmtf::ingest {

/// Calendar date stored as days since 1970-01-01. Files carry ISO-8601
/// (YYYY-MM-DD) strings; everything downstream works on the integer.
struct Date {
    std::int32_t days = 0;

    static Date parse(std::string_view iso);
    static Date from_ymd(int y, unsigned m, unsigned d);
    std::string iso() const;

    friend auto operator<=>(const Date&, const Date&) = default;
};

enum class Granularity { Daily, Monthly, Quarterly };

Granularity parse_granularity(std::string_view s);
std::string_view to_string(Granularity g);

/// Missing cells are stored as quiet NaN until interpolate_missing runs.
struct PriceBar {
    Date date;
    double open = 0, high = 0, low = 0, close = 0, volume = 0;
};

struct PriceSeries {
    std::string ticker;
    std::vector<PriceBar> rows;
};

struct MacroSeries {
    std::string name;
    Granularity granularity = Granularity::Daily;
    std::vector<Date> dates;
    std::vector<double> values;
};

struct NewsRow {
    Date date;
    double label_up = 0, label_down = 0, score = 0;
};

struct NewsTensorSeries {
    std::string ticker;
    std::vector<NewsRow> rows;
};

inline constexpr std::array<std::string_view, 5> kRatingNames = {"risk", "market_conditions", "regulation", "esg",
                                                                  "innovation"};

struct ReportRow {
    Date date;
    std::array<double, 5> ratings{};
};

struct ReportRatingSeries {
    std::string ticker;
    std::vector<ReportRow> rows;
};

/// Trading days defining the T axis: union of all price dates.
struct Calendar {
    std::vector<Date> dates;

    std::size_t size() const noexcept { return dates.size(); }
    /// Index of the first trading day >= d, or size() when d is past the end.
    std::size_t lower_bound(Date d) const;
};

struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const noexcept { return end - begin; }
    bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
    friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

struct SplitRatios {
    double train = 0.6;
    double validation = 0.2;
    double test = 0.2;
};

struct Splits {
    IndexRange train, validation, test;
};

// Loaders. Each validates the header and every row, throwing DataError with
// the 1-based file line on the first violation.
std::vector<PriceSeries> load_prices(const std::filesystem::path& path);
std::vector<MacroSeries> load_macro(const std::filesystem::path& path);
std::vector<NewsTensorSeries> load_news(const std::filesystem::path& path);
std::vector<ReportRatingSeries> load_reports(const std::filesystem::path& path);

std::vector<PriceSeries> read_prices(std::istream& in, std::string_view source = "<stream>");
std::vector<MacroSeries> read_macro(std::istream& in, std::string_view source = "<stream>");
std::vector<NewsTensorSeries> read_news(std::istream& in, std::string_view source = "<stream>");
std::vector<ReportRatingSeries> read_reports(std::istream& in, std::string_view source = "<stream>");

void write_prices(std::ostream& out, std::span<const PriceSeries> series);
void write_macro(std::ostream& out, std::span<const MacroSeries> series);
void write_news(std::ostream& out, std::span<const NewsTensorSeries> series);
void write_reports(std::ostream& out, std::span<const ReportRatingSeries> series);

void save_prices(const std::filesystem::path& path, std::span<const PriceSeries> series);
void save_macro(const std::filesystem::path& path, std::span<const MacroSeries> series);
void save_news(const std::filesystem::path& path, std::span<const NewsTensorSeries> series);
void save_reports(const std::filesystem::path& path, std::span<const ReportRatingSeries> series);

enum class InterpMethod {
    Linear,  // numeric data; leading/trailing gaps take the nearest valid value
    Zero,    // text-derived tensors; every gap becomes 0
};

/// Fills NaN gaps on an equally spaced grid.
std::vector<double> interpolate_missing(std::span<const double> values, InterpMethod method);
/// Fills NaN gaps, weighting linear interpolation by elapsed days.
std::vector<double> interpolate_missing(std::span<const Date> dates, std::span<const double> values,
                                        InterpMethod method);

PriceSeries interpolate_missing(const PriceSeries& s, InterpMethod method = InterpMethod::Linear);
MacroSeries interpolate_missing(const MacroSeries& s, InterpMethod method = InterpMethod::Linear);
NewsTensorSeries interpolate_missing(const NewsTensorSeries& s, InterpMethod method = InterpMethod::Zero);
ReportRatingSeries interpolate_missing(const ReportRatingSeries& s, InterpMethod method = InterpMethod::Zero);

Calendar build_calendar(std::span<const PriceSeries> prices);

/// Resamples one field of a price series onto the calendar. Dates missing for
/// this ticker are linearly interpolated in time; days outside the ticker's
/// own range take its first/last value.
std::vector<double> align_to_calendar(std::span<const Date> dates, std::span<const double> values,
                                      const Calendar& calendar);

/// Contiguous train/validation/test ranges. Validation and test sizes are
/// floor(n * ratio); the remainder goes to train.
Splits split_chronological(std::size_t n, const SplitRatios& ratios);
inline Splits split_chronological(const Calendar& c, const SplitRatios& r) { return split_chronological(c.size(), r); }

}  // namespace cmtf::ingest
