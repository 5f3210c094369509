#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "cmtf/ingest/ingest.hpp"

namespace cmtf::encoding {

/// Provenance of a fused column: historical prices, macro index, news, reports.
enum class Modality : char { History = 'h', Macro = 'm', News = 'n', Report = 'r' };

char tag(Modality m) noexcept;
Modality modality_from_tag(char c);

struct ColumnInfo {
    std::string name;
    Modality modality = Modality::History;
    std::string source;  // ticker or macro series name

    friend bool operator==(const ColumnInfo&, const ColumnInfo&) = default;
};

/// The daily T x D feature matrix with per-column provenance.
struct AlignedFrame {
    ingest::Calendar calendar;
    Eigen::MatrixXd matrix;  // T x D
    std::vector<ColumnInfo> columns;
    bool scaled = false;

    std::size_t rows() const noexcept { return static_cast<std::size_t>(matrix.rows()); }
    std::size_t cols() const noexcept { return static_cast<std::size_t>(matrix.cols()); }

    AlignedFrame select_columns(std::span<const std::size_t> keep) const;
    std::vector<std::size_t> columns_with(Modality m) const;
    std::vector<std::string> names() const;
};

struct WmaConfig {
    int window = 30;
};

/// Every calendar day carries the most recent observation at or before it;
/// days before the first observation carry the first observation.
std::vector<double> forward_fill_daily(std::span<const ingest::Date> dates, std::span<const double> values,
                                       const ingest::Calendar& calendar);

/// Linearly weighted trailing average, newest observation weighted `window`.
/// For t < window-1 the weights truncate to 1..t+1.
std::vector<double> wma(std::span<const double> series, const WmaConfig& cfg);

struct ScalerState {
    std::vector<std::size_t> kept;        // indices into the fitted frame
    std::vector<double> mean;             // per kept column
    std::vector<double> stddev;           // population std, per kept column
    std::vector<std::string> dropped;     // zero-variance column names
    std::vector<std::string> input_names; // full column list at fit time

    friend bool operator==(const ScalerState&, const ScalerState&) = default;
};

/// z-score statistics from rows [train.begin, train.end) only.
ScalerState fit_scaler(const AlignedFrame& frame, ingest::IndexRange train);
/// Drops zero-variance columns and standardises the rest. Throws ContractError
/// on a frame that is already scaled.
AlignedFrame apply_scaler(const AlignedFrame& frame, const ScalerState& state);

struct Modalities {
    std::vector<ingest::PriceSeries> prices;
    std::vector<ingest::MacroSeries> macro;
    std::vector<ingest::NewsTensorSeries> news;
    std::vector<ingest::ReportRatingSeries> reports;
};

struct Ablation {
    bool use_news = true;
    bool use_reports = true;
};

/// Brings every modality onto the trading-day calendar and concatenates in
/// the order h, m, n, r. Daily series pass through (forward-filled onto the
/// calendar); coarser ones are forward-filled and then WMA-smoothed.
AlignedFrame fuse(const Modalities& data, const WmaConfig& cfg, const Ablation& ablation);

/// T x N matrix of calendar-aligned close prices, columns in ticker order.
struct CloseMatrix {
    std::vector<std::string> tickers;
    Eigen::MatrixXd closes;
};
CloseMatrix aligned_closes(std::span<const ingest::PriceSeries> prices, const ingest::Calendar& calendar);

// Frame dump: CSV with a leading date column plus a JSON column manifest.
void write_frame_csv(std::ostream& out, const AlignedFrame& frame);
AlignedFrame read_frame_csv(std::istream& in, const std::vector<ColumnInfo>& columns, std::string_view source);
nlohmann::json manifest_json(const AlignedFrame& frame);
std::vector<ColumnInfo> columns_from_manifest(const nlohmann::json& j);

nlohmann::json to_json(const ScalerState& s);
ScalerState scaler_from_json(const nlohmann::json& j);

}  // namespace cmtf::encoding
