#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "cmtf/encoding/encoding.hpp"
#include "cmtf/forecast/forecaster.hpp"
#include "cmtf/hpo/hpo.hpp"
#include "cmtf/ingest/ingest.hpp"
#include "cmtf/interp/interp.hpp"

namespace cmtf::pipeline {

inline constexpr int kSchemaVersion = 1;

struct DataPaths {
    std::filesystem::path prices;
    std::filesystem::path macro;    // optional
    std::filesystem::path news;     // optional
    std::filesystem::path reports;  // optional
};

/// Ablation switches: tensor interpretation (I), news (N), reports (R).
struct AblationFlags {
    bool use_interpretation = true;
    bool use_news = true;
    bool use_reports = true;

    /// "+I+N+R" style label.
    std::string label() const;
    friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct SearchConfig {
    int trials = 20;
    hpo::SearchSpace space = hpo::SearchSpace::defaults();
    hpo::TpeConfig tpe;
    hpo::PrunerConfig pruner;
};

enum class SynthKind { PlantedNews, RandomWalk };

std::string to_string(SynthKind k);
SynthKind parse_synth_kind(std::string_view s);

struct SynthOptions {
    SynthKind kind = SynthKind::PlantedNews;
    int tickers = 5;
    int days = 1200;
};

struct PipelineConfig {
    int schema_version = kSchemaVersion;
    DataPaths data;
    encoding::WmaConfig wma;
    interp::SelectionConfig selection;
    forecast::TransformerConfig model;
    SearchConfig search;
    AblationFlags ablation;
    ingest::SplitRatios split;
    /// Ledger cadence and walk-forward retraining step; 0 trains once.
    int retrain_period_days = 21;
    SynthOptions synth;
    std::optional<std::uint64_t> seed;
    int parallelism = 1;
    std::filesystem::path output_dir = "out";

    /// Structural checks; file existence is checked when a stage runs.
    void validate() const;
    std::uint64_t seed_value() const;
};

/// Relative data paths resolve against `base_dir`. Unknown keys and a
/// missing or mismatched schema_version raise ConfigError.
PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const PipelineConfig& cfg);

/// FNV-1a over the canonical JSON of every setting that affects results
/// (output directory and parallelism excluded).
std::string config_hash(const PipelineConfig& cfg);

}  // namespace cmtf::pipeline
