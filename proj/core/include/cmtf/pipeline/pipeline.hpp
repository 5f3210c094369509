#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "cmtf/encoding/encoding.hpp"
#include "cmtf/eval/eval.hpp"
#include "cmtf/pipeline/config.hpp"

namespace cmtf::pipeline {

enum class Stage { Ingest, Encode, Select, Train, Tune, Evaluate, Report, Ablate, Synth };

std::string to_string(Stage s);
Stage parse_stage(std::string_view s);

struct StageResult {
    Stage stage = Stage::Ingest;
    std::vector<std::filesystem::path> outputs;
};

/// Runs one stage against cfg.output_dir and records its outputs in
/// manifest.json. Throws PipelineError when an upstream artifact is missing.
StageResult run_stage(Stage stage, const PipelineConfig& cfg);

/// ingest, encode, select, train, evaluate, report.
std::vector<StageResult> run_pipeline(const PipelineConfig& cfg);

struct AblationCell {
    AblationFlags flags;
    eval::EvalReport report;
};

/// All eight (+/-I, +/-N, +/-R) cells with shared seed and splits, each in
/// its own subdirectory of cfg.output_dir/ablate; writes ablation.json and
/// ablation.csv there.
std::vector<AblationCell> ablation_matrix(const PipelineConfig& cfg);

// ---------------------------------------------------------------------------
// Synthetic datasets

struct SyntheticData {
    encoding::Modalities modalities;
    /// Name of the news column every direction is a function of, per ticker.
    std::vector<std::string> signal_columns;
};

/// planted-news: close_{t+1} = 100 + 20 * WMA_b(news score)(t), so the next-day
/// direction is the sign of the change in the encoded news score and the
/// realised direction carries almost no memory. random-walk: geometric random
/// walk closes with unrelated news, macro and report tensors.
SyntheticData make_synthetic(const SynthOptions& opts, int wma_window, std::uint64_t seed);

/// Writes prices/macro/news/reports CSVs plus a ready-to-run config.json.
std::vector<std::filesystem::path> write_synthetic(const SynthOptions& opts, const PipelineConfig& base,
                                                   const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Stage artifacts (exposed for tests and tooling)

struct EncodedData {
    encoding::AlignedFrame frame;  // scaled
    Eigen::MatrixXd closes;        // T x N, raw
    std::vector<std::string> tickers;
    ingest::Splits splits;
};

EncodedData load_encoded(const std::filesystem::path& out_dir);
std::vector<std::string> load_selected_features(const std::filesystem::path& out_dir);

/// Manifest: config hash, versions, per-stage outputs and timestamps.
nlohmann::json load_manifest(const std::filesystem::path& out_dir);

}  // namespace cmtf::pipeline
