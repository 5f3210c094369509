#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "cmtf/ingest/ingest.hpp"
#include "cmtf/tensor/graph.hpp"
#include "cmtf/tensor/tensor.hpp"

namespace cmtf::forecast {

enum class TaskMode { Classification, Regression };

std::string to_string(TaskMode m);
TaskMode parse_task_mode(std::string_view s);

struct TransformerConfig {
    int d_model = 32;
    int num_heads = 2;
    int num_layers = 1;
    int d_ffn = 256;
    int lookback = 30;
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs = 20;
    TaskMode mode = TaskMode::Classification;
    std::uint64_t seed = 0;
    double layer_norm_eps = 1e-5;

    void validate() const;
    int head_dim() const { return d_model / num_heads; }
};

nlohmann::json to_json(const TransformerConfig& cfg);
TransformerConfig transformer_config_from_json(const nlohmann::json& j, TransformerConfig base = {});

// ---------------------------------------------------------------------------
// Labels

struct LabelSet {
    Eigen::MatrixXi labels;  // (T-1) x N; row t is the direction from day t to t+1
    int ties = 0;            // exact p_{t+1} == p_t cases, labelled 0
};

LabelSet make_labels(const Eigen::MatrixXd& closes);

/// Sinusoidal encoding; throws ConfigError for odd d_model.
tensor::Tensor positional_encoding(std::size_t length, std::size_t d_model);

// ---------------------------------------------------------------------------
// Parameters

struct ModelParams {
    std::size_t input_dim = 0;
    std::size_t outputs = 0;
    std::vector<std::string> names;
    std::vector<tensor::Tensor> tensors;
    // Regression targets are standardised per output with these statistics.
    std::vector<double> target_mean;
    std::vector<double> target_std;

    const tensor::Tensor& get(std::string_view name) const;
    tensor::Tensor& get(std::string_view name);
    std::size_t parameter_count() const;
    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Xavier-uniform weights, zero biases, unit layer-norm gains, seeded by cfg.seed.
ModelParams init_params(const TransformerConfig& cfg, std::size_t input_dim, std::size_t outputs);

struct ForwardResult {
    tensor::Var output;                                 // B x N logits or standardised prices
    std::vector<std::vector<tensor::Var>> attention;    // [layer][sample * heads + head], W x W
};

/// Builds the encoder on `g`. `inputs` stacks B windows of W rows each as a
/// (B*W) x D' matrix; `params` are graph variables in ModelParams order.
ForwardResult forward(tensor::Graph& g, std::span<const tensor::Var> params, const TransformerConfig& cfg,
                      const tensor::Tensor& inputs, std::size_t batch);

/// Output for a single W x D' window: N logits (classification) or prices.
std::vector<double> encoder_forward(const ModelParams& params, const TransformerConfig& cfg,
                                    const Eigen::MatrixXd& window);

/// Per-layer, per-head attention weights for one window.
std::vector<std::vector<Eigen::MatrixXd>> attention_weights(const ModelParams& params, const TransformerConfig& cfg,
                                                            const Eigen::MatrixXd& window);

// ---------------------------------------------------------------------------
// Training and inference

/// Sliding-window samples: the window ending at row t (rows t-W+1..t) has
/// target row t.
struct SequenceData {
    Eigen::MatrixXd features;           // T x D'
    Eigen::MatrixXd targets;            // T x N: labels or next-day prices
    std::vector<std::size_t> train;     // window end rows
    std::vector<std::size_t> validation;
};

struct History {
    std::vector<double> train_loss;
    std::vector<double> validation_loss;
    int best_epoch = -1;
    bool stopped = false;
};

nlohmann::json to_json(const History& h);

/// Called after each epoch with (epoch, validation loss); return true to stop.
using EpochCallback = std::function<bool(int, double)>;

struct TrainResult {
    ModelParams params;
    History history;
};

/// Mini-batch Adam over the training windows. The parameters of the epoch
/// with the lowest validation loss are returned (the last epoch when the
/// validation set is empty). Throws TrainingError on a non-finite loss.
TrainResult train(const SequenceData& data, const TransformerConfig& cfg, const EpochCallback& on_epoch = {});

/// Mean loss over the given window ends.
double evaluate_loss(const ModelParams& params, const TransformerConfig& cfg, const SequenceData& data,
                     std::span<const std::size_t> ends);

/// Outputs for each window end: logits, or prices in target units.
Eigen::MatrixXd predict(const ModelParams& params, const TransformerConfig& cfg, const Eigen::MatrixXd& features,
                        std::span<const std::size_t> ends);

struct DirectionResult {
    std::vector<int> direction;
    int boundary = 0;  // predictions exactly at the decision boundary, labelled 0
};

/// Regression: 1 iff predicted - last_close > 0. Classification: 1 iff sigmoid(logit) > 0.5.
DirectionResult pred_direction(std::span<const double> predicted, std::span<const double> last_close, TaskMode mode);

double sigmoid(double z);

// ---------------------------------------------------------------------------
// Checkpoints and exports

struct Checkpoint {
    TransformerConfig config;
    ModelParams params;
    std::vector<std::string> feature_names;
    std::vector<std::string> target_names;
};

nlohmann::json to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct PredictionRow {
    ingest::Date date;  // day being predicted
    std::string ticker;
    int direction = 0;
    double value = 0.0;  // probability or price
};

void write_predictions_csv(std::ostream& out, std::span<const PredictionRow> rows);

}  // namespace cmtf::forecast
