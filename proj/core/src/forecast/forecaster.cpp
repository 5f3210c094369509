#include "cmtf/forecast/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "cmtf/error.hpp"
#include "cmtf/tensor/adam.hpp"
#include "../util/csv.hpp"

namespace cmtf::forecast {

using tensor::Graph;
using tensor::Tensor;
using tensor::Var;

std::string to_string(TaskMode m) { return m == TaskMode::Classification ? "classification" : "regression"; }

TaskMode parse_task_mode(std::string_view s) {
    if (s == "classification") return TaskMode::Classification;
    if (s == "regression") return TaskMode::Regression;
    throw ConfigError("unknown task mode '" + std::string(s) + "'");
}

void TransformerConfig::validate() const {
    auto positive = [](int v, const char* what) {
        if (v < 1) throw ConfigError(std::string("transformer: ") + what + " must be positive");
    };
    positive(d_model, "d_model");
    positive(num_heads, "num_heads");
    positive(num_layers, "num_layers");
    positive(d_ffn, "d_ffn");
    positive(lookback, "lookback");
    positive(batch_size, "batch_size");
    if (epochs < 0) throw ConfigError("transformer: epochs must be non-negative");
    if (d_model % num_heads != 0) {
        throw ConfigError("transformer: d_model " + std::to_string(d_model) + " is not divisible by " +
                          std::to_string(num_heads) + " heads");
    }
    if (d_model % 2 != 0) throw ConfigError("transformer: d_model must be even for the positional encoding");
    if (!(learning_rate > 0.0)) throw ConfigError("transformer: learning rate must be positive");
    if (!(layer_norm_eps >= 0.0)) throw ConfigError("transformer: layer_norm_eps must be non-negative");
}

nlohmann::json to_json(const TransformerConfig& c) {
    return {{"d_model", c.d_model},       {"num_heads", c.num_heads},
            {"num_layers", c.num_layers}, {"d_ffn", c.d_ffn},
            {"lookback", c.lookback},     {"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size}, {"epochs", c.epochs},
            {"mode", to_string(c.mode)},  {"seed", c.seed},
            {"layer_norm_eps", c.layer_norm_eps}};
}

TransformerConfig transformer_config_from_json(const nlohmann::json& j, TransformerConfig c) {
    if (!j.is_object()) throw ConfigError("model config must be an object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "d_model") c.d_model = v.get<int>();
            else if (key == "num_heads") c.num_heads = v.get<int>();
            else if (key == "num_layers") c.num_layers = v.get<int>();
            else if (key == "d_ffn") c.d_ffn = v.get<int>();
            else if (key == "lookback") c.lookback = v.get<int>();
            else if (key == "learning_rate") c.learning_rate = v.get<double>();
            else if (key == "batch_size") c.batch_size = v.get<int>();
            else if (key == "epochs") c.epochs = v.get<int>();
            else if (key == "mode") c.mode = parse_task_mode(v.get<std::string>());
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "layer_norm_eps") c.layer_norm_eps = v.get<double>();
            else throw ConfigError("model config: unknown key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return c;
}

LabelSet make_labels(const Eigen::MatrixXd& closes) {
    if (closes.rows() < 2) throw DataError("make_labels: need at least 2 days of prices");
    LabelSet out;
    out.labels.resize(closes.rows() - 1, closes.cols());
    for (Eigen::Index t = 0; t + 1 < closes.rows(); ++t) {
        for (Eigen::Index i = 0; i < closes.cols(); ++i) {
            const double diff = closes(t + 1, i) - closes(t, i);
            out.labels(t, i) = diff > 0.0 ? 1 : 0;
            if (diff == 0.0) ++out.ties;
        }
    }
    return out;
}

Tensor positional_encoding(std::size_t length, std::size_t d_model) {
    if (d_model == 0 || d_model % 2 != 0) throw ConfigError("positional_encoding: d_model must be even and positive");
    Tensor pe = Tensor::zeros(length, d_model);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t k = 0; k < d_model / 2; ++k) {
            const double angle = static_cast<double>(pos) /
                                 std::pow(10000.0, 2.0 * static_cast<double>(k) / static_cast<double>(d_model));
            pe(pos, 2 * k) = std::sin(angle);
            pe(pos, 2 * k + 1) = std::cos(angle);
        }
    }
    return pe;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

constexpr std::size_t kPerLayer = 12;

const char* const kLayerParams[kPerLayer] = {"wq",       "wk",     "wv",     "wo",     "ln1.gain", "ln1.bias",
                                              "ffn.w1",   "ffn.b1", "ffn.w2", "ffn.b2", "ln2.gain", "ln2.bias"};

std::size_t head_index(int layers) { return 2 + static_cast<std::size_t>(layers) * kPerLayer; }

}  // namespace

const Tensor& ModelParams::get(std::string_view name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
        if (names[k] == name) return tensors[k];
    throw ContractError("model has no parameter '" + std::string(name) + "'");
}

Tensor& ModelParams::get(std::string_view name) {
    return const_cast<Tensor&>(static_cast<const ModelParams&>(*this).get(name));
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

ModelParams init_params(const TransformerConfig& cfg, std::size_t input_dim, std::size_t outputs) {
    cfg.validate();
    if (input_dim == 0 || outputs == 0) throw DimensionError("init_params: input and output sizes must be positive");
    std::mt19937_64 rng(cfg.seed);
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto f = static_cast<std::size_t>(cfg.d_ffn);
    ModelParams p;
    p.input_dim = input_dim;
    p.outputs = outputs;
    auto add = [&](std::string name, Tensor t) {
        p.names.push_back(std::move(name));
        p.tensors.push_back(std::move(t));
    };
    add("input.weight", tensor::xavier_uniform(input_dim, d, rng));
    add("input.bias", Tensor({d}, 0.0));
    for (int l = 0; l < cfg.num_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        add(pre + "wq", tensor::xavier_uniform(d, d, rng));
        add(pre + "wk", tensor::xavier_uniform(d, d, rng));
        add(pre + "wv", tensor::xavier_uniform(d, d, rng));
        add(pre + "wo", tensor::xavier_uniform(d, d, rng));
        add(pre + "ln1.gain", Tensor({d}, 1.0));
        add(pre + "ln1.bias", Tensor({d}, 0.0));
        add(pre + "ffn.w1", tensor::xavier_uniform(d, f, rng));
        add(pre + "ffn.b1", Tensor({f}, 0.0));
        add(pre + "ffn.w2", tensor::xavier_uniform(f, d, rng));
        add(pre + "ffn.b2", Tensor({d}, 0.0));
        add(pre + "ln2.gain", Tensor({d}, 1.0));
        add(pre + "ln2.bias", Tensor({d}, 0.0));
    }
    add("head.weight", tensor::xavier_uniform(d, outputs, rng));
    add("head.bias", Tensor({outputs}, 0.0));
    return p;
}

ForwardResult forward(Graph& g, std::span<const Var> params, const TransformerConfig& cfg, const Tensor& inputs,
                      std::size_t batch) {
    const std::size_t expected = head_index(cfg.num_layers) + 2;
    if (params.size() != expected) {
        throw DimensionError("forward: expected " + std::to_string(expected) + " parameters, got " +
                             std::to_string(params.size()));
    }
    const auto w = static_cast<std::size_t>(cfg.lookback);
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto heads = static_cast<std::size_t>(cfg.num_heads);
    const std::size_t dk = d / heads;
    if (batch == 0 || inputs.rows() != batch * w) {
        throw DimensionError("forward: input " + inputs.shape_string() + " is not " + std::to_string(batch) +
                             " windows of " + std::to_string(w) + " rows");
    }
    if (inputs.cols() != params[0].value().rows()) {
        throw DimensionError("forward: window width " + std::to_string(inputs.cols()) + " does not match input dim " +
                             std::to_string(params[0].value().rows()));
    }

    ForwardResult res;
    const Tensor pe = positional_encoding(w, d);
    Tensor pe_tiled = Tensor::zeros(batch * w, d);
    for (std::size_t b = 0; b < batch; ++b)
        std::copy(pe.values().begin(), pe.values().end(), pe_tiled.data().begin() + static_cast<std::ptrdiff_t>(b * w * d));

    Var x = g.constant(inputs);
    Var h = add(add_row(matmul(x, params[0]), params[1]), g.constant(std::move(pe_tiled)));
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    for (int l = 0; l < cfg.num_layers; ++l) {
        const Var* p = params.data() + 2 + static_cast<std::size_t>(l) * kPerLayer;
        Var q = matmul(h, p[0]);
        Var k = matmul(h, p[1]);
        Var v = matmul(h, p[2]);
        std::vector<Var> samples;
        samples.reserve(batch);
        std::vector<Var> layer_attn;
        for (std::size_t b = 0; b < batch; ++b) {
            std::vector<Var> head_out;
            head_out.reserve(heads);
            for (std::size_t hd = 0; hd < heads; ++hd) {
                Var qh = slice(q, b * w, w, hd * dk, dk);
                Var kh = slice(k, b * w, w, hd * dk, dk);
                Var vh = slice(v, b * w, w, hd * dk, dk);
                Var a = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt_dk));
                layer_attn.push_back(a);
                head_out.push_back(matmul(a, vh));
            }
            samples.push_back(heads == 1 ? head_out.front() : concat_cols(head_out));
        }
        Var attn = matmul(batch == 1 ? samples.front() : concat_rows(samples), p[3]);
        h = layer_norm(add(h, attn), p[4], p[5], cfg.layer_norm_eps);
        Var ff = add_row(matmul(relu(add_row(matmul(h, p[6]), p[7])), p[8]), p[9]);
        h = layer_norm(add(h, ff), p[10], p[11], cfg.layer_norm_eps);
        res.attention.push_back(std::move(layer_attn));
    }

    std::vector<Var> last;
    last.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) last.push_back(slice(h, b * w + w - 1, 1, 0, d));
    Var top = batch == 1 ? last.front() : concat_rows(last);
    const std::size_t hi = head_index(cfg.num_layers);
    res.output = add_row(matmul(top, params[hi]), params[hi + 1]);
    return res;
}

namespace {

std::vector<Var> bind(Graph& g, const ModelParams& p, bool trainable) {
    std::vector<Var> vars;
    vars.reserve(p.tensors.size());
    for (const auto& t : p.tensors) vars.push_back(g.leaf(t, trainable));
    return vars;
}

void check_ends(const SequenceData& data, std::span<const std::size_t> ends, std::size_t w) {
    for (std::size_t e : ends) {
        if (e + 1 < w || e >= static_cast<std::size_t>(data.features.rows())) {
            throw WindowError("window ending at row " + std::to_string(e) + " needs " + std::to_string(w) +
                              " rows within a frame of " + std::to_string(data.features.rows()));
        }
    }
}

Tensor gather_windows(const Eigen::MatrixXd& features, std::span<const std::size_t> ends, std::size_t w) {
    const std::size_t dcols = static_cast<std::size_t>(features.cols());
    Tensor out = Tensor::zeros(ends.size() * w, dcols);
    std::size_t r = 0;
    for (std::size_t e : ends) {
        for (std::size_t k = 0; k < w; ++k, ++r) {
            const auto src = static_cast<Eigen::Index>(e + 1 - w + k);
            for (std::size_t c = 0; c < dcols; ++c) out(r, c) = features(src, static_cast<Eigen::Index>(c));
        }
    }
    return out;
}

Tensor gather_targets(const Eigen::MatrixXd& targets, std::span<const std::size_t> ends, const ModelParams& p) {
    const std::size_t n = static_cast<std::size_t>(targets.cols());
    Tensor out = Tensor::zeros(ends.size(), n);
    for (std::size_t i = 0; i < ends.size(); ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double v = targets(static_cast<Eigen::Index>(ends[i]), static_cast<Eigen::Index>(j));
            if (!p.target_mean.empty()) v = (v - p.target_mean[j]) / p.target_std[j];
            out(i, j) = v;
        }
    }
    return out;
}

Var loss_node(Var out, Var target, TaskMode mode) {
    return mode == TaskMode::Classification ? bce_with_logits(out, target) : mse(out, target);
}

constexpr std::size_t kEvalChunk = 256;

}  // namespace

double evaluate_loss(const ModelParams& params, const TransformerConfig& cfg, const SequenceData& data,
                     std::span<const std::size_t> ends) {
    if (ends.empty()) throw ContractError("evaluate_loss: no windows");
    const auto w = static_cast<std::size_t>(cfg.lookback);
    check_ends(data, ends, w);
    double total = 0.0;
    for (std::size_t s = 0; s < ends.size(); s += kEvalChunk) {
        const auto part = ends.subspan(s, std::min(kEvalChunk, ends.size() - s));
        Graph g;
        const auto vars = bind(g, params, false);
        const auto fr = forward(g, vars, cfg, gather_windows(data.features, part, w), part.size());
        Var loss = loss_node(fr.output, g.constant(gather_targets(data.targets, part, params)), cfg.mode);
        total += loss.value()[0] * static_cast<double>(part.size());
    }
    return total / static_cast<double>(ends.size());
}

nlohmann::json to_json(const History& h) {
    auto nullable = [](const std::vector<double>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (double x : v) a.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
        return a;
    };
    return {{"train_loss", nullable(h.train_loss)},
            {"validation_loss", nullable(h.validation_loss)},
            {"best_epoch", h.best_epoch},
            {"stopped", h.stopped}};
}

TrainResult train(const SequenceData& data, const TransformerConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (data.targets.rows() != data.features.rows()) {
        throw DimensionError("train: features and targets have different row counts");
    }
    const auto w = static_cast<std::size_t>(cfg.lookback);
    if (data.train.empty()) throw WindowError("train: no training windows of length " + std::to_string(w));
    check_ends(data, data.train, w);
    check_ends(data, data.validation, w);

    TrainResult res;
    res.params = init_params(cfg, static_cast<std::size_t>(data.features.cols()),
                             static_cast<std::size_t>(data.targets.cols()));
    if (cfg.mode == TaskMode::Regression) {
        const auto n = static_cast<std::size_t>(data.targets.cols());
        res.params.target_mean.assign(n, 0.0);
        res.params.target_std.assign(n, 1.0);
        for (std::size_t j = 0; j < n; ++j) {
            double m = 0.0, ss = 0.0;
            for (std::size_t e : data.train) m += data.targets(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(j));
            m /= static_cast<double>(data.train.size());
            for (std::size_t e : data.train) {
                const double dlt = data.targets(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(j)) - m;
                ss += dlt * dlt;
            }
            const double sd = std::sqrt(ss / static_cast<double>(data.train.size()));
            res.params.target_mean[j] = m;
            res.params.target_std[j] = sd > 1e-12 ? sd : 1.0;
        }
    }
    if (cfg.epochs == 0) return res;

    tensor::AdamState adam({cfg.learning_rate, 0.9, 0.999, 1e-8});
    std::mt19937_64 rng(cfg.seed ^ 0x5DEECE66DULL);
    std::vector<std::size_t> order(data.train.begin(), data.train.end());
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    ModelParams best = res.params;
    double best_val = std::numeric_limits<double>::infinity();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(order[i - 1], order[pick(rng)]);
        }
        double epoch_loss = 0.0;
        try {
            for (std::size_t s = 0; s < order.size(); s += bs) {
                const std::span<const std::size_t> part(order.data() + s, std::min(bs, order.size() - s));
                Graph g;
                const auto vars = bind(g, res.params, true);
                const auto fr = forward(g, vars, cfg, gather_windows(data.features, part, w), part.size());
                Var loss = loss_node(fr.output, g.constant(gather_targets(data.targets, part, res.params)), cfg.mode);
                g.backward(loss);
                std::vector<Tensor> grads;
                grads.reserve(vars.size());
                for (const auto& v : vars) grads.push_back(v.grad());
                tensor::adam_step(res.params.tensors, grads, adam);
                epoch_loss += loss.value()[0] * static_cast<double>(part.size());
            }
        } catch (const TrainingError&) {
            throw;
        } catch (const NumericError& e) {
            throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
        }
        epoch_loss /= static_cast<double>(order.size());
        if (!std::isfinite(epoch_loss)) {
            throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": non-finite loss", epoch);
        }
        res.history.train_loss.push_back(epoch_loss);

        double monitored = epoch_loss;
        if (!data.validation.empty()) {
            try {
                monitored = evaluate_loss(res.params, cfg, data, data.validation);
            } catch (const NumericError& e) {
                throw TrainingError("validation failed at epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
            }
            res.history.validation_loss.push_back(monitored);
            if (monitored < best_val) {
                best_val = monitored;
                best = res.params;
                res.history.best_epoch = epoch;
            }
        } else {
            res.history.best_epoch = epoch;
        }
        if (on_epoch && on_epoch(epoch, monitored)) {
            res.history.stopped = true;
            break;
        }
    }
    if (!data.validation.empty()) res.params = std::move(best);
    return res;
}

Eigen::MatrixXd predict(const ModelParams& params, const TransformerConfig& cfg, const Eigen::MatrixXd& features,
                        std::span<const std::size_t> ends) {
    const auto w = static_cast<std::size_t>(cfg.lookback);
    for (std::size_t e : ends) {
        if (e + 1 < w || e >= static_cast<std::size_t>(features.rows())) {
            throw WindowError("predict: window ending at row " + std::to_string(e) + " needs " + std::to_string(w) +
                              " rows");
        }
    }
    Eigen::MatrixXd out(static_cast<Eigen::Index>(ends.size()), static_cast<Eigen::Index>(params.outputs));
    for (std::size_t s = 0; s < ends.size(); s += kEvalChunk) {
        const auto part = ends.subspan(s, std::min(kEvalChunk, ends.size() - s));
        Graph g;
        const auto vars = bind(g, params, false);
        const auto fr = forward(g, vars, cfg, gather_windows(features, part, w), part.size());
        const Tensor& o = fr.output.value();
        for (std::size_t i = 0; i < part.size(); ++i) {
            for (std::size_t j = 0; j < params.outputs; ++j) {
                double v = o(i, j);
                if (!params.target_mean.empty()) v = v * params.target_std[j] + params.target_mean[j];
                out(static_cast<Eigen::Index>(s + i), static_cast<Eigen::Index>(j)) = v;
            }
        }
    }
    return out;
}

std::vector<double> encoder_forward(const ModelParams& params, const TransformerConfig& cfg,
                                    const Eigen::MatrixXd& window) {
    if (window.rows() != cfg.lookback) {
        throw DimensionError("encoder_forward: window has " + std::to_string(window.rows()) + " rows, lookback is " +
                             std::to_string(cfg.lookback));
    }
    const std::size_t end = static_cast<std::size_t>(cfg.lookback) - 1;
    const Eigen::MatrixXd out = predict(params, cfg, window, std::span<const std::size_t>(&end, 1));
    return {out.data(), out.data() + out.size()};
}

std::vector<std::vector<Eigen::MatrixXd>> attention_weights(const ModelParams& params, const TransformerConfig& cfg,
                                                            const Eigen::MatrixXd& window) {
    if (window.rows() != cfg.lookback) throw DimensionError("attention_weights: window rows must equal lookback");
    const std::size_t end = static_cast<std::size_t>(cfg.lookback) - 1;
    Graph g;
    const auto vars = bind(g, params, false);
    const auto fr = forward(g, vars, cfg, gather_windows(window, std::span<const std::size_t>(&end, 1), end + 1), 1);
    std::vector<std::vector<Eigen::MatrixXd>> out;
    for (const auto& layer : fr.attention) {
        std::vector<Eigen::MatrixXd> heads;
        for (const auto& a : layer) {
            const Tensor& t = a.value();
            Eigen::MatrixXd m(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
            for (std::size_t r = 0; r < t.rows(); ++r)
                for (std::size_t c = 0; c < t.cols(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t(r, c);
            heads.push_back(std::move(m));
        }
        out.push_back(std::move(heads));
    }
    return out;
}

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

DirectionResult pred_direction(std::span<const double> predicted, std::span<const double> last_close, TaskMode mode) {
    DirectionResult out;
    out.direction.reserve(predicted.size());
    if (mode == TaskMode::Regression && last_close.size() != predicted.size()) {
        throw ContractError("pred_direction: regression mode needs one last close per prediction");
    }
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        double margin;
        if (mode == TaskMode::Classification) {
            margin = sigmoid(predicted[i]) - 0.5;
        } else {
            margin = predicted[i] - last_close[i];
        }
        out.direction.push_back(margin > 0.0 ? 1 : 0);
        if (margin == 0.0) ++out.boundary;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr const char* kCheckpointFormat = "cmtf-checkpoint";
constexpr int kCheckpointVersion = 1;
}  // namespace

nlohmann::json to_json(const Checkpoint& c) {
    nlohmann::json params = nlohmann::json::array();
    for (std::size_t k = 0; k < c.params.tensors.size(); ++k) {
        const Tensor& t = c.params.tensors[k];
        params.push_back({{"name", c.params.names[k]}, {"shape", t.shape()}, {"data", t.values()}});
    }
    return {{"format", kCheckpointFormat},
            {"version", kCheckpointVersion},
            {"seed", c.config.seed},
            {"config", to_json(c.config)},
            {"input_dim", c.params.input_dim},
            {"outputs", c.params.outputs},
            {"feature_names", c.feature_names},
            {"target_names", c.target_names},
            {"target_mean", c.params.target_mean},
            {"target_std", c.params.target_std},
            {"params", params}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != kCheckpointFormat) throw DataError("not a cmtf checkpoint");
        if (j.at("version").get<int>() != kCheckpointVersion) {
            throw DataError("unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
        }
        Checkpoint c;
        c.config = transformer_config_from_json(j.at("config"));
        c.config.validate();
        c.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        c.target_names = j.at("target_names").get<std::vector<std::string>>();
        const auto input_dim = j.at("input_dim").get<std::size_t>();
        const auto outputs = j.at("outputs").get<std::size_t>();
        // The expected layout doubles as a shape check for the stored tensors.
        ModelParams layout = init_params(c.config, input_dim, outputs);
        const auto& arr = j.at("params");
        if (arr.size() != layout.tensors.size()) throw DataError("checkpoint: parameter count mismatch");
        for (std::size_t k = 0; k < arr.size(); ++k) {
            const auto name = arr[k].at("name").get<std::string>();
            auto shape = arr[k].at("shape").get<Tensor::Shape>();
            if (name != layout.names[k] || shape != layout.tensors[k].shape()) {
                throw DataError("checkpoint: parameter '" + name + "' does not match the configured model");
            }
            layout.tensors[k] = Tensor(std::move(shape), arr[k].at("data").get<std::vector<double>>());
        }
        layout.target_mean = j.at("target_mean").get<std::vector<double>>();
        layout.target_std = j.at("target_std").get<std::vector<double>>();
        c.params = std::move(layout);
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out << to_json(c).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

void write_predictions_csv(std::ostream& out, std::span<const PredictionRow> rows) {
    out << "date,ticker,pred_direction,probability_or_price\n";
    for (const auto& r : rows) {
        out << r.date.iso() << ',' << r.ticker << ',' << r.direction << ',' << util::format_double(r.value) << '\n';
    }
}

}  // namespace cmtf::forecast
