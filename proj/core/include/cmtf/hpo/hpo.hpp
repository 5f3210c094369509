#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cmtf::hpo {

/// Sampled hyperparameters by dimension name. Every dimension is a finite
/// ordered set of numbers, so a value doubles as its category label.
using Params = std::map<std::string, double>;

struct Dimension {
    std::string name;
    std::vector<double> values;
};

struct SearchSpace {
    std::vector<Dimension> dims;
    /// Feasibility predicate; empty means every grid point is feasible.
    std::function<bool(const Params&)> constraint;

    /// d_model, heads, layers, d_ffn, lr, batch, epochs with heads | d_model.
    static SearchSpace defaults();

    void validate() const;
    bool feasible(const Params& p) const { return !constraint || constraint(p); }
    const Dimension& dim(std::string_view name) const;
};

/// Constraint used by SearchSpace::defaults: heads must divide d_model.
bool heads_divide_d_model(const Params& p);

enum class TrialStatus { Running, Pruned, Complete };

std::string to_string(TrialStatus s);
TrialStatus parse_trial_status(std::string_view s);

struct TrialRecord {
    int id = 0;
    std::uint64_t seed = 0;
    Params params;
    std::vector<double> intermediate;  // r_1..r_k in reporting order
    TrialStatus status = TrialStatus::Running;
    std::optional<double> value;       // only for complete trials
    std::string diagnostic;

    friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

struct TpeConfig {
    int n_startup = 10;
    double gamma = 0.25;
    int n_ei = 24;
};

/// Uniform over the feasible space until `n_startup` trials have completed,
/// then the n_ei-candidate TPE proposal maximising l(x)/g(x) with add-one
/// smoothed categorical densities. Deterministic in (space, history, seed).
Params suggest(const SearchSpace& space, std::span<const TrialRecord> history, const TpeConfig& cfg,
               std::uint64_t seed);

enum class PrunerKind { Ratio, Halving, None };

std::string to_string(PrunerKind k);
PrunerKind parse_pruner(std::string_view s);

struct PrunerConfig {
    PrunerKind kind = PrunerKind::Ratio;
    double gamma = 1.0;   // ratio rule threshold gamma^(1/eta)
    double eta = 3.0;     // reduction factor
    int warmup = 3;       // reporting steps before pruning may happen
    int min_resource = 1; // first halving rung

    void validate() const;
};

/// Ratio rule: true iff r_k / r_{k-1} > gamma^(1/eta), for k >= 2 and
/// k > warmup (1-based k). Non-positive or non-finite values prune with a
/// diagnostic.
bool should_prune(const TrialRecord& record, const PrunerConfig& cfg, std::size_t k,
                  std::string* diagnostic = nullptr);

/// Rung-based successive halving: at rungs min_resource * eta^s the trial
/// survives only within the best 1/eta of every trial that reached the rung.
bool halving_should_prune(const TrialRecord& record, std::span<const TrialRecord> others, const PrunerConfig& cfg,
                          std::size_t k);

/// Handle passed to objectives for reporting intermediate values.
class TrialContext {
public:
    virtual ~TrialContext() = default;
    /// Appends r_k; returns true when the trial should stop (pruned).
    virtual bool report(double value) = 0;
    virtual std::uint64_t seed() const = 0;
    virtual int id() const = 0;
};

using Objective = std::function<double(const Params&, TrialContext&)>;

struct Study {
    std::vector<TrialRecord> trials;
    int best = -1;  // index into trials

    const TrialRecord& best_trial() const;
};

struct TuneOptions {
    int n_trials = 20;
    std::uint64_t seed = 0;
    int parallelism = 1;
    TpeConfig tpe;
    PrunerConfig pruner;
};

/// Runs the study. Reproducible for parallelism 1. Throws StudyError when no
/// trial completes.
Study tune(const Objective& objective, const SearchSpace& space, const TuneOptions& opts);

nlohmann::json to_json(const TrialRecord& t);
TrialRecord trial_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Study& s);
Study study_from_json(const nlohmann::json& j);

}  // namespace cmtf::hpo
