#include "cmtf/hpo/hpo.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "cmtf/error.hpp"

namespace cmtf::hpo {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::size_t index_of(const Dimension& d, double v) {
    for (std::size_t i = 0; i < d.values.size(); ++i)
        if (d.values[i] == v) return i;
    return d.values.size();
}

Params uniform_draw(const SearchSpace& space, std::mt19937_64& rng) {
    Params p;
    for (const auto& d : space.dims) {
        std::uniform_int_distribution<std::size_t> pick(0, d.values.size() - 1);
        p[d.name] = d.values[pick(rng)];
    }
    return p;
}

// Enumerates the grid in odometer order and returns every feasible point.
std::vector<Params> feasible_points(const SearchSpace& space) {
    std::vector<Params> out;
    std::vector<std::size_t> idx(space.dims.size(), 0);
    while (true) {
        Params p;
        for (std::size_t k = 0; k < idx.size(); ++k) p[space.dims[k].name] = space.dims[k].values[idx[k]];
        if (space.feasible(p)) out.push_back(std::move(p));
        std::size_t k = 0;
        while (k < idx.size() && ++idx[k] == space.dims[k].values.size()) idx[k++] = 0;
        if (k == idx.size()) break;
    }
    return out;
}

constexpr int kRejectionAttempts = 2000;

Params feasible_uniform(const SearchSpace& space, std::mt19937_64& rng) {
    for (int a = 0; a < kRejectionAttempts; ++a) {
        Params p = uniform_draw(space, rng);
        if (space.feasible(p)) return p;
    }
    const auto points = feasible_points(space);
    if (points.empty()) throw ConfigError("search space has no point satisfying its constraint");
    std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
    return points[pick(rng)];
}

}  // namespace

bool heads_divide_d_model(const Params& p) {
    auto dm = p.find("d_model");
    auto h = p.find("heads");
    if (dm == p.end() || h == p.end()) return true;
    const auto d = static_cast<long long>(dm->second);
    const auto n = static_cast<long long>(h->second);
    return n > 0 && d % n == 0;
}

SearchSpace SearchSpace::defaults() {
    SearchSpace s;
    s.dims = {{"d_model", {32, 64, 128, 256, 512, 1024}},
              {"heads", {2, 4, 8, 16}},
              {"layers", {1, 2, 4, 8}},
              {"d_ffn", {256, 512, 1024, 2048, 4096}},
              {"lr", {1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2}},
              {"batch", {32, 64, 128}},
              {"epochs", {10, 20, 50, 100}}};
    s.constraint = heads_divide_d_model;
    return s;
}

void SearchSpace::validate() const {
    if (dims.empty()) throw ConfigError("search space has no dimensions");
    for (const auto& d : dims) {
        if (d.values.empty()) throw ConfigError("search dimension '" + d.name + "' is empty");
        for (const auto& other : dims)
            if (&other != &d && other.name == d.name) throw ConfigError("duplicate search dimension '" + d.name + "'");
        for (double v : d.values)
            if (!std::isfinite(v)) throw ConfigError("search dimension '" + d.name + "' has a non-finite value");
    }
}

const Dimension& SearchSpace::dim(std::string_view name) const {
    for (const auto& d : dims)
        if (d.name == name) return d;
    throw ConfigError("search space has no dimension '" + std::string(name) + "'");
}

std::string to_string(TrialStatus s) {
    switch (s) {
        case TrialStatus::Running: return "running";
        case TrialStatus::Pruned: return "pruned";
        case TrialStatus::Complete: return "complete";
    }
    return "?";
}

TrialStatus parse_trial_status(std::string_view s) {
    if (s == "running") return TrialStatus::Running;
    if (s == "pruned") return TrialStatus::Pruned;
    if (s == "complete") return TrialStatus::Complete;
    throw DataError("unknown trial status '" + std::string(s) + "'");
}

Params suggest(const SearchSpace& space, std::span<const TrialRecord> history, const TpeConfig& cfg,
               std::uint64_t seed) {
    space.validate();
    if (cfg.n_ei < 1 || !(cfg.gamma > 0.0 && cfg.gamma < 1.0)) throw ConfigError("tpe: invalid n_ei or gamma");
    std::mt19937_64 rng(splitmix64(seed));

    std::vector<const TrialRecord*> done;
    for (const auto& t : history)
        if (t.status == TrialStatus::Complete && t.value) done.push_back(&t);
    if (static_cast<int>(done.size()) < cfg.n_startup) return feasible_uniform(space, rng);

    std::stable_sort(done.begin(), done.end(), [](const TrialRecord* a, const TrialRecord* b) {
        if (*a->value != *b->value) return *a->value < *b->value;
        return a->id < b->id;
    });
    const std::size_t n_good = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(cfg.gamma * static_cast<double>(done.size()))));

    // Per-dimension smoothed categorical densities for the good (l) and bad (g) sets.
    std::vector<std::vector<double>> l(space.dims.size()), g(space.dims.size());
    for (std::size_t k = 0; k < space.dims.size(); ++k) {
        const Dimension& d = space.dims[k];
        std::vector<double> cg(d.values.size(), 1.0), cb(d.values.size(), 1.0);
        for (std::size_t i = 0; i < done.size(); ++i) {
            auto it = done[i]->params.find(d.name);
            if (it == done[i]->params.end()) continue;
            const std::size_t v = index_of(d, it->second);
            if (v == d.values.size()) continue;
            (i < n_good ? cg : cb)[v] += 1.0;
        }
        const double sg = std::accumulate(cg.begin(), cg.end(), 0.0);
        const double sb = std::accumulate(cb.begin(), cb.end(), 0.0);
        for (auto& c : cg) c /= sg;
        for (auto& c : cb) c /= sb;
        l[k] = std::move(cg);
        g[k] = std::move(cb);
    }

    auto draw_from_l = [&]() {
        Params p;
        std::vector<std::size_t> idx(space.dims.size());
        for (std::size_t k = 0; k < space.dims.size(); ++k) {
            std::discrete_distribution<std::size_t> pick(l[k].begin(), l[k].end());
            idx[k] = pick(rng);
            p[space.dims[k].name] = space.dims[k].values[idx[k]];
        }
        return std::make_pair(p, idx);
    };

    std::optional<Params> best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < cfg.n_ei; ++c) {
        std::optional<std::pair<Params, std::vector<std::size_t>>> cand;
        for (int a = 0; a < kRejectionAttempts && !cand; ++a) {
            auto drawn = draw_from_l();
            if (space.feasible(drawn.first)) cand = std::move(drawn);
        }
        if (!cand) break;
        double score = 0.0;
        for (std::size_t k = 0; k < space.dims.size(); ++k) score += std::log(l[k][cand->second[k]] / g[k][cand->second[k]]);
        if (score > best_score) {
            best_score = score;
            best = std::move(cand->first);
        }
    }
    if (!best) return feasible_uniform(space, rng);
    return *best;
}

std::string to_string(PrunerKind k) {
    switch (k) {
        case PrunerKind::Ratio: return "ratio";
        case PrunerKind::Halving: return "halving";
        case PrunerKind::None: return "none";
    }
    return "?";
}

PrunerKind parse_pruner(std::string_view s) {
    if (s == "ratio") return PrunerKind::Ratio;
    if (s == "halving") return PrunerKind::Halving;
    if (s == "none") return PrunerKind::None;
    throw ConfigError("unknown pruner '" + std::string(s) + "' (expected ratio, halving or none)");
}

void PrunerConfig::validate() const {
    if (!(eta > 1.0)) throw ConfigError("pruner: eta must exceed 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("pruner: gamma must lie in (0, 1]");
    if (warmup < 0) throw ConfigError("pruner: warm-up must be non-negative");
    if (min_resource < 1) throw ConfigError("pruner: min_resource must be positive");
}

bool should_prune(const TrialRecord& record, const PrunerConfig& cfg, std::size_t k, std::string* diagnostic) {
    if (k < 2 || k <= static_cast<std::size_t>(std::max(cfg.warmup, 0)) || k > record.intermediate.size()) return false;
    const double cur = record.intermediate[k - 1];
    const double prev = record.intermediate[k - 2];
    if (!std::isfinite(cur) || !std::isfinite(prev) || cur <= 0.0 || prev <= 0.0) {
        if (diagnostic) *diagnostic = "non-positive or non-finite intermediate value at step " + std::to_string(k);
        return true;
    }
    const double limit = std::pow(cfg.gamma, 1.0 / cfg.eta);
    const bool prune = cur / prev > limit;
    if (prune && diagnostic) {
        *diagnostic = "ratio " + std::to_string(cur / prev) + " exceeds " + std::to_string(limit) + " at step " +
                      std::to_string(k);
    }
    return prune;
}

bool halving_should_prune(const TrialRecord& record, std::span<const TrialRecord> others, const PrunerConfig& cfg,
                          std::size_t k) {
    if (k == 0 || k <= static_cast<std::size_t>(std::max(cfg.warmup, 0)) || k > record.intermediate.size()) return false;
    // Is k a rung?
    bool rung = false;
    for (double r = cfg.min_resource; r <= static_cast<double>(k) + 0.5; r *= cfg.eta) {
        if (static_cast<std::size_t>(std::llround(r)) == k) rung = true;
    }
    if (!rung) return false;
    const double mine = record.intermediate[k - 1];
    if (!std::isfinite(mine)) return true;
    std::vector<double> vals{mine};
    for (const auto& o : others) {
        if (o.id == record.id || o.intermediate.size() < k) continue;
        vals.push_back(o.intermediate[k - 1]);
    }
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(vals.size()) / cfg.eta)));
    const auto better = static_cast<std::size_t>(std::count_if(vals.begin(), vals.end(), [&](double v) { return v < mine; }));
    return better >= keep;
}

const TrialRecord& Study::best_trial() const {
    if (best < 0 || static_cast<std::size_t>(best) >= trials.size()) throw StudyError("study has no completed trial");
    return trials[static_cast<std::size_t>(best)];
}

namespace {

class Runner {
public:
    Runner(const Objective& obj, const SearchSpace& space, const TuneOptions& opts)
        : obj_(obj), space_(space), opts_(opts) {}

    Study run() {
        const int workers = std::max(1, std::min(opts_.parallelism, opts_.n_trials));
        if (workers == 1) {
            work();
        } else {
            std::vector<std::thread> pool;
            for (int w = 0; w < workers; ++w) pool.emplace_back([this] { work(); });
            for (auto& t : pool) t.join();
        }
        if (error_) std::rethrow_exception(error_);
        Study s;
        s.trials = std::move(trials_);
        for (std::size_t i = 0; i < s.trials.size(); ++i) {
            const auto& t = s.trials[i];
            if (t.status != TrialStatus::Complete) continue;
            if (s.best < 0 || *t.value < *s.trials[static_cast<std::size_t>(s.best)].value) s.best = static_cast<int>(i);
        }
        if (s.best < 0) {
            throw StudyError("all " + std::to_string(s.trials.size()) +
                             " trials were pruned; relax the pruning threshold (raise gamma) or use --pruner none");
        }
        return s;
    }

private:
    class Context : public TrialContext {
    public:
        Context(Runner& r, std::size_t slot, int id, std::uint64_t seed) : r_(r), slot_(slot), id_(id), seed_(seed) {}
        bool report(double value) override { return r_.report(slot_, value); }
        std::uint64_t seed() const override { return seed_; }
        int id() const override { return id_; }

    private:
        Runner& r_;
        std::size_t slot_;
        int id_;
        std::uint64_t seed_;
    };

    bool report(std::size_t slot, double value) {
        std::lock_guard lock(mu_);
        TrialRecord& t = trials_[slot];
        if (t.status == TrialStatus::Pruned) return true;
        t.intermediate.push_back(value);
        const std::size_t k = t.intermediate.size();
        bool prune = false;
        std::string why;
        switch (opts_.pruner.kind) {
            case PrunerKind::Ratio: prune = should_prune(t, opts_.pruner, k, &why); break;
            case PrunerKind::Halving:
                prune = halving_should_prune(t, trials_, opts_.pruner, k);
                if (prune) why = "outside the best 1/eta at rung " + std::to_string(k);
                break;
            case PrunerKind::None: break;
        }
        if (prune) {
            t.status = TrialStatus::Pruned;
            t.diagnostic = why;
        }
        return prune;
    }

    void work() {
        while (true) {
            std::size_t slot;
            Params params;
            int id;
            std::uint64_t seed;
            {
                std::lock_guard lock(mu_);
                if (error_ || next_ >= opts_.n_trials) return;
                id = next_++;
                seed = splitmix64(opts_.seed ^ (0xA5A5A5A5ULL + static_cast<std::uint64_t>(id)));
                try {
                    params = suggest(space_, trials_, opts_.tpe, seed);
                } catch (...) {
                    error_ = std::current_exception();
                    return;
                }
                TrialRecord rec;
                rec.id = id;
                rec.seed = seed;
                rec.params = params;
                slot = trials_.size();
                trials_.push_back(std::move(rec));
            }
            Context ctx(*this, slot, id, seed);
            try {
                const double y = obj_(params, ctx);
                std::lock_guard lock(mu_);
                TrialRecord& t = trials_[slot];
                if (t.status != TrialStatus::Pruned) {
                    if (!std::isfinite(y)) {
                        t.status = TrialStatus::Pruned;
                        t.diagnostic = "non-finite objective";
                    } else {
                        t.status = TrialStatus::Complete;
                        t.value = y;
                    }
                }
            } catch (...) {
                std::lock_guard lock(mu_);
                if (!error_) error_ = std::current_exception();
                return;
            }
        }
    }

    const Objective& obj_;
    const SearchSpace& space_;
    const TuneOptions& opts_;
    std::mutex mu_;
    std::vector<TrialRecord> trials_;
    int next_ = 0;
    std::exception_ptr error_;
};

}  // namespace

Study tune(const Objective& objective, const SearchSpace& space, const TuneOptions& opts) {
    space.validate();
    opts.pruner.validate();
    if (opts.n_trials < 1) throw ConfigError("tune: n_trials must be positive");
    if (opts.parallelism < 1) throw ConfigError("tune: parallelism must be positive");
    Runner runner(objective, space, opts);
    return runner.run();
}

nlohmann::json to_json(const TrialRecord& t) {
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [k, v] : t.params) params[k] = v;
    nlohmann::json j{{"id", t.id},
                     {"seed", t.seed},
                     {"params", params},
                     {"intermediate", t.intermediate},
                     {"status", to_string(t.status)},
                     {"value", t.value ? nlohmann::json(*t.value) : nlohmann::json(nullptr)}};
    if (!t.diagnostic.empty()) j["diagnostic"] = t.diagnostic;
    return j;
}

TrialRecord trial_from_json(const nlohmann::json& j) {
    try {
        TrialRecord t;
        t.id = j.at("id").get<int>();
        t.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& [k, v] : j.at("params").items()) t.params[k] = v.get<double>();
        t.intermediate = j.at("intermediate").get<std::vector<double>>();
        t.status = parse_trial_status(j.at("status").get<std::string>());
        if (!j.at("value").is_null()) t.value = j.at("value").get<double>();
        if (j.contains("diagnostic")) t.diagnostic = j.at("diagnostic").get<std::string>();
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("trial record: ") + e.what());
    }
}

nlohmann::json to_json(const Study& s) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& t : s.trials) a.push_back(to_json(t));
    return a;
}

Study study_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw DataError("study file must hold a JSON array of trials");
    Study s;
    for (const auto& e : j) s.trials.push_back(trial_from_json(e));
    for (std::size_t i = 0; i < s.trials.size(); ++i) {
        const auto& t = s.trials[i];
        if (t.status != TrialStatus::Complete || !t.value) continue;
        if (s.best < 0 || *t.value < *s.trials[static_cast<std::size_t>(s.best)].value) s.best = static_cast<int>(i);
    }
    return s;
}

}  // namespace cmtf::hpo
