// Virtual-play loop: the offline evaluator answers oracle plays until it runs
// dry, then one real round is played against the environment.
#pragma once

#include "warmbandit/core.hpp"

#include <memory>

namespace warmbandit {

class Environment {
public:
    virtual ~Environment() = default;
    virtual std::size_t num_actions() const = 0;
    virtual std::size_t dim() const = 0;
    virtual RewardRange reward_range() const { return {}; }
    virtual Context sample_context(Rng& rng) const = 0;
    virtual double sample_reward(const Context& x, Action a, Rng& rng) const = 0;
    // Ground truth, when known.
    virtual std::optional<double> expected_reward(const Context& x, Action a) const = 0;
    virtual std::optional<double> marginal_mean(Action a) const = 0;
};

enum class RegretMode {
    contextual,  // max_a E[y|a,x_t] - E[y|a_t,x_t]
    marginal,    // max_a E[y|a] - E[y|a_t]
    none,
};

// Source of virtual-play contexts.
class ContextGenerator {
public:
    // Draws from the environment's own context distribution.
    static ContextGenerator true_sampler(std::shared_ptr<const Environment> env);
    // Uniform over a pool that starts with the logged contexts.
    static ContextGenerator empirical(const LoggedDataset& logged);
    static ContextGenerator empirical(std::vector<Context> pool);

    Context draw(Rng& rng) const;
    // Online contexts join the pool in empirical mode.
    void observe(const Context& x);
    bool is_empirical() const { return !env_; }
    std::size_t pool_size() const { return pool_.size(); }

private:
    std::shared_ptr<const Environment> env_;
    std::vector<Context> pool_;
};

struct VirtualPlay {
    std::size_t round = 0;  // online round during which it happened (1-based)
    Context context;
    Action action = 0;
    double outcome = 0.0;
    std::optional<double> regret;
};

struct RoundEntry {
    std::size_t t = 0;
    Context context;
    Action action = 0;
    double reward = 0.0;
    std::size_t virtual_plays = 0;
    std::optional<double> regret;
    std::optional<double> cumulative_regret;
};

struct RunTrace {
    std::vector<RoundEntry> rounds;
    std::vector<VirtualPlay> virtual_plays;

    double online_regret() const;
    double virtual_regret() const;
};

struct RunStreams {
    Rng environment;
    Rng oracle;
    Rng evaluator;
    Rng context_generator;
    // Oracle randomness for offline-phase plays.
    Rng virtual_play;

    static RunStreams from_seed(std::uint64_t seed);
};

struct RunOptions {
    RegretMode regret = RegretMode::contextual;
    std::size_t max_virtual_per_round = 10'000'000;
    bool record_virtual_plays = true;
    // false freezes the oracle after the offline phase.
    bool learn_online = true;
};

struct RunnerError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Runner {
public:
    Runner(BanditOracle& oracle, OfflineEvaluator& evaluator, ContextGenerator& contexts, const Environment& env,
           RunStreams& streams, RunOptions options = {});

    RoundEntry run_round(std::size_t t);
    // Interleaved runs of T rounds.
    RunTrace run(std::size_t T);
    // Offline phase per action with the action fixed, then T online rounds.
    RunTrace run_batch(std::size_t T);

    std::optional<double> regret_of(const Context& x, Action a) const;

private:
    std::size_t offline_phase(std::size_t t);
    RoundEntry online_round(std::size_t t, std::size_t virtual_count);

    BanditOracle& oracle_;
    OfflineEvaluator& evaluator_;
    ContextGenerator& contexts_;
    const Environment& env_;
    RunStreams& streams_;
    RunOptions options_;
    RunTrace* trace_ = nullptr;
    double cumulative_ = 0.0;
    std::vector<double> marginal_;
    double best_marginal_ = 0.0;
};

}  // namespace warmbandit
