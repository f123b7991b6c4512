#include "warmbandit/framework.hpp"

#include <algorithm>
#include <limits>

namespace warmbandit {

ContextGenerator ContextGenerator::true_sampler(std::shared_ptr<const Environment> env) {
    if (!env) throw ParameterError("true sampler needs an environment");
    ContextGenerator g;
    g.env_ = std::move(env);
    return g;
}

ContextGenerator ContextGenerator::empirical(const LoggedDataset& logged) {
    std::vector<Context> pool;
    for (std::size_t s = 0; s < logged.total_size(); ++s)
        if (logged.slot_alive(s)) pool.push_back(logged.at_slot(s).context);
    return empirical(std::move(pool));
}

ContextGenerator ContextGenerator::empirical(std::vector<Context> pool) {
    if (pool.empty()) throw ParameterError("empirical context pool is empty");
    ContextGenerator g;
    g.pool_ = std::move(pool);
    return g;
}

Context ContextGenerator::draw(Rng& rng) const {
    if (env_) return env_->sample_context(rng);
    std::uniform_int_distribution<std::size_t> pick(0, pool_.size() - 1);
    return pool_[pick(rng)];
}

void ContextGenerator::observe(const Context& x) {
    if (!env_) pool_.push_back(x);
}

double RunTrace::online_regret() const {
    double s = 0.0;
    for (const auto& r : rounds) s += r.regret.value_or(0.0);
    return s;
}

double RunTrace::virtual_regret() const {
    double s = 0.0;
    for (const auto& v : virtual_plays) s += v.regret.value_or(0.0);
    return s;
}

RunStreams RunStreams::from_seed(std::uint64_t seed) {
    return RunStreams{make_stream(seed, stream::environment), make_stream(seed, stream::oracle),
                      make_stream(seed, stream::evaluator), make_stream(seed, stream::context_generator),
                      make_stream(seed, stream::virtual_play)};
}

Runner::Runner(BanditOracle& oracle, OfflineEvaluator& evaluator, ContextGenerator& contexts, const Environment& env,
               RunStreams& streams, RunOptions options)
    : oracle_(oracle), evaluator_(evaluator), contexts_(contexts), env_(env), streams_(streams), options_(options) {
    if (oracle_.num_actions() != env_.num_actions()) throw ParameterError("oracle and environment disagree on K");
    if (options_.regret == RegretMode::marginal) {
        for (Action a = 0; a < env_.num_actions(); ++a) {
            const auto m = env_.marginal_mean(a);
            if (!m) {
                marginal_.clear();
                break;
            }
            marginal_.push_back(*m);
        }
        if (!marginal_.empty()) best_marginal_ = *std::max_element(marginal_.begin(), marginal_.end());
    }
}

std::optional<double> Runner::regret_of(const Context& x, Action a) const {
    switch (options_.regret) {
        case RegretMode::none:
            return std::nullopt;
        case RegretMode::marginal:
            if (marginal_.empty()) return std::nullopt;
            return best_marginal_ - marginal_[a];
        case RegretMode::contextual: {
            double best = -std::numeric_limits<double>::infinity();
            double chosen = 0.0;
            for (Action b = 0; b < env_.num_actions(); ++b) {
                const auto m = env_.expected_reward(x, b);
                if (!m) return std::nullopt;
                best = std::max(best, *m);
                if (b == a) chosen = *m;
            }
            return best - chosen;
        }
    }
    return std::nullopt;
}

std::size_t Runner::offline_phase(std::size_t t) {
    std::size_t count = 0;
    for (;;) {
        const Context x = contexts_.draw(streams_.context_generator);
        const Action a = oracle_.play(x, streams_.virtual_play);
        const auto y = evaluator_.get_outcome(x, a, streams_.evaluator);
        if (!y) break;
        if (++count > options_.max_virtual_per_round)
            throw RunnerError("offline evaluator exceeded the virtual-play cap in round " + std::to_string(t));
        oracle_.update(x, a, *y);
        if (trace_ && options_.record_virtual_plays) trace_->virtual_plays.push_back({t, x, a, *y, regret_of(x, a)});
    }
    return count;
}

RoundEntry Runner::online_round(std::size_t t, std::size_t virtual_count) {
    RoundEntry e;
    e.t = t;
    e.virtual_plays = virtual_count;
    e.context = env_.sample_context(streams_.environment);
    e.action = oracle_.play(e.context, streams_.oracle);
    e.reward = env_.sample_reward(e.context, e.action, streams_.environment);
    if (options_.learn_online) oracle_.update(e.context, e.action, e.reward);
    contexts_.observe(e.context);
    e.regret = regret_of(e.context, e.action);
    if (e.regret) {
        cumulative_ += *e.regret;
        e.cumulative_regret = cumulative_;
    }
    return e;
}

RoundEntry Runner::run_round(std::size_t t) {
    const std::size_t n = offline_phase(t);
    return online_round(t, n);
}

RunTrace Runner::run(std::size_t T) {
    if (T < 1) throw ParameterError("T must be >= 1");
    RunTrace trace;
    trace.rounds.reserve(T);
    trace_ = &trace;
    cumulative_ = 0.0;
    for (std::size_t t = 1; t <= T; ++t) trace.rounds.push_back(run_round(t));
    trace_ = nullptr;
    return trace;
}

RunTrace Runner::run_batch(std::size_t T) {
    if (T < 1) throw ParameterError("T must be >= 1");
    RunTrace trace;
    trace.rounds.reserve(T);
    trace_ = &trace;
    cumulative_ = 0.0;
    std::size_t offline = 0;
    for (Action a = 0; a < oracle_.num_actions(); ++a) {
        std::size_t count = 0;
        for (;;) {
            const Context x = contexts_.draw(streams_.context_generator);
            const auto y = evaluator_.get_outcome(x, a, streams_.evaluator);
            if (!y) break;
            if (++count > options_.max_virtual_per_round)
                throw RunnerError("offline evaluator exceeded the virtual-play cap for action " + std::to_string(a));
            oracle_.update(x, a, *y);
            if (options_.record_virtual_plays) trace.virtual_plays.push_back({1, x, a, *y, regret_of(x, a)});
        }
        offline += count;
    }
    for (std::size_t t = 1; t <= T; ++t) trace.rounds.push_back(online_round(t, t == 1 ? offline : 0));
    trace_ = nullptr;
    return trace;
}

}  // namespace warmbandit
