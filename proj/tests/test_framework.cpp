#include "warmbandit/environments.hpp"
#include "warmbandit/evaluators.hpp"
#include "warmbandit/framework.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>

using namespace warmbandit;
using namespace fixtures;

namespace {

// Known constant mean per action, uniform context on {0, 1}.
struct ConstEnv final : Environment {
    explicit ConstEnv(std::vector<double> m) : means(std::move(m)) {}
    std::size_t num_actions() const override { return means.size(); }
    std::size_t dim() const override { return 1; }
    Context sample_context(Rng& rng) const override { return {std::bernoulli_distribution(0.5)(rng) ? 1.0 : 0.0}; }
    double sample_reward(const Context&, Action a, Rng& rng) const override {
        return std::bernoulli_distribution(means[a])(rng) ? 1.0 : 0.0;
    }
    std::optional<double> expected_reward(const Context&, Action a) const override { return means[a]; }
    std::optional<double> marginal_mean(Action a) const override { return means[a]; }
    std::vector<double> means;
};

// Counts play calls.
struct Counting final : BanditOracle {
    explicit Counting(BanditOracle& o) : inner(o) {}
    std::size_t num_actions() const override { return inner.num_actions(); }
    Action play_among(const Context& x, std::span<const Action> c, Rng& rng) const override {
        ++plays;
        return inner.play_among(x, c, rng);
    }
    void update(const Context& x, Action a, double y) override { inner.update(x, a, y); }
    std::string digest() const override { return inner.digest(); }
    BanditOracle& inner;
    mutable int plays = 0;
};

LoggedDataset ipsw_log(int per_action, std::size_t k = 2) {
    LoggedDataset d(k, 1);
    RecordId id = 0;
    for (Action a = 0; a < k; ++a)
        for (int i = 0; i < per_action; ++i) d.add(rec(id++, a, {0.0}, 1.0, 0.5));
    return d;
}

// expected emitted outcomes of one offline phase under a uniform two-arm
// oracle, enumerated over remaining budgets
double expected_streak(int b0, int b1) {
    double e = 0.0;
    if (b0 > 0) e += 0.5 * (1.0 + expected_streak(b0 - 1, b1));
    if (b1 > 0) e += 0.5 * (1.0 + expected_streak(b0, b1 - 1));
    return e;
}

}  // namespace

TEST_SUITE("framework") {

TEST_CASE("null evaluator reduces to the bare oracle") {
    auto env = std::make_shared<ConstEnv>(std::vector<double>{0.3, 0.6, 0.5});
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        UCBOracle a(3), b(3);
        NullEvaluator null;
        auto ctx = ContextGenerator::true_sampler(env);
        auto s = RunStreams::from_seed(seed);
        Runner runner(a, null, ctx, *env, s);
        const auto trace = runner.run(200);

        auto s2 = RunStreams::from_seed(seed);
        for (const auto& r : trace.rounds) {
            CHECK(r.virtual_plays == 0);
            const Context x = env->sample_context(s2.environment);
            const Action act = b.play(x, s2.oracle);
            const double y = env->sample_reward(x, act, s2.environment);
            b.update(x, act, y);
            CHECK(r.context == x);
            CHECK(r.action == act);
            CHECK(r.reward == y);
        }
        CHECK(a.digest() == b.digest());
        CHECK(trace.virtual_plays.empty());
    }
}

TEST_CASE("one round with IPSW budgets of two matches the enumerated expectation") {
    auto env = std::make_shared<ConstEnv>(std::vector<double>{0.5, 0.5});
    const double expect = expected_streak(2, 2);
    const int runs = 40000;
    double s = 0.0, s2 = 0.0;
    for (int r = 0; r < runs; ++r) {
        ABOracle ab(2);
        IPSWEvaluator ipsw(ipsw_log(2));
        REQUIRE(ipsw.initial_budget(0) == doctest::Approx(2.0));
        auto ctx = ContextGenerator::true_sampler(env);
        auto streams = RunStreams::from_seed(static_cast<std::uint64_t>(r));
        Runner runner(ab, ipsw, ctx, *env, streams);
        const double v = static_cast<double>(runner.run(1).rounds[0].virtual_plays);
        s += v;
        s2 += v * v;
    }
    const double mean = s / runs;
    const double se = std::sqrt((s2 / runs - mean * mean) / runs);
    CHECK(expect == doctest::Approx(3.125));
    CHECK(std::abs(mean - expect) <= 3.0 * se);
}

TEST_CASE("stopped exact matching costs a single probe") {
    auto env = std::make_shared<ConstEnv>(std::vector<double>{0.5, 0.5});
    LoggedDataset d(2, 1);
    d.add(rec(0, 0, {0.0}, 1.0));
    d.add(rec(1, 1, {1.0}, 1.0));
    ExactMatchingEvaluator em(d);
    Rng probe(0);
    CHECK_FALSE(em.get_outcome({5.0}, 0, probe).has_value());
    CHECK_FALSE(em.get_outcome({5.0}, 1, probe).has_value());
    UCBOracle ucb(2);
    Counting counting(ucb);
    auto ctx = ContextGenerator::true_sampler(env);
    auto streams = RunStreams::from_seed(1);
    Runner runner(counting, em, ctx, *env, streams);
    const auto e = runner.run_round(1);
    CHECK(e.virtual_plays == 0);
    CHECK(counting.plays == 2);  // one offline probe, one online play
}

TEST_CASE("UCB cold start through the runner") {
    auto env = std::make_shared<ConstEnv>(std::vector<double>{0.2, 0.4, 0.9, 0.1});
    UCBOracle ucb(4);
    NullEvaluator null;
    auto ctx = ContextGenerator::true_sampler(env);
    auto streams = RunStreams::from_seed(3);
    Runner runner(ucb, null, ctx, *env, streams);
    const auto trace = runner.run(4);
    for (std::size_t t = 0; t < 4; ++t) CHECK(trace.rounds[t].action == t);
}

TEST_CASE("runs are deterministic") {
    SyntheticParams p;
    p.qmc_points = 1 << 10;
    Rng theta(5);
    auto env = std::make_shared<SyntheticEnv>(p, theta);
    auto once = [&] {
        Rng log_rng(8);
        IPSWEvaluator ipsw(gen_logged_data(*env, 100, log_rng));
        UCBOracle ucb(3);
        auto ctx = ContextGenerator::true_sampler(env);
        auto streams = RunStreams::from_seed(42);
        Runner runner(ucb, ipsw, ctx, *env, streams);
        return runner.run(50);
    };
    const auto a = once(), b = once();
    REQUIRE(a.rounds.size() == b.rounds.size());
    for (std::size_t t = 0; t < a.rounds.size(); ++t) {
        CHECK(a.rounds[t].context == b.rounds[t].context);
        CHECK(a.rounds[t].action == b.rounds[t].action);
        CHECK(a.rounds[t].reward == b.rounds[t].reward);
        CHECK(a.rounds[t].virtual_plays == b.rounds[t].virtual_plays);
    }
    CHECK(a.virtual_plays.size() == b.virtual_plays.size());
}

TEST_CASE("virtual plays leave the environment stream alone") {
    SyntheticParams p;
    p.qmc_points = 1 << 10;
    Rng theta(6);
    auto env = std::make_shared<SyntheticEnv>(p, theta);
    Rng log_rng(2);
    const auto logged = gen_logged_data(*env, 200, log_rng);
    auto contexts_of = [&](OfflineEvaluator& ev) {
        ABOracle ab(3);
        auto ctx = ContextGenerator::true_sampler(env);
        auto streams = RunStreams::from_seed(10);
        Runner runner(ab, ev, ctx, *env, streams);
        std::vector<Context> xs;
        for (const auto& r : runner.run(30).rounds) xs.push_back(r.context);
        return xs;
    };
    NullEvaluator null;
    IPSWEvaluator ipsw(logged);
    CHECK(contexts_of(null) == contexts_of(ipsw));
}

TEST_CASE("regret decomposes into virtual and online parts") {
    SyntheticParams p;
    p.family = RewardFamily::binary;
    p.contexts = ContextKind::binary;
    p.dim = 2;
    p.num_actions = 2;
    p.qmc_points = 1 << 10;
    Rng theta(7);
    auto env = std::make_shared<SyntheticEnv>(p, theta);
    Rng log_rng(4);
    ExactMatchingEvaluator em(gen_logged_data(*env, 100, log_rng));
    UCBOracle ucb(2);
    auto ctx = ContextGenerator::true_sampler(env);
    auto streams = RunStreams::from_seed(5);
    Runner runner(ucb, em, ctx, *env, streams);
    const auto trace = runner.run(100);
    REQUIRE_FALSE(trace.virtual_plays.empty());
    auto gap = [&](const Context& x, Action a) {
        const double m0 = *env->expected_reward(x, 0), m1 = *env->expected_reward(x, 1);
        return std::max(m0, m1) - (a == 0 ? m0 : m1);
    };
    double online = 0.0, offline = 0.0;
    for (const auto& r : trace.rounds) online += gap(r.context, r.action);
    for (const auto& v : trace.virtual_plays) offline += gap(v.context, v.action);
    CHECK(std::abs(trace.online_regret() - online) <= 1e-12);
    CHECK(std::abs(trace.virtual_regret() - offline) <= 1e-12);
    CHECK(std::abs(*trace.rounds.back().cumulative_regret - online) <= 1e-12);
}

TEST_CASE("replaying a trace into a fresh oracle reproduces its state") {
    auto env = std::make_shared<ConstEnv>(std::vector<double>{0.3, 0.7});
    LoggedDataset d(2, 1);
    Rng rng(3);
    for (RecordId id = 0; id < 60; ++id)
        d.add(rec(id, id % 2, {double(id % 3 == 0)}, std::bernoulli_distribution(0.5)(rng) ? 1.0 : 0.0));
    ExactMatchingEvaluator em(d);
    TSBernOracle ts(2);
    auto ctx = ContextGenerator::true_sampler(env);
    auto streams = RunStreams::from_seed(9);
    Runner runner(ts, em, ctx, *env, streams);
    const auto trace = runner.run(80);
    TSBernOracle fresh(2);
    std::size_t v = 0;
    for (const auto& r : trace.rounds) {
        for (; v < trace.virtual_plays.size() && trace.virtual_plays[v].round <= r.t; ++v)
            fresh.update(trace.virtual_plays[v].context, trace.virtual_plays[v].action,
                         trace.virtual_plays[v].outcome);
        fresh.update(r.context, r.action, r.reward);
    }
    CHECK(fresh.digest() == ts.digest());
}

TEST_CASE("batch mode with IPSW spends the floored budgets") {
    auto env = std::make_shared<ConstEnv>(std::vector<double>{0.4, 0.6, 0.5});
    LoggedDataset d(3, 1);
    const double props[] = {0.5, 0.25, 0.8, 0.1, 0.6};
    for (RecordId id = 0; id < 30; ++id) d.add(rec(id, id % 3, {0.0}, 0.5, props[id % 5]));
    IPSWEvaluator ipsw(d);
    double expect = 0.0;
    for (Action a = 0; a < 3; ++a) expect += std::floor(ipsw.initial_budget(a));
    UCBOracle ucb(3);
    auto ctx = ContextGenerator::true_sampler(env);
    auto streams = RunStreams::from_seed(1);
    Runner runner(ucb, ipsw, ctx, *env, streams);
    const auto trace = runner.run_batch(10);
    CHECK(static_cast<double>(trace.virtual_plays.size()) == expect);
    CHECK(static_cast<double>(trace.rounds[0].virtual_plays) == expect);
    for (std::size_t t = 1; t < 10; ++t) CHECK(trace.rounds[t].virtual_plays == 0);
}

TEST_CASE("batch with a null evaluator matches the interleaved run") {
    auto env = std::make_shared<ConstEnv>(std::vector<double>{0.4, 0.6});
    auto go = [&](bool batch) {
        UCBOracle ucb(2);
        NullEvaluator null;
        auto ctx = ContextGenerator::true_sampler(env);
        auto streams = RunStreams::from_seed(77);
        Runner runner(ucb, null, ctx, *env, streams);
        auto trace = batch ? runner.run_batch(100) : runner.run(100);
        return std::make_pair(trace.online_regret(), ucb.digest());
    };
    CHECK(go(true) == go(false));
}

TEST_CASE("empirical context pool") {
    Rng rng(1);
    auto single = ContextGenerator::empirical(std::vector<Context>{{0.4}});
    for (int i = 0; i < 10; ++i) CHECK(single.draw(rng) == Context{0.4});

    auto pool = ContextGenerator::empirical(std::vector<Context>{{1.0}, {1.0}, {1.0}, {2.0}});
    int ones = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) ones += pool.draw(rng)[0] == 1.0;
    CHECK(std::abs(ones / double(n) - 0.75) <= 0.01);

    pool.observe({3.0});
    CHECK(pool.pool_size() == 5);
    bool seen = false;
    for (int i = 0; i < 1000 && !seen; ++i) seen = pool.draw(rng)[0] == 3.0;
    CHECK(seen);
    CHECK_THROWS_AS(ContextGenerator::empirical(std::vector<Context>{}), ParameterError);
}

TEST_CASE("virtual-play cap") {
    // an evaluator that never runs dry
    struct Endless final : OfflineEvaluator {
        std::optional<double> get_outcome(const Context&, Action, Rng&) override { return 0.5; }
    } endless;
    auto env = std::make_shared<ConstEnv>(std::vector<double>{0.4, 0.6});
    UCBOracle ucb(2);
    auto ctx = ContextGenerator::true_sampler(env);
    auto streams = RunStreams::from_seed(0);
    RunOptions opt;
    opt.max_virtual_per_round = 100;
    Runner runner(ucb, endless, ctx, *env, streams, opt);
    CHECK_THROWS_AS(runner.run(1), RunnerError);
}

TEST_CASE("marginal regret mode") {
    auto env = std::make_shared<ConstEnv>(std::vector<double>{0.4, 0.6});
    UCBOracle ucb(2);
    NullEvaluator null;
    auto ctx = ContextGenerator::true_sampler(env);
    auto streams = RunStreams::from_seed(0);
    RunOptions opt;
    opt.regret = RegretMode::marginal;
    Runner runner(ucb, null, ctx, *env, streams, opt);
    CHECK(*runner.regret_of({0.0}, 0) == doctest::Approx(0.2));
    CHECK(*runner.regret_of({0.0}, 1) == 0.0);
}

}
