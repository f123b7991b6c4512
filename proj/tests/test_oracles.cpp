#include "warmbandit/oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace warmbandit;

namespace {

const Context none{};

// phi(x, a) = [a + 1]
struct ScalarMap final : FeatureMap {
    std::size_t dim() const override { return 1; }
    Eigen::VectorXd operator()(const Context&, Action a) const override {
        return Eigen::VectorXd::Constant(1, static_cast<double>(a + 1));
    }
};

// phi read straight from the context: x = (a-independent) features
struct PassThrough final : FeatureMap {
    explicit PassThrough(std::size_t d) : d_(d) {}
    std::size_t dim() const override { return d_; }
    Eigen::VectorXd operator()(const Context& x, Action) const override {
        return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(d_));
    }
    std::size_t d_;
};

template <class O>
std::vector<double> frequencies(const O& o, std::size_t k, int n, std::uint64_t seed, const Context& x = none) {
    Rng rng(seed);
    std::vector<double> f(k, 0.0);
    for (int i = 0; i < n; ++i) f[o.play(x, rng)] += 1.0 / n;
    return f;
}

MultiActionForest leaf_fixture(std::vector<double> means) {
    // one split on x0 at 0.5; right leaf holds `means`, left the reverse
    Tree tree;
    TreeNode root;
    root.feature = 0;
    root.threshold = 0.5;
    root.left = 1;
    root.right = 2;
    TreeNode left, right;
    for (std::size_t a = 0; a < means.size(); ++a) {
        right.sum.push_back(means[a]);
        right.count.push_back(1);
        left.sum.push_back(means[means.size() - 1 - a]);
        left.count.push_back(1);
    }
    left.depth = right.depth = 1;
    tree.nodes = {root, left, right};
    return MultiActionForest(means.size(), 1, {}, {}, {tree}, std::vector<double>(means.size(), 0.0),
                             std::vector<std::uint64_t>(means.size(), 0));
}

}  // namespace

TEST_SUITE("oracles") {

TEST_CASE("A/B: single arm and uniform frequencies") {
    ABOracle one(1);
    Rng rng(0);
    for (int i = 0; i < 100; ++i) CHECK(one.play(none, rng) == 0);
    ABOracle ab(4);
    for (double f : frequencies(ab, 4, 100000, 1)) CHECK(std::abs(f - 0.25) <= 0.01);
}

TEST_CASE("play is pure") {
    ABOracle ab(3);
    UCBOracle ucb(3);
    TSGaussOracle tg(3);
    TSBernOracle tb(3);
    for (Action a = 0; a < 3; ++a) {
        ab.update(none, a, 1.0);
        ucb.update(none, a, 0.5);
        tg.update(none, a, 0.2);
        tb.update(none, a, 1.0);
    }
    Rng rng(5);
    for (BanditOracle* o : std::vector<BanditOracle*>{&ab, &ucb, &tg, &tb}) {
        const auto before = o->digest();
        for (int i = 0; i < 50; ++i) o->play(none, rng);
        CHECK(o->digest() == before);
    }
}

TEST_CASE("UCB cold start and index choices") {
    UCBOracle u(2);
    Rng rng(0);
    u.mutable_state().count = {0, 5};
    CHECK(u.play(none, rng) == 0);

    u.mutable_state().mean = {0.5, 0.6};
    u.mutable_state().count = {10, 10};
    CHECK(u.play(none, rng) == 1);

    u.mutable_state().mean = {0.9, 0.1};
    u.mutable_state().count = {100, 1};
    CHECK(u.index(1) == doctest::Approx(0.1 + std::sqrt(2.0 * std::log(101.0))));
    CHECK(u.play(none, rng) == 1);
}

TEST_CASE("UCB visits each arm once at cold start") {
    UCBOracle u(5);
    Rng rng(0);
    for (Action expect = 0; expect < 5; ++expect) {
        const Action a = u.play(none, rng);
        CHECK(a == expect);
        u.update(none, a, 0.0);
    }
}

TEST_CASE("UCB argmax is invariant to shifting all means") {
    Rng rng(8);
    std::uniform_real_distribution<double> m(0, 1);
    std::uniform_int_distribution<int> n(1, 50);
    for (int rep = 0; rep < 200; ++rep) {
        UCBOracle u(4), v(4);
        for (Action a = 0; a < 4; ++a) {
            u.mutable_state().mean[a] = m(rng);
            u.mutable_state().count[a] = n(rng);
        }
        v.mutable_state() = u.state();
        for (auto& x : v.mutable_state().mean) x += 0.25;
        CHECK(u.play(none, rng) == v.play(none, rng));
    }
}

TEST_CASE("running mean updates") {
    MeanCountState s(1);
    s.update(0, 1.0);
    CHECK(s.mean[0] == 1.0);
    CHECK(s.count[0] == 1);
    s.mean[0] = 0.5;
    s.count[0] = 3;
    s.update(0, 1.0);
    CHECK(s.mean[0] == 0.625);
    CHECK(s.count[0] == 4);

    Rng rng(1);
    std::uniform_real_distribution<double> u(0, 1);
    MeanCountState r(1);
    double sum = 0.0;
    const int m = 1000;
    for (int i = 0; i < m; ++i) {
        const double y = u(rng);
        sum += y;
        r.update(0, y);
    }
    CHECK(std::abs(r.mean[0] - sum / m) <= 1e-12);
    CHECK_THROWS_AS(s.update(3, 0.0), ContractError);
}

TEST_CASE("Gaussian Thompson sampling") {
    TSGaussOracle one(1);
    Rng rng(0);
    CHECK(one.play(none, rng) == 0);

    TSGaussOracle t(2, 0.1);
    t.mutable_state().mean = {1.0, 0.0};
    t.mutable_state().count = {1000000, 1000000};
    CHECK(frequencies(t, 2, 10000, 3)[0] >= 0.999);

    TSGaussOracle tiny(3, 1e-12);
    tiny.mutable_state().mean = {0.1, 0.3, 0.2};
    CHECK(frequencies(tiny, 3, 100, 4)[1] == doctest::Approx(1.0));
    CHECK_THROWS_AS(TSGaussOracle(2, 0.0), ParameterError);
}

TEST_CASE("Bernoulli Thompson sampling") {
    TSBernOracle t(2);
    t.successes() = {1000, 10};
    t.failures() = {10, 1000};
    CHECK(frequencies(t, 2, 10000, 5)[0] >= 0.999);

    TSBernOracle sym(3);
    for (double f : frequencies(sym, 3, 100000, 6)) CHECK(std::abs(f - 1.0 / 3.0) <= 0.01);

    CHECK_THROWS_AS(t.update(none, 0, 0.5), DataError);
    t.update(none, 1, 1.0);
    CHECK(t.successes()[1] == 11);
    t.update(none, 1, 0.0);
    CHECK(t.failures()[1] == 1001);
}

TEST_CASE("Beta sampler moments") {
    Rng rng(9);
    const int n = 200000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = sample_beta(2.0, 5.0, rng);
        s += v;
        s2 += v * v;
    }
    const double mean = s / n, var = s2 / n - mean * mean;
    CHECK(mean == doctest::Approx(2.0 / 7.0).epsilon(0.01));
    CHECK(var == doctest::Approx(10.0 / (49.0 * 8.0)).epsilon(0.03));
}

TEST_CASE("LinUCB scalar example") {
    LinUCBOracle o(2, std::make_shared<ScalarMap>(), constant_beta(0.0));
    o.ridge()->V(0, 0) = 2.0;
    o.ridge()->b(0) = 1.0;
    ++o.ridge()->version;
    CHECK(o.score(none, 0) == doctest::Approx(0.5));
    CHECK(o.score(none, 1) == doctest::Approx(1.0));
    Rng rng(0);
    CHECK(o.play(none, rng) == 1);
}

TEST_CASE("LinUCB symmetric cold start picks action 0") {
    LinUCBOracle o(3, std::make_shared<BlockOneHotFeatureMap>(3, 2));
    Rng rng(0);
    CHECK(o.play({0.3, -0.2}, rng) == 0);
}

TEST_CASE("LinUCB update arithmetic") {
    LinUCBOracle o(1, std::make_shared<PassThrough>(2));
    o.update({1.0, 0.0}, 0, 2.0);
    Eigen::MatrixXd V(2, 2);
    V << 2, 0, 0, 1;
    CHECK(o.ridge()->V == V);
    CHECK(o.ridge()->b == Eigen::Vector2d(2, 0));
    CHECK(o.ridge()->t == 2);

    const Eigen::MatrixXd before = o.ridge()->V;
    o.update({0.0, 0.0}, 0, 5.0);
    CHECK(o.ridge()->V == before);
    CHECK(o.ridge()->t == 3);
}

TEST_CASE("LinUCB inverse and accumulated outer products") {
    const std::size_t d = 6;
    LinUCBOracle o(1, std::make_shared<PassThrough>(d));
    Rng rng(12);
    std::normal_distribution<double> g(0, 1);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < 200; ++i) {
        Context x(d);
        for (auto& v : x) v = g(rng);
        Eigen::VectorXd phi = Eigen::Map<Eigen::VectorXd>(x.data(), d);
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c) acc(r, c) += phi[r] * phi[c];
        o.update(x, 0, g(rng));
    }
    const Eigen::MatrixXd diff = o.ridge()->V - Eigen::MatrixXd::Identity(d, d) - acc;
    CHECK(diff.cwiseAbs().maxCoeff() <= 1e-9);
    const Eigen::MatrixXd dense = o.ridge()->V.fullPivLu().inverse();
    CHECK((o.inverse() - dense).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((o.theta() - dense * o.ridge()->b).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("block one-hot features") {
    BlockOneHotFeatureMap f(3, 2);
    CHECK(f.dim() == 9);
    const Eigen::VectorXd phi = f({0.5, -1.0}, 1);
    Eigen::VectorXd expect = Eigen::VectorXd::Zero(9);
    expect(3) = 0.5;
    expect(4) = -1.0;
    expect(5) = 1.0;
    CHECK(phi == expect);
}

TEST_CASE("default LinUCB schedule") {
    const auto b = default_linucb_beta(4);
    CHECK(b(1) == doctest::Approx(std::sqrt(8.0 * (1.0 + 2.0 * std::log(2.0)))));
    CHECK(b(100) == doctest::Approx(std::sqrt(8.0 * (1.0 + 2.0 * std::log(100.0)))));
}

TEST_CASE("Fst explores uniformly when epsilon is 1") {
    FstParams p;
    p.epsilon.kind = ExplorationSchedule::Kind::constant;
    p.epsilon.value = 1.0;
    FstOracle o(4, 1, p);
    o.set_forest(leaf_fixture({0.1, 0.2, 0.3, 0.4}));
    for (double f : frequencies(o, 4, 100000, 2, {0.9})) CHECK(std::abs(f - 0.25) <= 0.01);
}

TEST_CASE("Fst exploits a hand-built forest when epsilon is 0") {
    FstParams p;
    p.epsilon.kind = ExplorationSchedule::Kind::constant;
    p.epsilon.value = 0.0;
    FstOracle o(2, 1, p);
    o.set_forest(leaf_fixture({0.2, 0.9}));
    Rng rng(0);
    CHECK(o.play({0.8}, rng) == 1);
    CHECK(o.play({0.1}, rng) == 0);
    const auto before = o.digest();
    for (int i = 0; i < 20; ++i) o.play({0.8}, rng);
    CHECK(o.digest() == before);
}

TEST_CASE("Fst retraining schedule") {
    FstParams p;
    p.retrain_every = 1;
    p.forest.num_trees = 3;
    FstOracle one(2, 1, p);
    one.update({0.4}, 1, 0.7);
    REQUIRE(one.forest().has_value());
    CHECK(one.forest()->predict(std::vector<double>{0.4}, 1) == doctest::Approx(0.7));

    p.retrain_every = 50;
    FstOracle o(2, 1, p);
    for (int i = 0; i < 49; ++i) o.update({0.1 * (i % 10)}, i % 2, 0.5);
    CHECK(o.retrain_count() == 0);
    CHECK_FALSE(o.forest().has_value());
    CHECK(o.data_size() == 49);
    o.update({0.3}, 0, 1.0);
    CHECK(o.retrain_count() == 1);
    CHECK(o.data_size() == 50);
    CHECK(o.round() == 51);
}

TEST_CASE("state replay reproduces the digest") {
    Rng rng(21);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<std::tuple<Context, Action, double>> seq;
    for (int i = 0; i < 300; ++i) seq.emplace_back(Context{u(rng), u(rng)}, i % 3, u(rng) < 0.4 ? 1.0 : 0.0);
    auto make = [] {
        std::vector<std::unique_ptr<BanditOracle>> v;
        v.push_back(std::make_unique<ABOracle>(3));
        v.push_back(std::make_unique<UCBOracle>(3));
        v.push_back(std::make_unique<TSGaussOracle>(3));
        v.push_back(std::make_unique<TSBernOracle>(3));
        v.push_back(std::make_unique<LinUCBOracle>(3, std::make_shared<BlockOneHotFeatureMap>(3, 2)));
        FstParams p;
        p.forest.num_trees = 5;
        p.retrain_every = 100;
        v.push_back(std::make_unique<FstOracle>(3, 2, p));
        return v;
    };
    auto first = make(), second = make();
    for (std::size_t i = 0; i < first.size(); ++i) {
        for (const auto& [x, a, y] : seq) first[i]->update(x, a, y);
        for (const auto& [x, a, y] : seq) second[i]->update(x, a, y);
        CHECK(first[i]->digest() == second[i]->digest());
    }
}

TEST_CASE("bad candidate sets are rejected") {
    UCBOracle u(2);
    Rng rng(0);
    CHECK_THROWS_AS(u.play_among(none, std::span<const Action>{}, rng), ContractError);
    const std::vector<Action> bad{0, 2};
    CHECK_THROWS_AS(u.play_among(none, bad, rng), ContractError);
    const std::vector<Action> only{1};
    CHECK(u.play_among(none, only, rng) == 1);
}

}
