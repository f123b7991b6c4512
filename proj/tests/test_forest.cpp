#include "warmbandit/forest.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace warmbandit;
using namespace fixtures;

namespace {

// independent descent for the brute-force leaf oracle
std::size_t route(const Tree& t, std::span<const double> x) {
    std::size_t n = 0;
    for (;;) {
        const auto& node = t.nodes[n];
        if (node.feature < 0) return n;
        const bool go_left = !(x[node.feature] > node.threshold);
        n = go_left ? node.left : node.right;
    }
}

TrainingData noisy_data(std::size_t n, std::size_t d, std::size_t k, Rng& rng) {
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<std::size_t> act(0, k - 1);
    TrainingData data(d);
    std::vector<double> x(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : x) v = u(rng);
        const Action a = act(rng);
        data.push(x, a, std::clamp(x[0] * 0.5 + 0.3 * static_cast<double>(a) / k + 0.1 * u(rng), 0.0, 1.0));
    }
    return data;
}

}  // namespace

TEST_SUITE("forest") {

TEST_CASE("one sample gives single-leaf trees") {
    TrainingData data(2);
    data.push(std::vector<double>{0.3, 0.7}, 1, 0.4);
    ForestParams p;
    p.num_trees = 5;
    Rng rng(1);
    const auto f = train_forest(data, 2, p, {}, rng);
    for (std::size_t b = 0; b < f.num_trees(); ++b) CHECK(f.tree(b).nodes.size() == 1);
    CHECK(f.predict(std::vector<double>{0.3, 0.7}, 1) == doctest::Approx(0.4));
    // no data for action 0 anywhere: range midpoint
    CHECK(f.predict(std::vector<double>{0.3, 0.7}, 0) == doctest::Approx(0.5));
}

TEST_CASE("two separated clusters are split between them") {
    Rng rng(4);
    std::bernoulli_distribution side(0.5), act(0.5);
    TrainingData data(1);
    for (int i = 0; i < 200; ++i) {
        const bool right = side(rng);
        data.push(std::vector<double>{right ? 1.0 : -1.0}, act(rng) ? 1 : 0, right ? 1.0 : 0.0);
    }
    ForestParams p;
    p.num_trees = 100;
    p.min_per_action = 1;
    p.subsample_exponent = 1.0;
    const auto f = train_forest(data, 2, p, {}, rng);
    int good = 0;
    for (std::size_t b = 0; b < f.num_trees(); ++b) {
        const auto& root = f.tree(b).nodes[0];
        if (!root.is_leaf() && root.threshold > -1.0 && root.threshold < 1.0) ++good;
    }
    CHECK(good >= 95);
    CHECK(f.predict(std::vector<double>{1.0}, 0) == doctest::Approx(1.0));
    CHECK(f.predict(std::vector<double>{-1.0}, 1) == doctest::Approx(0.0));
}

TEST_CASE("leaf estimate arithmetic") {
    const Tree t = single_leaf(leaf({2.0, 0.0}, {3, 0}));
    CHECK(*t.leaf_estimate(std::vector<double>{0.0}, 0) == doctest::Approx(2.0 / 3.0));
    CHECK_FALSE(t.leaf_estimate(std::vector<double>{0.0}, 1).has_value());
}

TEST_CASE("predict averages present trees only") {
    const auto f = forest_of(1, 1,
                             {single_leaf(leaf({0.2}, {1})), single_leaf(leaf({0.8}, {2})),
                              single_leaf(leaf({0.0}, {0}))});
    CHECK(f.predict(std::vector<double>{0.0}, 0) == doctest::Approx(0.3));
    const auto g = forest_of(1, 1, {single_leaf(leaf({0.0}, {0}))}, {1.5}, {3});
    CHECK(g.predict(std::vector<double>{0.0}, 0) == doctest::Approx(0.5));
}

TEST_CASE("leaf estimates match a brute-force filter over the estimation sample") {
    Rng rng(7);
    const auto data = noisy_data(600, 3, 2, rng);
    ForestParams p;
    p.num_trees = 5;
    p.min_per_action = 3;
    p.subsample_exponent = 1.0;
    const auto f = train_forest(data, 2, p, {}, rng);
    std::uniform_real_distribution<double> u(0, 1);
    for (std::size_t b = 0; b < f.num_trees(); ++b) {
        const Tree& t = f.tree(b);
        for (int q = 0; q < 50; ++q) {
            const std::vector<double> x{u(rng), u(rng), u(rng)};
            const auto leaf_x = route(t, x);
            for (Action a = 0; a < 2; ++a) {
                double s = 0.0;
                int c = 0;
                for (auto i : t.estimation_sample)
                    if (data.a[i] == a && route(t, data.row(i)) == leaf_x) {
                        s += data.y[i];
                        ++c;
                    }
                const auto est = t.leaf_estimate(x, a);
                REQUIRE(est.has_value() == (c > 0));
                if (c > 0) CHECK(std::abs(*est - s / c) <= 1e-12);
            }
        }
    }
}

TEST_CASE("honest trees ignore estimation-sample outcomes") {
    Rng data_rng(3);
    auto data = noisy_data(800, 4, 2, data_rng);
    ForestParams p;
    p.num_trees = 1;
    p.min_per_action = 3;
    p.subsample_exponent = 1.0;
    Rng r1(99);
    const auto f = train_forest(data, 2, p, {}, r1);
    auto est = f.tree(0).estimation_sample;
    std::vector<double> ys;
    for (auto i : est) ys.push_back(data.y[i]);
    std::shuffle(ys.begin(), ys.end(), data_rng);
    for (std::size_t j = 0; j < est.size(); ++j) data.y[est[j]] = ys[j];
    Rng r2(99);
    const auto g = train_forest(data, 2, p, {}, r2);
    // structure only: compare split features and thresholds
    const auto& a = f.tree(0).nodes;
    const auto& b = g.tree(0).nodes;
    REQUIRE(a.size() == b.size());
    for (std::size_t n = 0; n < a.size(); ++n) {
        CHECK(a[n].feature == b[n].feature);
        CHECK(a[n].threshold == b[n].threshold);
    }
}

TEST_CASE("splits respect alpha and the per-action minimum") {
    Rng rng(17);
    for (double alpha : {0.1, 0.2, 0.35}) {
        const auto data = noisy_data(1000, 3, 3, rng);
        ForestParams p;
        p.num_trees = 4;
        p.alpha = alpha;
        p.min_per_action = 4;
        p.subsample_exponent = 1.0;
        const auto f = train_forest(data, 3, p, {}, rng);
        for (std::size_t b = 0; b < f.num_trees(); ++b)
            for (const auto& n : f.tree(b).nodes) {
                if (!n.is_leaf()) {
                    CHECK(std::min(n.left_placement, n.right_placement) >= alpha * n.placement_size);
                } else if (n.depth > 0 && !n.forced) {
                    for (auto c : n.count) CHECK(c >= 4u);
                }
            }
    }
}

TEST_CASE("constant outcomes predict the constant") {
    Rng rng(2);
    auto data = noisy_data(300, 2, 2, rng);
    for (auto& y : data.y) y = 0.37;
    ForestParams p;
    p.num_trees = 10;
    const auto f = train_forest(data, 2, p, {}, rng);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 20; ++i)
        for (Action a = 0; a < 2; ++a) CHECK(f.predict(std::vector<double>{u(rng), u(rng)}, a) == doctest::Approx(0.37));
}

TEST_CASE("schedule constants") {
    const auto c = schedule_constants(0.2, 10, 1.0);
    const double A = 0.1 * std::log(1.25) / std::log(5.0);
    CHECK(c.A == doctest::Approx(A).epsilon(1e-12));
    CHECK(std::abs(c.A - 0.0138646883853213899) <= 1e-12);
    CHECK(std::abs(c.beta - 0.986417781456214980) <= 1e-12);
    // two routes to the exponent
    CHECK(std::abs(c.exponent - A / (2.0 + 3.0 * A)) <= 1e-12);
    CHECK(std::abs(c.exponent - (1.0 - c.beta) / 2.0) <= 1e-12);
    CHECK(epsilon_schedule(1, 0.2, 10, 1.0) == 1.0);
    CHECK(std::abs(epsilon_schedule(1000, 0.2, 10, 1.0) - 0.954172008931681893) <= 1e-12);
    double prev = 1.0;
    for (std::uint64_t t = 2; t < 5000; t *= 3) {
        const double e = epsilon_schedule(t, 0.2, 10, 1.0);
        CHECK(e < prev);
        CHECK(e > 0.0);
        prev = e;
    }
}

TEST_CASE("parameter validation") {
    TrainingData data(1);
    data.push(std::vector<double>{0.0}, 0, 0.0);
    Rng rng(0);
    ForestParams p;
    p.alpha = 0.6;
    CHECK_THROWS_AS(train_forest(data, 1, p, {}, rng), ParameterError);
    p.alpha = 0.0;
    CHECK_THROWS_AS(train_forest(data, 1, p, {}, rng), ParameterError);
    p = {};
    p.min_per_action = 0;
    CHECK_THROWS_AS(train_forest(data, 1, p, {}, rng), ParameterError);
    CHECK_THROWS_AS(schedule_constants(0.2, 0, 1.0), ParameterError);
    CHECK_THROWS_AS(train_forest(TrainingData(1), 1, ForestParams{}, {}, rng), ContractError);
}

}
