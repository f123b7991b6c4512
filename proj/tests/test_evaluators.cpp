#include "warmbandit/environments.hpp"
#include "warmbandit/evaluators.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace warmbandit;
using namespace fixtures;

namespace {

struct PassThrough final : FeatureMap {
    explicit PassThrough(std::size_t d) : d_(d) {}
    std::size_t dim() const override { return d_; }
    Eigen::VectorXd operator()(const Context& x, Action) const override {
        return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(d_));
    }
    std::size_t d_;
};

LoggedRecord with_pvec(LoggedRecord r, std::vector<double> p) {
    r.propensity_vector = std::move(p);
    return r;
}

}  // namespace

TEST_SUITE("evaluators") {

TEST_CASE("null evaluator never answers") {
    NullEvaluator e;
    Rng rng(0);
    for (int i = 0; i < 5; ++i) CHECK_FALSE(e.get_outcome({0.5}, 0, rng).has_value());
}

TEST_CASE("exact matching two-step trace") {
    LoggedDataset d(1, 1);
    d.add(rec(0, 0, {1.0}, 0.7));
    ExactMatchingEvaluator em(d);
    Rng rng(0);
    CHECK(em.get_outcome({1.0}, 0, rng) == 0.7);
    CHECK(em.data().size() == 0);
    CHECK_FALSE(em.flags().stopped(0));
    CHECK_FALSE(em.get_outcome({1.0}, 0, rng).has_value());
    CHECK(em.flags().stopped(0));
}

TEST_CASE("exact matching stop flag is sticky") {
    LoggedDataset d(2, 1);
    d.add(rec(0, 1, {1.0}, 1.0));
    d.add(rec(1, 1, {0.0}, 0.0));
    ExactMatchingEvaluator em(d);
    Rng rng(0);
    CHECK_FALSE(em.get_outcome({2.0}, 1, rng).has_value());
    CHECK(em.flags().stopped(1));
    CHECK_FALSE(em.get_outcome({1.0}, 1, rng).has_value());
    CHECK(em.data().size() == 2);

    ExactMatchingEvaluator empty(LoggedDataset(2, 1));
    CHECK_FALSE(empty.get_outcome({0.0}, 0, rng).has_value());
    CHECK(empty.flags().stopped(0));
    CHECK_FALSE(empty.flags().stopped(1));
}

TEST_CASE("nearest pivot with lexicographic ties") {
    const std::vector<std::vector<double>> q{{0.25}, {0.75}};
    CHECK(psm_stratify(std::vector<double>{0.4}, q) == std::vector<double>{0.25});
    CHECK(psm_stratify(std::vector<double>{0.75}, q) == std::vector<double>{0.75});
    CHECK(psm_stratify(std::vector<double>{0.5}, q) == std::vector<double>{0.25});
    const auto pivots = PivotSet::explicit_list({{0.75}, {0.25}});
    CHECK(pivots.pivot(pivots.stratify(std::vector<double>{0.5})) == std::vector<double>{0.25});

    // grid agrees with the linear scan over its own points
    const auto grid = PivotSet::grid(2, 0.25);
    std::vector<std::vector<double>> pts;
    for (std::size_t i = 0; i < grid.size(); ++i) pts.push_back(grid.pivot(i));
    Rng rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 500; ++i) {
        const std::vector<double> p{u(rng), u(rng)};
        CHECK(grid.pivot(grid.stratify(p)) == psm_stratify(p, pts));
    }
    // exact midpoints tie to the smaller pivot
    CHECK(grid.pivot(grid.stratify(std::vector<double>{0.125, 0.625})) == std::vector<double>{0.0, 0.5});
}

TEST_CASE("PSM draws uniformly within a stratum") {
    Rng rng(5);
    std::map<double, int> hits;
    const int trials = 30000;
    for (int t = 0; t < trials; ++t) {
        LoggedDataset d(2, 1);
        for (RecordId id = 0; id < 3; ++id) d.add(with_pvec(rec(id, 1, {0.0}, 0.1 * (id + 1)), {0.5}));
        d.add(with_pvec(rec(3, 0, {0.0}, 0.9), {0.5}));
        PSMEvaluator psm(d, [](const Context&) { return std::vector<double>{0.5}; },
                         PivotSet::explicit_list({{0.5}}));
        hits[*psm.get_outcome({0.0}, 1, rng)]++;
    }
    REQUIRE(hits.size() == 3);
    for (const auto& [y, n] : hits) CHECK(std::abs(n / double(trials) - 1.0 / 3.0) <= 0.01);
}

TEST_CASE("PSM empty cell stops the action") {
    LoggedDataset d(2, 1);
    d.add(with_pvec(rec(0, 1, {0.0}, 1.0), {0.2}));
    PSMEvaluator psm(d, [](const Context& x) { return std::vector<double>{x[0]}; },
                     PivotSet::explicit_list({{0.2}, {0.8}}));
    Rng rng(0);
    CHECK_FALSE(psm.get_outcome({0.9}, 1, rng).has_value());
    CHECK(psm.flags().stopped(1));
    CHECK_FALSE(psm.get_outcome({0.2}, 1, rng).has_value());
}

TEST_CASE("PSM stratum identity") {
    // two contexts with known logging propensities and outcome means
    const double mu[2][2] = {{0.2, 0.6}, {0.7, 0.5}};
    const double p0[2] = {0.3, 0.7};
    const double truth[2] = {0.5 * (mu[0][0] + mu[1][0]), 0.5 * (mu[0][1] + mu[1][1])};
    Rng rng(8);
    std::bernoulli_distribution ctx(0.5);
    const int logs = 4000;
    for (Action a = 0; a < 2; ++a) {
        double s = 0.0, s2 = 0.0;
        int n = 0;
        for (int l = 0; l < logs; ++l) {
            LoggedDataset d(2, 1);
            for (RecordId id = 0; id < 100; ++id) {
                const int x = ctx(rng) ? 1 : 0;
                const Action act = std::bernoulli_distribution(p0[x])(rng) ? 0 : 1;
                const double y = std::bernoulli_distribution(mu[x][act])(rng) ? 1.0 : 0.0;
                d.add(with_pvec(rec(id, act, {double(x)}, y), {p0[x]}));
            }
            PSMEvaluator psm(d, [&](const Context& x) { return std::vector<double>{p0[int(x[0])]}; },
                             PivotSet::explicit_list({{0.3}, {0.7}}));
            // one draw per stratum, weighted equally
            const auto y0 = psm.get_outcome({0.0}, a, rng);
            const auto y1 = psm.get_outcome({1.0}, a, rng);
            if (!y0 || !y1) continue;
            const double v = 0.5 * (*y0 + *y1);
            s += v;
            s2 += v * v;
            ++n;
        }
        const double mean = s / n;
        const double se = std::sqrt((s2 / n - mean * mean) / n);
        CHECK(std::abs(mean - truth[a]) <= 3.0 * se);
    }
}

TEST_CASE("frequency propensities") {
    LoggedDataset d(3, 1);
    d.add(rec(0, 0, {1.0}, 0));
    d.add(rec(1, 1, {1.0}, 0));
    d.add(rec(2, 1, {1.0}, 0));
    d.add(rec(3, 2, {1.0}, 0));
    d.add(rec(4, 2, {2.0}, 0));
    const FrequencyPropensity f(d);
    CHECK(*f({1.0}) == std::vector<double>{0.25, 0.5});
    CHECK(*f({2.0}) == std::vector<double>{0.0, 0.0});
    CHECK_FALSE(f({3.0}).has_value());

    auto psm = PSMEvaluator::with_frequency_estimator(d, PivotSet::grid(2, 0.25));
    Rng rng(0);
    CHECK_FALSE(psm.get_outcome({3.0}, 0, rng).has_value());
    CHECK(psm.flags().stopped(0));
}

TEST_CASE("IPSW mean and budget") {
    LoggedDataset d(2, 1);
    d.add(rec(0, 0, {0.0}, 1.0, 0.5));
    d.add(rec(1, 0, {0.0}, 0.0, 0.25));
    IPSWEvaluator e(d);
    CHECK(*e.mean(0) == doctest::Approx(1.0 / 3.0));
    CHECK(e.initial_budget(0) == doctest::Approx(1.8));
    CHECK_FALSE(e.mean(1).has_value());
    CHECK(e.initial_budget(1) == 0.0);
    Rng rng(0);
    CHECK(e.get_outcome({0.0}, 0, rng).has_value());
    for (int i = 0; i < 5; ++i) CHECK_FALSE(e.get_outcome({0.0}, 0, rng).has_value());
    CHECK_FALSE(e.get_outcome({0.0}, 1, rng).has_value());
}

TEST_CASE("IPSW constant propensity budget equals the count") {
    LoggedDataset d(2, 1);
    for (RecordId id = 0; id < 10; ++id) d.add(rec(id, 1, {0.0}, 0.5, 0.2));
    IPSWEvaluator e(d);
    CHECK(e.initial_budget(1) == doctest::Approx(10.0));
    Rng rng(0);
    int emitted = 0;
    while (e.get_outcome({0.0}, 1, rng)) ++emitted;
    CHECK(emitted == 10);
}

TEST_CASE("IPSW effective sizes never exceed the record count") {
    Rng rng(6);
    std::uniform_real_distribution<double> p(0.01, 1.0);
    std::uniform_int_distribution<int> act(0, 3);
    for (int rep = 0; rep < 50; ++rep) {
        LoggedDataset d(4, 1);
        for (RecordId id = 0; id < 200; ++id) d.add(rec(id, act(rng), {0.0}, 0.0, p(rng)));
        IPSWEvaluator e(d);
        double total = 0.0;
        for (Action a = 0; a < 4; ++a) total += e.initial_budget(a);
        CHECK(total <= 200.0 + 1e-9);
    }
    LoggedDataset missing(2, 1);
    missing.add(rec(0, 0, {0.0}, 0.0));
    CHECK_THROWS_AS(IPSWEvaluator{missing}, DataError);
}

TEST_CASE("LR offline ridge fit") {
    auto features = std::make_shared<PassThrough>(2);
    auto online = std::make_shared<RidgeState>(2);
    LinearRegressionEvaluator empty(LoggedDataset(1, 2), features, online);
    CHECK(empty.v_hat() == Eigen::MatrixXd::Identity(2, 2));
    CHECK(empty.theta_hat() == Eigen::Vector2d::Zero());

    LoggedDataset d(1, 2, {0.0, 2.0});
    d.add(rec(0, 0, {1.0, 0.0}, 2.0));
    LinearRegressionEvaluator lr(d, features, online);
    Eigen::MatrixXd V(2, 2);
    V << 2, 0, 0, 1;
    CHECK(lr.v_hat() == V);
    CHECK((lr.theta_hat() - Eigen::Vector2d(1, 0)).norm() <= 1e-12);
}

TEST_CASE("LR noiseless fit agrees with a dense ridge solve") {
    const std::size_t dim = 4;
    auto features = std::make_shared<PassThrough>(dim);
    Rng rng(13);
    std::normal_distribution<double> g(0, 1);
    const Eigen::Vector4d theta(0.3, -0.2, 0.5, 0.1);
    LoggedDataset d(1, dim, {-100.0, 100.0});
    Eigen::MatrixXd X(60, dim);
    Eigen::VectorXd y(60);
    for (int i = 0; i < 60; ++i) {
        Context x(dim);
        for (std::size_t j = 0; j < dim; ++j) X(i, j) = x[j] = g(rng);
        y(i) = X.row(i).dot(theta);
        d.add(rec(i, 0, x, y(i)));
    }
    LinearRegressionEvaluator lr(d, features, std::make_shared<RidgeState>(dim));
    const Eigen::MatrixXd A = X.transpose() * X + Eigen::MatrixXd::Identity(dim, dim);
    const Eigen::VectorXd ridge = A.fullPivLu().solve(X.transpose() * y);
    CHECK((lr.theta_hat() - ridge).norm() <= 1e-9);
    // shrinkage: ||theta_hat - theta|| <= ||theta|| / lambda_min(A)
    const double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(A).eigenvalues().minCoeff();
    CHECK((lr.theta_hat() - theta).norm() <= theta.norm() / lmin + 1e-12);
}

TEST_CASE("LR emits while the offline width is narrower") {
    auto features = std::make_shared<PassThrough>(1);
    auto online = std::make_shared<RidgeState>(1);
    LoggedDataset d(1, 1);
    for (RecordId id = 0; id < 20; ++id) d.add(rec(id, 0, {1.0}, 0.4));
    LinearRegressionEvaluator lr(d, features, online);
    Rng rng(0);
    // scalar widths: online 1/(V+1), offline 1/21
    int emitted = 0;
    while (auto y = lr.get_outcome({1.0}, 0, rng)) {
        CHECK(*y == doctest::Approx(lr.theta_hat()(0)));
        ++emitted;
        REQUIRE(emitted < 100);
    }
    // emits while 1/(1+e+1) > 1/21, i.e. while e < 19
    CHECK(emitted == 19);
    CHECK(online->V(0, 0) == doctest::Approx(20.0));
    CHECK_FALSE(lr.get_outcome({0.0}, 0, rng).has_value());
}

TEST_CASE("LR stays silent once online V dominates") {
    auto features = std::make_shared<PassThrough>(2);
    auto online = std::make_shared<RidgeState>(2);
    online->V(0, 0) = 50.0;
    LoggedDataset d(1, 2);
    for (RecordId id = 0; id < 10; ++id) d.add(rec(id, 0, {1.0, 0.0}, 0.5));
    LinearRegressionEvaluator lr(d, features, online);
    Rng rng(0);
    CHECK_FALSE(lr.get_outcome({1.0, 0.0}, 0, rng).has_value());
    CHECK(online->V(0, 0) == 50.0);
}

TEST_CASE("matching on forest exhausts a single leaf") {
    LoggedDataset d(2, 1);
    d.add(rec(0, 0, {0.1}, 0.3));
    d.add(rec(1, 0, {0.9}, 0.6));
    MatchingOnForestEvaluator mof(d, forest_of(2, 1, {single_leaf(leaf({0, 0}, {0, 0}))}));
    Rng rng(0);
    CHECK(mof.leaf_members(0, {0.5}, 0).size() == 2);
    CHECK_FALSE(mof.get_outcome({0.5}, 1, rng).has_value());
    const auto a = mof.get_outcome({0.5}, 0, rng);
    const auto b = mof.get_outcome({0.5}, 0, rng);
    REQUIRE(a.has_value());
    REQUIRE(b.has_value());
    CHECK(*a + *b == doctest::Approx(0.9));
    CHECK_FALSE(mof.get_outcome({0.5}, 0, rng).has_value());
    CHECK(mof.leaf_members(0, {0.5}, 0).empty());
}

TEST_CASE("matching on forest weights records by the trees that match") {
    // query 0.2: trees 0 and 1 match record 0 (x=0.1), tree 2 matches record 1 (x=0.3)
    LoggedDataset d(1, 1);
    d.add(rec(0, 0, {0.1}, 0.0));
    d.add(rec(1, 0, {0.3}, 1.0));
    const auto forest = forest_of(1, 1,
                                  {stump(0.25, leaf({0}, {0}), leaf({0}, {0})), stump(0.25, leaf({0}, {0}), leaf({0}, {0})),
                                   stump(0.15, leaf({0}, {0}), leaf({0}, {0}))});
    Rng rng(7);
    int first = 0, second = 0;
    for (int t = 0; t < 100000; ++t) {
        MatchingOnForestEvaluator mof(d, forest);
        const auto y = mof.get_outcome({0.2}, 0, rng);
        REQUIRE(y.has_value());
        (*y == 0.0 ? first : second)++;
    }
    CHECK(first / double(second) == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("leaf members agree with a brute-force path scan") {
    Rng rng(9);
    std::uniform_real_distribution<double> u(0, 1);
    LoggedDataset d(2, 2);
    for (RecordId id = 0; id < 400; ++id) d.add(rec(id, id % 2, {u(rng), u(rng)}, u(rng)));
    ForestParams p;
    p.num_trees = 3;
    p.min_per_action = 3;
    MatchingOnForestEvaluator mof(d, p, rng);
    for (int q = 0; q < 30; ++q) {
        const Context x{u(rng), u(rng)};
        for (std::size_t b = 0; b < 3; ++b) {
            const Tree& t = mof.forest().tree(b);
            auto got = mof.leaf_members(b, x, 1);
            std::sort(got.begin(), got.end());
            std::vector<RecordId> expect;
            for (const auto id : mof.data().live_ids()) {
                const auto& r = mof.data().record(id);
                if (r.action == 1 && t.leaf_of(r.context) == t.leaf_of(x)) expect.push_back(id);
            }
            std::sort(expect.begin(), expect.end());
            CHECK(got == expect);
        }
        mof.get_outcome(x, 1, rng);
    }
}

TEST_CASE("historical average returns each record once") {
    LoggedDataset d(2, 1);
    d.add(rec(0, 1, {0.0}, 0.2));
    d.add(rec(1, 1, {5.0}, 0.4));
    d.add(rec(2, 1, {9.0}, 0.9));
    d.add(rec(3, 0, {0.0}, 0.1));
    HistoricalAverageEvaluator h(d);
    Rng rng(0);
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) sum += *h.get_outcome({7.0}, 1, rng);
    CHECK(sum == doctest::Approx(1.5));
    CHECK_FALSE(h.get_outcome({0.0}, 1, rng).has_value());
    CHECK(h.remaining(0) == 1);
}

TEST_CASE("historical warm start on the advertising log prefers the inferior placement") {
    Example1Log log;
    log.clicks = {{{16, 0}, {7, 5}}};
    HistoricalAverageEvaluator h(example1_logged_dataset(log));
    UCBOracle ucb(2);
    Rng rng(0);
    for (Action a = 0; a < 2; ++a)
        while (auto y = h.get_outcome({0.0}, a, rng)) ucb.update({0.0}, a, *y);
    CHECK(ucb.state().mean[0] == doctest::Approx(0.08));
    CHECK(ucb.state().mean[1] == doctest::Approx(0.06));
    CHECK(argmax_first(ucb.state().mean) == 0);
    Example1Env env;
    CHECK(*env.marginal_mean(0) < *env.marginal_mean(1));
}

}
