// Acceptance suite: one PASS/FAIL line per criterion.
#include "warmbandit/experiments.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

using namespace warmbandit;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream o;
    o << std::setprecision(digits) << std::fixed << v;
    return o.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

class Suite {
public:
    Suite(fs::path configs, std::size_t threads) : configs_(std::move(configs)), threads_(threads) {}

    ExperimentConfig config(const std::string& name) const {
        ExperimentConfig c = load_config((configs_ / (name + ".json")).string());
        c.output_dir.clear();
        c.threads = threads_;
        return c;
    }

    const ExperimentResult& result(const std::string& name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        return cache_.emplace(name, run_experiment(config(name))).first->second;
    }

    std::vector<std::string> config_names() const {
        std::vector<std::string> out;
        for (const auto& e : fs::directory_iterator(configs_))
            if (e.path().extension() == ".json") out.push_back(e.path().stem().string());
        std::sort(out.begin(), out.end());
        return out;
    }

    std::size_t threads() const { return threads_; }

private:
    fs::path configs_;
    std::size_t threads_;
    std::map<std::string, ExperimentResult> cache_;
};

// ---------------------------------------------------------------------------
// 1

std::vector<double> binomial_pmf(int n, double p) {
    std::vector<double> out(static_cast<std::size_t>(n) + 1);
    for (int k = 0; k <= n; ++k)
        out[static_cast<std::size_t>(k)] = std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) -
                                                    std::lgamma(n - k + 1.0) + k * std::log(p) +
                                                    (n - k) * std::log1p(-p));
    return out;
}

// Distribution of w1*X + w2*Y for independent X, Y.
std::vector<double> weighted_sum(const std::vector<double>& x, int w1, const std::vector<double>& y, int w2) {
    std::vector<double> out(w1 * (x.size() - 1) + w2 * (y.size() - 1) + 1, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j) out[w1 * i + w2 * j] += x[i] * y[j];
    return out;
}

// P(X >= Y) (or_equal) / P(X > Y).
double prob_greater(const std::vector<double>& x, const std::vector<double>& y, bool or_equal) {
    double p = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j)
            if (i > j || (or_equal && i == j)) p += x[i] * y[j];
    return p;
}

Verdict criterion1() {
    const auto c00 = binomial_pmf(150, 0.11), c01 = binomial_pmf(50, 0.01);
    const auto c10 = binomial_pmf(50, 0.14), c11 = binomial_pmf(150, 0.04);
    const double low = 10000 * 0.06, high = 10000 * 0.09;
    // pooled clicks, ties to action 1
    const double p_emp = prob_greater(weighted_sum(c10, 1, c11, 1), weighted_sum(c00, 1, c01, 1), true);
    // stratified: 3 c10 + c11 > c00 + 3 c01, ties to action 0
    const double p_causal = prob_greater(weighted_sum(c10, 3, c11, 1), weighted_sum(c00, 1, c01, 3), false);
    const double exact_emp = low + (high - low) * p_emp;
    const double exact_causal = low + (high - low) * p_causal;

    const auto t0 = std::chrono::steady_clock::now();
    const auto runs = example1_run({Example1Strategy::empirical_average, Example1Strategy::causal_inference,
                                    Example1Strategy::ab_test, Example1Strategy::ucb_em},
                                   100000, 20240601);
    const double elapsed = seconds_since(t0);
    const auto& emp = runs[0];
    const auto& causal = runs[1];
    const auto& ab = runs[2];
    const auto& ucb = runs[3];

    std::vector<std::string> fails;
    if (std::abs(emp.mean - exact_emp) > 3 * emp.standard_error) fails.push_back("empirical MC vs exact");
    if (std::abs(causal.mean - exact_causal) > 3 * causal.standard_error) fails.push_back("causal MC vs exact");
    if (std::abs(emp.mean - 674.4) > 3) fails.push_back("empirical vs 674.4");
    if (std::abs(causal.mean - 847.7) > 3) fails.push_back("causal vs 847.7");
    if (std::abs(ab.mean - 839.9) > 5) fails.push_back("A/B vs 839.9");
    if (ucb.mean < 880) fails.push_back("UCB+EM below 880");
    if (!(ucb.mean > emp.mean && ucb.mean > causal.mean && ucb.mean > ab.mean)) fails.push_back("UCB+EM not highest");
    if (elapsed > 120) fails.push_back("runtime over 120 s");

    std::ostringstream d;
    d << "exact empirical " << fmt(exact_emp, 2) << " causal " << fmt(exact_causal, 2) << "; MC empirical "
      << fmt(emp.mean, 2) << "+-" << fmt(emp.standard_error, 2) << " causal " << fmt(causal.mean, 2) << "+-"
      << fmt(causal.standard_error, 2) << " A/B " << fmt(ab.mean, 2) << "+-" << fmt(ab.standard_error, 2)
      << " UCB+EM " << fmt(ucb.mean, 2) << "+-" << fmt(ucb.standard_error, 2) << "; " << fmt(elapsed, 1) << " s";
    for (const auto& f : fails) d << "; " << f;
    return {fails.empty(), d.str()};
}

// ---------------------------------------------------------------------------
// 2, 3

struct Comparison {
    double offline = 0.0;
    double online = 0.0;
    double se = 0.0;  // of the difference
};

Comparison compare(const ExperimentResult& r) {
    const auto& a = r.variant(Variant::offline_online).final;
    const auto& b = r.variant(Variant::only_online).final;
    return {a.mean, b.mean, std::hypot(a.standard_error, b.standard_error)};
}

Verdict criterion2(Suite& s) {
    struct Case {
        const char* config;
        bool strict;
    };
    const Case cases[] = {{"exp1_ucb_em", false}, {"exp2_ucb_psm_k2", false}, {"exp2_ucb_ipsw_k3", true},
                          {"exp2_linucb_lr", true}};
    bool pass = true;
    std::ostringstream d;
    for (const auto& c : cases) {
        const auto cmp = compare(s.result(c.config));
        const double diff = cmp.online - cmp.offline;
        const bool ok = diff >= 0 && (!c.strict || diff > 2 * cmp.se);
        pass = pass && ok;
        d << c.config << " " << fmt(cmp.offline, 2) << " vs " << fmt(cmp.online, 2) << " (diff " << fmt(diff, 2)
          << ", " << fmt(cmp.se > 0 ? diff / cmp.se : 0.0, 1) << " SE)" << (ok ? "" : " FAIL") << "; ";
    }
    return {pass, d.str()};
}

Verdict criterion3(Suite& s) {
    const auto cmp = compare(s.result("exp3_ucb_psm_k4"));
    const double diff = cmp.offline - cmp.online;
    const bool pass = diff >= 0 || std::abs(diff) < 3 * cmp.se;
    return {pass, "K=4 offline+online " + fmt(cmp.offline, 2) + " vs only_online " + fmt(cmp.online, 2) + " (diff " +
                      fmt(diff, 2) + ", " + fmt(cmp.se > 0 ? std::abs(diff) / cmp.se : 0.0, 2) + " SE)"};
}

// ---------------------------------------------------------------------------
// 4

double bernoulli(double p, Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p ? 1.0 : 0.0; }

Verdict criterion4() {
    std::vector<std::string> fails;
    std::ostringstream d;

    // IPSW on the default synthetic environment.
    {
        SyntheticParams p;
        Rng theta_rng = make_stream(2024, stream::environment_params);
        const SyntheticEnv env(p, theta_rng);
        const std::size_t logs = 10000;
        const std::size_t k = env.num_actions();
        std::vector<std::vector<double>> est(k), unnormalised(k);
        for (std::size_t l = 0; l < logs; ++l) {
            Rng rng = make_stream(mix_seed(77, l), stream::logged_data);
            const LoggedDataset data = gen_logged_data(env, 100, rng);
            const IPSWEvaluator ipsw(data);
            std::vector<double> ht(k, 0.0);
            for (std::size_t i = 0; i < data.total_size(); ++i)
                ht[data.at_slot(i).action] += data.at_slot(i).outcome / *data.at_slot(i).propensity_chosen / 100.0;
            for (Action a = 0; a < k; ++a) {
                if (auto m = ipsw.mean(a)) est[a].push_back(*m);
                unnormalised[a].push_back(ht[a]);
            }
        }
        d << "IPSW";
        for (Action a = 0; a < k; ++a) {
            const auto ms = mean_se(est[a]);
            const auto& truth = env.marginal_estimate(a);
            const double tol = 3 * std::hypot(ms.standard_error, truth.standard_error);
            const bool ok = std::abs(ms.mean - truth.value) <= tol;
            if (!ok) fails.push_back("IPSW action " + std::to_string(a));
            d << " a" << a << " " << fmt(ms.mean) << " vs " << fmt(truth.value) << " (" << fmt(ms.mean - truth.value)
              << ", tol " << fmt(tol) << "; unnormalised " << fmt(mean_se(unnormalised[a]).mean) << ")";
        }
    }

    // PSM on a two-context fixture whose propensities sit on the pivots.
    {
        const double mu[2][2] = {{0.2, 0.6}, {0.7, 0.5}};  // mu[x][a]
        const double p0[2] = {0.3, 0.7};                    // p(a=0 | x)
        const double truth[2] = {0.5 * (mu[0][0] + mu[1][0]), 0.5 * (mu[0][1] + mu[1][1])};
        const PropensityModel model = [&](const Context& x) { return std::vector<double>{p0[x[0] > 0.5 ? 1 : 0]}; };
        std::vector<std::vector<double>> est(2);
        for (std::size_t l = 0; l < 10000; ++l) {
            Rng rng = make_stream(mix_seed(78, l), stream::logged_data);
            LoggedDataset data(2, 1);
            for (RecordId i = 0; i < 200; ++i) {
                const int x = bernoulli(0.5, rng) > 0 ? 1 : 0;
                const Action a = bernoulli(p0[x], rng) > 0 ? 0 : 1;
                LoggedRecord r;
                r.id = i;
                r.action = a;
                r.context = {static_cast<double>(x)};
                r.outcome = bernoulli(mu[x][a], rng);
                r.propensity_vector = std::vector<double>{p0[x]};
                r.propensity_chosen = a == 0 ? p0[x] : 1 - p0[x];
                data.add(std::move(r));
            }
            const PSMEvaluator psm(data, model, PivotSet::explicit_list({{0.3}, {0.7}}));
            double sum[2][2] = {}, cnt[2][2] = {};
            for (std::size_t slot = 0; slot < data.total_size(); ++slot) {
                const auto& r = data.at_slot(slot);
                sum[psm.stratum_of_slot(slot)][r.action] += r.outcome;
                cnt[psm.stratum_of_slot(slot)][r.action] += 1;
            }
            for (Action a = 0; a < 2; ++a)
                if (cnt[0][a] > 0 && cnt[1][a] > 0) est[a].push_back(0.5 * sum[0][a] / cnt[0][a] + 0.5 * sum[1][a] / cnt[1][a]);
        }
        d << "; PSM";
        for (Action a = 0; a < 2; ++a) {
            const auto ms = mean_se(est[a]);
            const bool ok = std::abs(ms.mean - truth[a]) <= 3 * ms.standard_error;
            if (!ok) fails.push_back("PSM action " + std::to_string(a));
            d << " a" << a << " " << fmt(ms.mean) << " vs " << fmt(truth[a]) << " (" << fmt(ms.mean - truth[a])
              << ", tol " << fmt(3 * ms.standard_error) << ")";
        }
    }

    // ESS under a constant propensity.
    {
        Rng rng(5);
        LoggedDataset data(4, 2);
        std::vector<double> count(4, 0.0);
        for (RecordId i = 0; i < 1000; ++i) {
            LoggedRecord r;
            r.id = i;
            r.action = std::uniform_int_distribution<std::size_t>(0, 3)(rng);
            r.context = {std::uniform_real_distribution<double>(0, 1)(rng), 0.5};
            r.outcome = bernoulli(0.3, rng);
            r.propensity_chosen = 0.25;
            count[r.action] += 1;
            data.add(std::move(r));
        }
        const IPSWEvaluator ipsw(data);
        bool exact = true;
        for (Action a = 0; a < 4; ++a) exact = exact && ipsw.initial_budget(a) == count[a];
        if (!exact) fails.push_back("ESS");
        d << "; ESS equals counts: " << (exact ? "yes" : "no");
    }
    for (const auto& f : fails) d << "; " << f << " outside tolerance";
    return {fails.empty(), d.str()};
}

// ---------------------------------------------------------------------------
// 5

namespace second {

double em(const MatchingBoundInputs& in, bool psm) {
    const std::size_t K = in.gaps.size(), C = in.cell_probability.size();
    const double pi2_3 = M_PI * M_PI / 3;
    auto scaled_min = [&](std::size_t c, std::size_t a) {
        std::vector<double> v;
        for (std::size_t j = 0; j < C; ++j) v.push_back(in.cell_counts[j][a] * in.cell_probability[c] / in.cell_probability[j]);
        return *std::min_element(v.begin(), v.end());
    };
    double N = 0;
    for (std::size_t c = 0; c < C; ++c) N = std::accumulate(in.cell_counts[c].begin(), in.cell_counts[c].end(), N);
    double A = N;
    for (std::size_t a = 0; a < K; ++a) {
        if (in.gaps[a] == 0) continue;
        for (std::size_t c = 0; c < C; ++c) {
            const double n = psm ? scaled_min(c, a) : in.cell_counts[c][a];
            A -= std::max(0.0, n - (8 * std::log(in.T + N) / std::pow(in.gaps[a], 2) + 1 + pi2_3) * in.cell_probability[c]);
        }
    }
    double R = 0;
    for (std::size_t a = 0; a < K; ++a) {
        const double D = in.gaps[a];
        if (D == 0) continue;
        double s = 1 + pi2_3;
        for (std::size_t c = 0; c < C; ++c)
            s += std::max(0.0, 8 * std::log(in.T + A) / (D * D) * in.cell_probability[c] - scaled_min(c, a));
        R += D * s;
    }
    return R;
}

double ipsw(const IPSWBoundInputs& in) {
    double ceil_sum = 0;
    for (double n : in.effective_counts) ceil_sum += std::ceil(n);
    double R = 0;
    for (std::size_t a = 0; a < in.gaps.size(); ++a) {
        const double D = in.gaps[a];
        if (D == 0) continue;
        R += D * (1 + M_PI * M_PI / 3 + std::max(0.0, 8 / (D * D) * std::log(in.T + ceil_sum) - std::floor(in.effective_counts[a])));
    }
    return R;
}

double biased(const BiasedBoundInputs& in) {
    std::size_t star = 0;
    while (in.gaps[star] != 0) ++star;
    double R = 0;
    for (std::size_t a = 0; a < in.gaps.size(); ++a) {
        const double D = in.gaps[a];
        if (D == 0) continue;
        const double Na = in.counts[a];
        R += D * (16 / (D * D) * std::log(Na + in.T) - 2 * Na * (1 - std::max(0.0, in.bias[a] - in.bias[star]) / D) +
                  (1 + M_PI * M_PI / 3));
    }
    return R;
}

double lin_dependent(const LinearBoundInputs& in) {
    const double kappa = in.T * in.L * in.L / std::max(1.0, in.lambda_min);
    return 8 * std::pow(in.feature_dim, 2) * (1 + 2 * std::log(static_cast<double>(in.T))) / in.delta_min *
               std::log(1 + kappa) +
           1;
}

double lin_independent(const LinearBoundInputs& in) {
    const double NT = static_cast<double>(in.N + in.T);
    const double b = in.beta_T;
    const double first = std::sqrt(8 * NT * b * std::log((in.trace_v0 + NT * in.L * in.L) / in.det_v0));
    const double second = std::sqrt(8 * b) * std::min(1.0, in.min_feature_norm) * 2 / (in.L * in.L) *
                          (std::sqrt(1 + in.N * in.L * in.L) - 1);
    return first - second;
}

}  // namespace second

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

std::vector<double> random_gaps(std::size_t k, Rng& rng) {
    std::uniform_real_distribution<double> u(0.02, 0.9);
    std::vector<double> g(k);
    for (auto& v : g) v = u(rng);
    g[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)] = 0.0;
    return g;
}

double transcription_error() {
    Rng rng(9001);
    std::uniform_int_distribution<int> small(2, 6), count(0, 80);
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<std::uint64_t> horizon(1, 100000);
    double worst = 0;
    for (int rep = 0; rep < 500; ++rep) {
        const std::size_t K = static_cast<std::size_t>(small(rng)), C = static_cast<std::size_t>(small(rng));
        MatchingBoundInputs m;
        m.T = horizon(rng);
        m.gaps = random_gaps(K, rng);
        double tot = 0;
        for (std::size_t c = 0; c < C; ++c) {
            m.cell_probability.push_back(0.05 + u(rng));
            tot += m.cell_probability.back();
            std::vector<double> row;
            for (std::size_t a = 0; a < K; ++a) row.push_back(count(rng));
            m.cell_counts.push_back(row);
        }
        for (auto& p : m.cell_probability) p /= tot;
        worst = std::max(worst, rel_err(bound_ucb_em(m), second::em(m, false)));
        worst = std::max(worst, rel_err(bound_ucb_psm(m), second::em(m, true)));

        IPSWBoundInputs ip;
        ip.T = m.T;
        ip.gaps = m.gaps;
        for (std::size_t a = 0; a < K; ++a) ip.effective_counts.push_back(200 * u(rng));
        worst = std::max(worst, rel_err(bound_ucb_ipsw(ip), second::ipsw(ip)));

        BiasedBoundInputs bi;
        bi.T = m.T;
        bi.gaps = m.gaps;
        for (std::size_t a = 0; a < K; ++a) {
            bi.counts.push_back(count(rng));
            bi.bias.push_back(u(rng) - 0.5);
        }
        worst = std::max(worst, rel_err(bound_biased(bi).value, second::biased(bi)));

        LinearBoundInputs li;
        li.T = m.T;
        li.N = static_cast<std::uint64_t>(count(rng));
        li.feature_dim = small(rng) * 3;
        li.L = 0.5 + 3 * u(rng);
        li.delta_min = 0.01 + u(rng);
        li.lambda_min = 1 + 500 * u(rng);
        li.min_feature_norm = 2 * u(rng);
        worst = std::max(worst, rel_err(bound_linucb(li, LinearBoundMode::problem_dependent), second::lin_dependent(li)));
        LinearBoundInputs expl = li;
        expl.beta_T = 2 * li.feature_dim * (1 + 2 * std::log(static_cast<double>(li.T)));
        expl.trace_v0 = li.feature_dim;
        worst = std::max(worst, rel_err(bound_linucb(li, LinearBoundMode::problem_independent), second::lin_independent(expl)));
        expl.beta_T *= 1 + u(rng);
        expl.trace_v0 = li.feature_dim * (1 + u(rng));
        expl.det_v0 = 1 + u(rng);
        worst = std::max(worst, rel_err(bound_linucb(expl, LinearBoundMode::problem_independent), second::lin_independent(expl)));
    }
    return worst;
}

Verdict criterion5(Suite& s) {
    std::size_t checks = 0, failed = 0;
    std::map<std::string, std::size_t> by_theorem;
    double worst_ratio = 0;
    std::ostringstream fails;
    for (const auto& name : s.config_names()) {
        const auto c = s.config(name);
        if (c.environment.kind != EnvironmentKind::synthetic) continue;
        for (const auto& v : s.result(name).variants)
            for (const auto& b : v.bounds) {
                if (b.checkpoint != 100 && b.checkpoint != 1000) continue;
                ++checks;
                ++by_theorem[b.theorem];
                if (b.mean_bound > 0) worst_ratio = std::max(worst_ratio, b.regret.mean / b.mean_bound);
                if (!b.holds) {
                    ++failed;
                    fails << "; " << name << "/" << to_string(v.variant) << " " << b.theorem << "@" << b.checkpoint;
                }
            }
    }
    const double err = transcription_error();
    std::ostringstream d;
    d << checks << " bound checks (";
    bool first = true;
    for (const auto& [t, n] : by_theorem) {
        d << (first ? "" : ", ") << t << " " << n;
        first = false;
    }
    d << "), " << failed << " violated, largest regret/bound " << fmt(worst_ratio) << "; transcription max rel err "
      << std::scientific << std::setprecision(2) << err << fails.str();
    return {checks > 0 && failed == 0 && err <= 1e-9, d.str()};
}

// ---------------------------------------------------------------------------
// 6

TrainingData random_training(std::size_t n, std::size_t d, std::size_t k, Rng& rng) {
    TrainingData data(d);
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<std::size_t> pick(0, k - 1);
    std::vector<double> x(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : x) v = u(rng);
        const Action a = pick(rng);
        const double mean = (x[0] > 0.5 ? 0.6 : 0.2) + 0.1 * static_cast<double>(a) * (x[1 % d] > 0.3);
        data.push(x, a, bernoulli(std::min(mean, 1.0), rng));
    }
    return data;
}

std::uint32_t route(const Tree& t, std::span<const double> x) {
    std::uint32_t node = 0;
    while (t.nodes[node].feature >= 0)
        node = x[static_cast<std::size_t>(t.nodes[node].feature)] <= t.nodes[node].threshold ? t.nodes[node].left
                                                                                             : t.nodes[node].right;
    return node;
}

Verdict criterion6(Suite& s) {
    std::vector<std::string> fails;
    std::ostringstream d;

    // honesty: permuting estimation-sample rewards leaves the structure digest unchanged
    {
        std::size_t same = 0, placement_changed = 0;
        for (int rep = 0; rep < 20; ++rep) {
            Rng gen(1000 + rep);
            TrainingData data = random_training(800, 4, 2, gen);
            ForestParams p;
            p.num_trees = 1;
            p.subsample_exponent = 1.0;
            p.min_per_action = 3;
            Rng r1(42 + rep);
            const auto f1 = train_forest(data, 2, p, {}, r1);
            const auto& est = f1.tree(0).estimation_sample;
            TrainingData permuted = data;
            std::vector<double> ys;
            for (auto i : est) ys.push_back(data.y[i]);
            std::shuffle(ys.begin(), ys.end(), gen);
            for (std::size_t q = 0; q < est.size(); ++q) permuted.y[est[q]] = ys[q];
            Rng r2(42 + rep);
            const auto f2 = train_forest(permuted, 2, p, {}, r2);
            same += f1.tree(0).dump() == f2.tree(0).dump();
            // the same shuffle on the placement half should usually move splits
            TrainingData moved = data;
            const auto& place = f1.tree(0).placement_sample;
            std::vector<double> yp;
            for (auto i : place) yp.push_back(data.y[i]);
            std::shuffle(yp.begin(), yp.end(), gen);
            for (std::size_t q = 0; q < place.size(); ++q) moved.y[place[q]] = yp[q];
            Rng r3(42 + rep);
            placement_changed += train_forest(moved, 2, p, {}, r3).tree(0).dump() != f1.tree(0).dump();
        }
        if (same != 20) fails.push_back("honesty");
        d << "honesty " << same << "/20 identical (placement shuffle changed " << placement_changed << "/20)";
    }

    // alpha-regularity and per-action minimum on 100 random trainings
    {
        std::size_t bad = 0, splits = 0, leaves = 0;
        Rng gen(2000);
        for (int rep = 0; rep < 100; ++rep) {
            const std::size_t k = 2 + rep % 3, dim = 2 + rep % 5;
            const TrainingData data = random_training(300 + 10 * static_cast<std::size_t>(rep), dim, k, gen);
            ForestParams p;
            p.num_trees = 3;
            p.alpha = 0.05 + 0.05 * (rep % 5);
            p.min_per_action = 1 + static_cast<std::size_t>(rep % 4);
            p.subsample_exponent = 0.95;
            p.honest = rep % 4 != 0;
            const auto forest = train_forest(data, k, p, {}, gen);
            for (std::size_t b = 0; b < forest.num_trees(); ++b) {
                const auto& t = forest.tree(b);
                for (std::size_t i = 0; i < t.nodes.size(); ++i) {
                    const auto& n = t.nodes[i];
                    if (!n.is_leaf()) {
                        ++splits;
                        if (std::min(n.left_placement, n.right_placement) < p.alpha * n.placement_size) ++bad;
                    } else if (i != 0) {
                        ++leaves;
                        for (auto c : n.count)
                            if (c < p.min_per_action) {
                                ++bad;
                                break;
                            }
                    }
                }
            }
        }
        if (bad) fails.push_back("regularity");
        d << "; regularity " << splits << " splits, " << leaves << " non-root leaves, " << bad << " violations";
    }

    // leaf_estimate against brute force
    {
        double worst = 0;
        std::size_t queries = 0;
        Rng gen(3000);
        std::uniform_real_distribution<double> u(0, 1);
        for (int rep = 0; rep < 20; ++rep) {
            const TrainingData data = random_training(1000, 3, 3, gen);
            ForestParams p;
            p.num_trees = 2;
            p.min_per_action = 2;
            p.subsample_exponent = 0.9;
            const auto forest = train_forest(data, 3, p, {}, gen);
            for (std::size_t b = 0; b < forest.num_trees(); ++b) {
                const auto& t = forest.tree(b);
                for (int q = 0; q < 50; ++q) {
                    const std::vector<double> x{u(gen), u(gen), u(gen)};
                    const auto leaf = route(t, x);
                    for (Action a = 0; a < 3; ++a) {
                        double sum = 0, cnt = 0;
                        for (auto i : t.estimation_sample)
                            if (data.a[i] == a && route(t, data.row(i)) == leaf) {
                                sum += data.y[i];
                                cnt += 1;
                            }
                        const auto got = t.leaf_estimate(x, a);
                        ++queries;
                        if (cnt == 0) {
                            if (got) worst = std::max(worst, 1.0);
                        } else if (!got) {
                            worst = std::max(worst, 1.0);
                        } else {
                            worst = std::max(worst, std::abs(*got - sum / cnt));
                        }
                    }
                }
            }
        }
        if (worst > 1e-12) fails.push_back("leaf_estimate");
        d << "; leaf_estimate " << queries << " queries, max err " << std::scientific << std::setprecision(1) << worst
          << std::defaultfloat;
    }

    // schedule constants against high-precision values
    {
        const auto fc = forest_constants(0.2, 10, 1.0);
        const double A = 0.01386468838532138986597868624720687358604;
        const double beta = 0.9864177814562149795946442205947506900499;
        const double expo = 0.006791109271892510202677889702624654975045;
        const double regret = 0.993208890728107489797322110297375345025;
        const double err = std::max({std::abs(fc.schedule.A - A), std::abs(fc.schedule.beta - beta),
                                     std::abs(fc.schedule.exponent - expo), std::abs(fc.regret_exponent - regret)});
        if (err > 1e-9) fails.push_back("schedule constants");
        d << "; constants beta " << std::setprecision(10) << fc.schedule.beta << " err " << std::scientific
          << std::setprecision(1) << err << std::defaultfloat;
    }

    // indicator reward at T=2000
    {
        const double fst = s.result("exp7_fst_mof").variant(Variant::offline_online).final.mean;
        const double lin = s.result("exp7_linucb_lr").variant(Variant::offline_online).final.mean;
        if (!(fst <= 0.5 * lin)) fails.push_back("Fst+MoF vs LinUCB+LR");
        auto tuned = s.config("exp7_linucb_lr");
        tuned.oracle.linucb_beta = 0.5;
        const double lin_tuned = run_experiment(tuned).variant(Variant::offline_online).final.mean;
        d << "; Fst+MoF " << fmt(fst, 2) << " vs LinUCB+LR " << fmt(lin, 2) << " (ratio " << fmt(fst / lin, 3)
          << "; LinUCB beta=0.5 gives " << fmt(lin_tuned, 2) << ")";
    }
    for (const auto& f : fails) d << "; " << f << " failed";
    return {fails.empty(), d.str()};
}

// ---------------------------------------------------------------------------
// 7

double r_squared(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy * sxy / (sxx * syy);
}

Verdict criterion7(Suite& s) {
    auto batch = s.config("exp9_default_batch");
    auto inter = batch;
    inter.mode = RunMode::interleaved;
    const auto rb = run_experiment(batch).variant(Variant::offline_online).final;
    const auto ri = run_experiment(inter).variant(Variant::offline_online).final;
    const double rel = std::abs(rb.mean - ri.mean) / ri.mean;

    const std::vector<double> horizons{250, 500, 1000, 2000, 4000};
    double r2[2];
    std::ostringstream timing;
    for (int m = 0; m < 2; ++m) {
        std::vector<double> secs;
        auto c = m == 0 ? inter : batch;
        c.bound_checkpoints.clear();
        const auto setup = make_setup(c);
        for (double T : horizons) {
            c.T = static_cast<std::size_t>(T);
            double best = 1e300;
            for (int k = 0; k < 3; ++k) {
                const auto t0 = std::chrono::steady_clock::now();
                for (std::size_t r = 0; r < c.replications; ++r) run_replication(c, setup, Variant::offline_online, r);
                best = std::min(best, seconds_since(t0));
            }
            secs.push_back(best);
        }
        r2[m] = r_squared(horizons, secs);
        timing << (m == 0 ? " interleaved" : " batch") << " " << fmt(secs.front(), 3) << ".." << fmt(secs.back(), 3)
               << " s R2 " << fmt(r2[m]);
    }
    const bool pass = rel <= 0.10 && r2[0] >= 0.99 && r2[1] >= 0.99;
    return {pass, "batch " + fmt(rb.mean, 3) + "+-" + fmt(rb.standard_error, 3) + " interleaved " + fmt(ri.mean, 3) +
                      "+-" + fmt(ri.standard_error, 3) + " (rel diff " + fmt(100 * rel, 2) + "%);" + timing.str()};
}

// ---------------------------------------------------------------------------
// 8

Verdict criterion8(Suite& s) {
    bool pass = true;
    std::ostringstream d;
    for (const char* name : {"exp8_ucb_psm_pool", "exp8_ucb_em_pool"}) {
        for (std::size_t n : {10, 50, 100}) {
            auto pool = s.config(name);
            pool.logged_size = n;
            pool.bound_checkpoints.clear();
            pool.contexts = ContextMode::empirical;
            auto truth = pool;
            truth.contexts = ContextMode::true_sampler;
            const auto a = run_experiment(pool).variant(Variant::offline_online);
            const auto b = run_experiment(truth).variant(Variant::offline_online);
            std::vector<double> diff(a.final_regret.size());
            for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = a.final_regret[i] - b.final_regret[i];
            // replications share seeds, so the paired difference carries the standard error
            const auto ms = mean_se(diff);
            const bool ok = std::abs(ms.mean) <= 3 * ms.standard_error;
            pass = pass && ok;
            d << name << " N=" << n << " " << fmt(a.final.mean, 2) << " vs " << fmt(b.final.mean, 2) << " ("
              << fmt(ms.standard_error > 0 ? ms.mean / ms.standard_error : 0.0, 2) << " SE)" << (ok ? "" : " FAIL")
              << "; ";
        }
    }
    return {pass, d.str()};
}

// ---------------------------------------------------------------------------
// 9

struct Case9 {
    OracleKind oracle;
    EvaluatorKind evaluator;
    RewardFamily family;
    ContextKind contexts;
};

ExperimentConfig case_config(const Case9& k, std::uint64_t seed, std::size_t T) {
    ExperimentConfig c;
    c.environment.synthetic.num_actions = 2 + seed % 2;
    c.environment.synthetic.dim = 3;
    c.environment.synthetic.family = k.family;
    c.environment.synthetic.contexts = k.contexts;
    c.environment.synthetic.qmc_points = 1 << 10;
    c.environment.synthetic.qmc_shifts = 2;
    c.environment.theta_seed = seed;
    c.logged_size = 60;
    c.oracle.kind = k.oracle;
    c.oracle.forest.num_trees = 4;
    c.oracle.retrain_every = 25;
    c.evaluator.kind = k.evaluator;
    c.evaluator.forest.num_trees = 4;
    c.T = T;
    c.seed = seed;
    c.variants = {Variant::offline_online};
    return c;
}

struct Run9 {
    RunTrace trace;
    std::unique_ptr<BanditOracle> oracle;
};

Run9 run_case(const ExperimentConfig& c, const ExperimentSetup& s, std::uint64_t rep_seed, bool batch) {
    const LoggedDataset logged = make_logged(c, s, rep_seed);
    Components parts = make_components(c, s, Variant::offline_online, logged, rep_seed);
    RunStreams streams = RunStreams::from_seed(rep_seed);
    ContextGenerator contexts = ContextGenerator::true_sampler(s.env);
    RunOptions o;
    Runner runner(*parts.oracle, *parts.evaluator, contexts, *s.env, streams, o);
    Run9 out;
    out.trace = batch ? runner.run_batch(c.T) : runner.run(c.T);
    out.oracle = std::move(parts.oracle);
    return out;
}

// Feeds the trace into a fresh oracle. With the linear-regression evaluator the
// shared V also took phi phi' when each virtual outcome was emitted.
std::string replay_digest(const ExperimentConfig& c, const ExperimentSetup& s, std::uint64_t rep_seed, const RunTrace& t) {
    const LoggedDataset logged = make_logged(c, s, rep_seed);
    Components fresh = make_components(c, s, Variant::only_online, logged, rep_seed);
    auto* lin = dynamic_cast<LinUCBOracle*>(fresh.oracle.get());
    const bool shared_v = lin && c.evaluator.kind == EvaluatorKind::lr;
    std::size_t v = 0;
    for (const auto& r : t.rounds) {
        while (v < t.virtual_plays.size() && t.virtual_plays[v].round <= r.t) {
            const auto& p = t.virtual_plays[v++];
            if (shared_v) lin->ridge()->add_outer(lin->features()(p.context, p.action));
            fresh.oracle->update(p.context, p.action, p.outcome);
        }
        fresh.oracle->update(r.context, r.action, r.reward);
    }
    return fresh.oracle->digest();
}

Verdict criterion9() {
    const std::vector<Case9> cases{
        {OracleKind::ucb, EvaluatorKind::em, RewardFamily::binary, ContextKind::binary},
        {OracleKind::ucb, EvaluatorKind::psm, RewardFamily::binary, ContextKind::continuous},
        {OracleKind::ucb, EvaluatorKind::ipsw, RewardFamily::linear, ContextKind::continuous},
        {OracleKind::ab, EvaluatorKind::historical, RewardFamily::sigmoid, ContextKind::continuous},
        {OracleKind::ts_gauss, EvaluatorKind::ipsw, RewardFamily::linear, ContextKind::binary},
        {OracleKind::ts_bern, EvaluatorKind::em, RewardFamily::binary, ContextKind::binary},
        {OracleKind::linucb, EvaluatorKind::lr, RewardFamily::linear, ContextKind::continuous},
        {OracleKind::linucb, EvaluatorKind::historical, RewardFamily::linear, ContextKind::binary},
        {OracleKind::fst, EvaluatorKind::mof, RewardFamily::indicator, ContextKind::continuous},
        {OracleKind::ucb, EvaluatorKind::mof, RewardFamily::binary, ContextKind::continuous},
    };
    std::size_t replayed = 0, replay_ok = 0, traces = 0, decomposition_ok = 0;
    double worst = 0;
    auto check_decomposition = [&](const RunTrace& t) {
        // chronological total over virtual and online plays
        double total = 0, online = 0;
        std::size_t v = 0;
        for (const auto& r : t.rounds) {
            while (v < t.virtual_plays.size() && t.virtual_plays[v].round <= r.t) total += *t.virtual_plays[v++].regret;
            total += *r.regret;
            online += *r.regret;
        }
        const double err = std::max(std::abs(total - (t.virtual_regret() + t.online_regret())),
                                    std::abs(online - *t.rounds.back().cumulative_regret));
        const double scale = std::max(1.0, std::abs(total));
        worst = std::max(worst, err / scale);
        ++traces;
        decomposition_ok += err <= 1e-12 * scale;
    };
    for (std::size_t i = 0; i < 100; ++i) {
        const auto& k = cases[i % cases.size()];
        const std::uint64_t seed = 500 + i;
        const auto c = case_config(k, seed, k.oracle == OracleKind::fst ? 120 : 200);
        const auto s = make_setup(c);
        const std::uint64_t rep_seed = mix_seed(seed, i);
        const bool batch = i % 7 == 3 && k.evaluator != EvaluatorKind::lr;
        const Run9 run = run_case(c, s, rep_seed, batch);
        check_decomposition(run.trace);
        ++replayed;
        replay_ok += replay_digest(c, s, rep_seed, run.trace) == run.oracle->digest();
    }

    // null evaluator against a bare oracle loop
    std::size_t null_ok = 0, null_total = 0;
    for (OracleKind o : {OracleKind::ab, OracleKind::ucb, OracleKind::ts_gauss, OracleKind::ts_bern,
                         OracleKind::linucb, OracleKind::fst}) {
        for (std::uint64_t seed : {11u, 12u, 13u}) {
            const RewardFamily fam = o == OracleKind::fst ? RewardFamily::indicator : RewardFamily::binary;
            auto c = case_config({o, EvaluatorKind::null, fam, ContextKind::continuous}, seed, 300);
            const auto s = make_setup(c);
            const std::uint64_t rep_seed = mix_seed(seed, 0);
            const LoggedDataset logged = make_logged(c, s, rep_seed);

            Components framed = make_components(c, s, Variant::only_online, logged, rep_seed);
            RunStreams fs_streams = RunStreams::from_seed(rep_seed);
            ContextGenerator gen = ContextGenerator::true_sampler(s.env);
            Runner runner(*framed.oracle, *framed.evaluator, gen, *s.env, fs_streams, {});
            const RunTrace trace = runner.run(c.T);
            check_decomposition(trace);

            Components bare = make_components(c, s, Variant::only_online, logged, rep_seed);
            RunStreams bs = RunStreams::from_seed(rep_seed);
            bool same = trace.virtual_plays.empty();
            for (std::size_t t = 0; t < c.T; ++t) {
                const Context x = s.env->sample_context(bs.environment);
                const Action a = bare.oracle->play(x, bs.oracle);
                const double y = s.env->sample_reward(x, a, bs.environment);
                bare.oracle->update(x, a, y);
                const auto& r = trace.rounds[t];
                same = same && r.context == x && r.action == a && r.reward == y;
            }
            same = same && bare.oracle->digest() == framed.oracle->digest();
            ++null_total;
            null_ok += same;
        }
    }
    std::ostringstream d;
    d << "decomposition " << decomposition_ok << "/" << traces << " (max rel err " << std::scientific
      << std::setprecision(1) << worst << std::defaultfloat << "); null vs bare " << null_ok << "/" << null_total
      << "; state replay " << replay_ok << "/" << replayed;
    return {decomposition_ok == traces && null_ok == null_total && replay_ok == replayed, d.str()};
}

// ---------------------------------------------------------------------------
// 10

class FixedPolicy final : public BanditOracle {
public:
    explicit FixedPolicy(std::size_t k) : k_(k) {}
    std::size_t num_actions() const override { return k_; }
    Action play_among(const Context& x, std::span<const Action> candidates, Rng&) const override {
        const Action want = std::min<Action>(k_ - 1, static_cast<Action>(x[0] * static_cast<double>(k_)));
        return std::find(candidates.begin(), candidates.end(), want) != candidates.end() ? want : candidates.front();
    }
    void update(const Context&, Action, double) override {}
    std::string digest() const override { return {}; }

private:
    std::size_t k_;
};

Verdict criterion10() {
    std::ostringstream d;
    bool pass = true;
    {
        ReplayCorpusParams p;
        p.num_actions = 10;
        p.rows = 100000;
        Rng rng = make_stream(31, stream::logged_data);
        const ReplayCorpus corpus = make_synthetic_corpus(p, rng);
        ABOracle ab(10);
        ReplayCursor cursor(corpus);
        Rng play = make_stream(31, stream::oracle);
        std::size_t accepted = 0;
        while (!cursor.exhausted()) accepted += cursor.step(ab, play).has_value();
        const double rate = static_cast<double>(accepted) / static_cast<double>(corpus.size());
        pass = pass && std::abs(rate - 0.1) <= 0.01;
        d << "A/B acceptance " << fmt(rate);
    }
    {
        const std::size_t K = 5, dim = 3;
        const double w[K][dim] = {{1.0, -0.5, 0.2}, {-0.8, 0.4, 0.9}, {0.3, 0.3, -1.0}, {0.0, 1.2, 0.1}, {-0.4, -0.6, 0.7}};
        const double bias[K] = {-1.0, 0.2, -0.3, -0.8, 0.5};
        auto click = [&](const Context& x, Action a) {
            double z = bias[a];
            for (std::size_t j = 0; j < dim; ++j) z += w[a][j] * x[j];
            return 1.0 / (1.0 + std::exp(-z));
        };
        Rng rng(4242);
        std::uniform_real_distribution<double> u(0, 1);
        std::uniform_int_distribution<Action> pick(0, K - 1);
        ReplayCorpus corpus(K, dim);
        for (int i = 0; i < 100000; ++i) {
            ReplayRow row;
            row.context = {u(rng), u(rng), u(rng)};
            row.candidates = all_actions(K);
            row.chosen = pick(rng);
            row.reward = bernoulli(click(row.context, row.chosen), rng);
            corpus.add(std::move(row));
        }
        FixedPolicy policy(K);
        ReplayCursor cursor(corpus);
        Rng play(1);
        std::vector<double> replayed;
        while (!cursor.exhausted())
            if (auto e = cursor.step(policy, play)) replayed.push_back(e->reward);
        std::vector<double> direct;
        for (int i = 0; i < 100000; ++i) {
            const Context x{u(rng), u(rng), u(rng)};
            direct.push_back(bernoulli(click(x, policy.play(x, play)), rng));
        }
        const auto a = mean_se(replayed), b = mean_se(direct);
        const double se = std::hypot(a.standard_error, b.standard_error);
        pass = pass && std::abs(a.mean - b.mean) <= 3 * se;
        d << "; fixed policy replay " << fmt(a.mean) << " (" << a.n << " events) vs direct " << fmt(b.mean) << " ("
          << fmt(std::abs(a.mean - b.mean) / se, 2) << " SE)";
    }
    return {pass, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"warmbandit acceptance suite"};
    std::string configs = "configs";
    std::vector<int> only;
    std::size_t threads = 0;
    app.add_option("configs", configs, "Directory with the shipped experiment configs")->check(CLI::ExistingDirectory);
    app.add_option("-k,--criteria", only, "Run only these criteria");
    app.add_option("-j,--threads", threads, "Worker threads (0: all cores)");
    CLI11_PARSE(app, argc, argv);

    Suite suite(configs, threads);
    const std::vector<std::function<Verdict()>> criteria{
        criterion1,
        [&] { return criterion2(suite); },
        [&] { return criterion3(suite); },
        criterion4,
        [&] { return criterion5(suite); },
        [&] { return criterion6(suite); },
        [&] { return criterion7(suite); },
        [&] { return criterion8(suite); },
        criterion9,
        criterion10,
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[i]();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        failures += !v.pass;
        std::cout << "criterion " << n << ": " << (v.pass ? "PASS" : "FAIL") << " " << v.detail << " ["
                  << fmt(seconds_since(t0), 1) << " s]" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
