#include "warmbandit/environments.hpp"

#include "warmbandit/evaluators.hpp"
#include "warmbandit/oracles.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace warmbandit {

RewardFamily parse_reward_family(const std::string& name) {
    if (name == "linear") return RewardFamily::linear;
    if (name == "sigmoid") return RewardFamily::sigmoid;
    if (name == "binary") return RewardFamily::binary;
    if (name == "indicator") return RewardFamily::indicator;
    throw ParameterError("unknown reward family '" + name + "'");
}

std::string to_string(RewardFamily f) {
    switch (f) {
        case RewardFamily::linear: return "linear";
        case RewardFamily::sigmoid: return "sigmoid";
        case RewardFamily::binary: return "binary";
        case RewardFamily::indicator: return "indicator";
    }
    return "?";
}

ContextKind parse_context_kind(const std::string& name) {
    if (name == "continuous") return ContextKind::continuous;
    if (name == "binary") return ContextKind::binary;
    throw ParameterError("unknown context kind '" + name + "'");
}

std::string to_string(ContextKind k) { return k == ContextKind::continuous ? "continuous" : "binary"; }

// ---------------------------------------------------------------------------
// Synthetic environment

namespace {

double sigmoid_reward(double dot, double bias) { return 1.0 / (1.0 + std::exp(-dot + bias)); }

// Additive-recurrence low-discrepancy points; alpha_j = phi_d^{-(j+1)} with
// phi_d the positive root of x^{d+1} = x + 1.
std::vector<double> kronecker_alphas(std::size_t d) {
    double phi = 2.0;
    for (int i = 0; i < 64; ++i) phi = std::pow(1.0 + phi, 1.0 / static_cast<double>(d + 1));
    std::vector<double> alpha(d);
    for (std::size_t j = 0; j < d; ++j) alpha[j] = std::fmod(std::pow(1.0 / phi, static_cast<double>(j + 1)), 1.0);
    return alpha;
}

}  // namespace

SyntheticEnv::SyntheticEnv(SyntheticParams params, Rng& rng) : params_(params) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    theta_.assign(params_.num_actions, std::vector<double>(params_.dim));
    for (auto& row : theta_)
        for (auto& v : row) v = u(rng);
    init();
}

SyntheticEnv::SyntheticEnv(SyntheticParams params, std::vector<std::vector<double>> theta)
    : params_(params), theta_(std::move(theta)) {
    init();
}

void SyntheticEnv::init() {
    if (params_.num_actions < 1) throw ParameterError("synthetic environment needs K >= 1");
    if (params_.dim < 1) throw ParameterError("synthetic environment needs d >= 1");
    if (params_.noise < 0.0) throw ParameterError("noise half width must be >= 0");
    if (theta_.size() != params_.num_actions) throw ParameterError("theta must have K rows");
    for (const auto& row : theta_)
        if (row.size() != params_.dim) throw ParameterError("theta rows must have d entries");

    switch (params_.family) {
        case RewardFamily::linear: {
            double lo = std::numeric_limits<double>::infinity();
            double hi = -lo;
            for (Action a = 0; a < params_.num_actions; ++a) {
                double l1 = 0.0;
                for (double v : theta_[a]) l1 += std::abs(v);
                lo = std::min(lo, bias(a) - l1 - params_.noise);
                hi = std::max(hi, bias(a) + l1 + params_.noise);
            }
            range_ = {lo, hi};
            break;
        }
        case RewardFamily::sigmoid:
        case RewardFamily::binary:
            range_ = {0.0, 1.0};
            break;
        case RewardFamily::indicator:
            range_ = {-params_.noise, 1.0 + (params_.num_actions > 1 ? 0.5 : 0.0) + params_.noise};
            break;
    }
    marginal_.clear();
    for (Action a = 0; a < params_.num_actions; ++a) marginal_.push_back(estimate_marginal(a, params_.qmc_seed));
}

double SyntheticEnv::dot(const Context& x, Action a) const {
    double s = 0.0;
    for (std::size_t j = 0; j < params_.dim; ++j) s += x[j] * theta_[a][j];
    return s;
}

Context SyntheticEnv::sample_context(Rng& rng) const {
    Context x(params_.dim);
    if (params_.contexts == ContextKind::continuous) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (auto& v : x) v = u(rng);
    } else {
        std::bernoulli_distribution coin(0.5);
        for (auto& v : x) v = coin(rng) ? 1.0 : -1.0;
    }
    return x;
}

std::optional<double> SyntheticEnv::expected_reward(const Context& x, Action a) const {
    if (a >= params_.num_actions) throw ContractError("action out of range");
    if (x.size() != params_.dim) throw ContractError("context dimension mismatch");
    switch (params_.family) {
        case RewardFamily::linear:
            return dot(x, a) + bias(a);
        case RewardFamily::sigmoid:
        case RewardFamily::binary:
            return sigmoid_reward(dot(x, a), bias(a));
        case RewardFamily::indicator: {
            double hits = 0.0;
            for (std::size_t j = 0; j < params_.dim; ++j) hits += x[j] >= theta_[a][j] ? 1.0 : 0.0;
            return hits / static_cast<double>(params_.dim) + (a == 1 ? 0.5 : 0.0);
        }
    }
    return std::nullopt;
}

double SyntheticEnv::sample_reward(const Context& x, Action a, Rng& rng) const {
    const double mean = *expected_reward(x, a);
    switch (params_.family) {
        case RewardFamily::linear:
        case RewardFamily::indicator:
            if (params_.noise > 0.0) {
                std::uniform_real_distribution<double> e(-params_.noise, params_.noise);
                return mean + e(rng);
            }
            return mean;
        case RewardFamily::sigmoid:
            return mean;
        case RewardFamily::binary: {
            std::bernoulli_distribution coin(mean);
            return coin(rng) ? 1.0 : 0.0;
        }
    }
    return mean;
}

MarginalEstimate SyntheticEnv::estimate_marginal(Action a, std::uint64_t qmc_seed) const {
    const std::size_t d = params_.dim;
    if (params_.family == RewardFamily::linear) return {bias(a), 0.0, true};
    if (params_.family == RewardFamily::indicator) {
        double p = 0.0;
        for (double t : theta_[a]) {
            if (params_.contexts == ContextKind::continuous)
                p += std::clamp((1.0 - t) / 2.0, 0.0, 1.0);
            else
                p += ((1.0 >= t ? 1.0 : 0.0) + (-1.0 >= t ? 1.0 : 0.0)) / 2.0;
        }
        return {p / static_cast<double>(d) + (a == 1 ? 0.5 : 0.0), 0.0, true};
    }
    if (params_.contexts == ContextKind::binary && d <= 20) {
        const std::uint64_t n = std::uint64_t{1} << d;
        double s = 0.0;
        Context x(d);
        for (std::uint64_t m = 0; m < n; ++m) {
            for (std::size_t j = 0; j < d; ++j) x[j] = (m >> j) & 1U ? 1.0 : -1.0;
            s += *expected_reward(x, a);
        }
        return {s / static_cast<double>(n), 0.0, true};
    }
    // Randomly shifted lattice points; the spread across shifts gives the
    // standard error.
    const auto alpha = kronecker_alphas(d);
    Rng rng = make_stream(qmc_seed, 1000 + a);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    const std::size_t shifts = std::max<std::size_t>(params_.qmc_shifts, 2);
    std::vector<double> means;
    Context x(d);
    std::vector<double> shift(d);
    for (std::size_t r = 0; r < shifts; ++r) {
        for (auto& s : shift) s = u01(rng);
        double s = 0.0;
        for (std::size_t i = 0; i < params_.qmc_points; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                const double v = std::fmod(shift[j] + static_cast<double>(i + 1) * alpha[j], 1.0);
                x[j] = params_.contexts == ContextKind::continuous ? 2.0 * v - 1.0 : (v < 0.5 ? -1.0 : 1.0);
            }
            s += *expected_reward(x, a);
        }
        means.push_back(s / static_cast<double>(params_.qmc_points));
    }
    const double mean = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(shifts);
    double var = 0.0;
    for (double m : means) var += (m - mean) * (m - mean);
    var /= static_cast<double>(shifts - 1);
    return {mean, std::sqrt(var / static_cast<double>(shifts)), false};
}

std::vector<double> SyntheticEnv::propensity(const Context& x) const {
    const std::size_t k = params_.num_actions;
    std::vector<double> s(k);
    for (Action a = 0; a < k; ++a) {
        const double gap = marginal_[a].value - marginal_[(a + 1) % k].value;
        s[a] = params_.rho * dot(x, a) * gap;
        if (params_.literal_double_exp) s[a] = std::exp(s[a]);
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (auto& v : s) {
        v = std::exp(v - mx);
        z += v;
    }
    for (auto& v : s) v /= z;
    return s;
}

LoggedDataset gen_logged_data(const SyntheticEnv& env, std::size_t n, Rng& rng, RecordId first_id) {
    const std::size_t k = env.num_actions();
    LoggedDataset data(k, env.dim(), env.reward_range());
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        Context x = env.sample_context(rng);
        const auto p = env.propensity(x);
        const double r = u01(rng);
        Action a = k - 1;
        double c = 0.0;
        for (Action b = 0; b < k; ++b) {
            c += p[b];
            if (r < c) {
                a = b;
                break;
            }
        }
        LoggedRecord rec;
        rec.id = first_id + i;
        rec.action = a;
        rec.outcome = env.sample_reward(x, a, rng);
        rec.propensity_chosen = p[a];
        rec.propensity_vector = std::vector<double>(p.begin(), p.end() - 1);
        rec.context = std::move(x);
        data.add(std::move(rec));
    }
    return data;
}

// ---------------------------------------------------------------------------
// Two user types

namespace {

double population_rate(Action a) { return 0.5 * (Example1::rate[a][0] + Example1::rate[a][1]); }

// Compares p/q against r/s exactly; returns -1, 0 or 1.
int compare_fraction(std::int64_t p, std::int64_t q, std::int64_t r, std::int64_t s) {
    const std::int64_t lhs = p * s;
    const std::int64_t rhs = r * q;
    return (lhs > rhs) - (lhs < rhs);
}

Action pick(int cmp, TieRule tie) {
    if (cmp > 0) return 0;
    if (cmp < 0) return 1;
    return tie == TieRule::lower_index ? 0 : 1;
}

int binomial(int n, double p, Rng& rng) {
    if (n <= 0) return 0;
    std::binomial_distribution<int> b(n, p);
    return b(rng);
}

}  // namespace

Context Example1Env::sample_context(Rng& rng) const {
    std::bernoulli_distribution coin(Example1::type_probability);
    return {coin(rng) ? 1.0 : 0.0};
}

double Example1Env::sample_reward(const Context& x, Action a, Rng& rng) const {
    std::bernoulli_distribution click(Example1::rate[a][x[0] != 0.0 ? 1 : 0]);
    return click(rng) ? 1.0 : 0.0;
}

std::optional<double> Example1Env::expected_reward(const Context& x, Action a) const {
    return Example1::rate[a][x[0] != 0.0 ? 1 : 0];
}

std::optional<double> Example1Env::marginal_mean(Action a) const { return population_rate(a); }

Example1Strategy parse_example1_strategy(const std::string& name) {
    if (name == "optimal") return Example1Strategy::optimal;
    if (name == "empirical-average") return Example1Strategy::empirical_average;
    if (name == "causal-inference") return Example1Strategy::causal_inference;
    if (name == "ab-test") return Example1Strategy::ab_test;
    if (name == "ucb+em") return Example1Strategy::ucb_em;
    throw ParameterError("unknown strategy '" + name + "'");
}

std::string to_string(Example1Strategy s) {
    switch (s) {
        case Example1Strategy::optimal: return "optimal";
        case Example1Strategy::empirical_average: return "empirical-average";
        case Example1Strategy::causal_inference: return "causal-inference";
        case Example1Strategy::ab_test: return "ab-test";
        case Example1Strategy::ucb_em: return "ucb+em";
    }
    return "?";
}

Example1Log example1_draw_log(Rng& rng) {
    Example1Log log;
    for (int a = 0; a < 2; ++a)
        for (int u = 0; u < 2; ++u) log.clicks[a][u] = binomial(Example1::design[a][u], Example1::rate[a][u], rng);
    return log;
}

LoggedDataset example1_logged_dataset(const Example1Log& log) {
    LoggedDataset data(2, 1);
    RecordId id = 0;
    for (int a = 0; a < 2; ++a)
        for (int u = 0; u < 2; ++u)
            for (int i = 0; i < Example1::design[a][u]; ++i) {
                LoggedRecord r;
                r.id = id++;
                r.action = static_cast<Action>(a);
                r.context = {static_cast<double>(u)};
                r.outcome = i < log.clicks[a][u] ? 1.0 : 0.0;
                data.add(std::move(r));
            }
    return data;
}

Action example1_empirical_choice(const Example1Log& log, TieRule tie) {
    const auto& n = Example1::design;
    const auto& c = log.clicks;
    return pick(compare_fraction(c[0][0] + c[0][1], n[0][0] + n[0][1], c[1][0] + c[1][1], n[1][0] + n[1][1]), tie);
}

Action example1_causal_choice(const Example1Log& log, TieRule tie) {
    // Equal type weights: compare c0/n0 + c1/n1 across actions exactly.
    const auto& n = Example1::design;
    const auto& c = log.clicks;
    const std::int64_t p = std::int64_t{c[0][0]} * n[0][1] + std::int64_t{c[0][1]} * n[0][0];
    const std::int64_t q = std::int64_t{n[0][0]} * n[0][1];
    const std::int64_t r = std::int64_t{c[1][0]} * n[1][1] + std::int64_t{c[1][1]} * n[1][0];
    const std::int64_t s = std::int64_t{n[1][0]} * n[1][1];
    return pick(compare_fraction(p, q, r, s), tie);
}

double example1_ucb_em_reference(RunStreams& streams, const Example1Options& options) {
    auto env = std::make_shared<Example1Env>();
    const Example1Log log = example1_draw_log(streams.environment);
    ExactMatchingEvaluator em(example1_logged_dataset(log));
    UCBOracle ucb(2, options.ucb_beta);
    auto contexts = ContextGenerator::true_sampler(env);
    RunOptions ro;
    ro.regret = RegretMode::none;
    ro.record_virtual_plays = false;
    Runner runner(ucb, em, contexts, *env, streams, ro);
    const RunTrace trace = runner.run(static_cast<std::size_t>(options.users));
    double revenue = 0.0;
    for (const auto& r : trace.rounds) revenue += r.reward;
    return revenue;
}

namespace {

// Same arithmetic and the same random draws as the generic path, without the
// per-call allocations.
double example1_ucb_em_fast(RunStreams& streams, const Example1Options& options) {
    const Example1Log log = example1_draw_log(streams.environment);
    // cell[a][u]: outcomes in bucket order (swap-remove on use).
    std::array<std::array<std::vector<double>, 2>, 2> cell;
    for (int a = 0; a < 2; ++a)
        for (int u = 0; u < 2; ++u) {
            auto& v = cell[a][u];
            v.reserve(Example1::design[a][u]);
            for (int i = 0; i < Example1::design[a][u]; ++i) v.push_back(i < log.clicks[a][u] ? 1.0 : 0.0);
        }
    std::array<bool, 2> stopped{false, false};
    std::array<double, 2> mean{0.0, 0.0};
    std::array<std::uint64_t, 2> count{0, 0};
    const double beta = options.ucb_beta;

    auto play = [&]() -> Action {
        if (count[0] == 0) return 0;
        if (count[1] == 0) return 1;
        const double n = static_cast<double>(count[0] + count[1]);
        const double i0 = mean[0] + beta * std::sqrt(2.0 * std::log(n) / static_cast<double>(count[0]));
        const double i1 = mean[1] + beta * std::sqrt(2.0 * std::log(n) / static_cast<double>(count[1]));
        return i1 > i0 ? 1 : 0;
    };
    auto update = [&](Action a, double y) {
        const double n = static_cast<double>(count[a]);
        mean[a] = (n * mean[a] + y) / (n + 1.0);
        ++count[a];
    };

    std::bernoulli_distribution type_coin(Example1::type_probability);
    double revenue = 0.0;
    for (int t = 0; t < options.users; ++t) {
        Action a = 0;
        for (;;) {
            const int u = type_coin(streams.context_generator) ? 1 : 0;
            a = play();
            if (stopped[a]) break;
            auto& v = cell[a][u];
            if (v.empty()) {
                stopped[a] = true;
                break;
            }
            std::uniform_int_distribution<std::size_t> pick_one(0, v.size() - 1);
            const std::size_t k = pick_one(streams.evaluator);
            const double y = v[k];
            v[k] = v.back();
            v.pop_back();
            update(a, y);
        }
        // no update since the last play, so a is still the oracle's choice
        const int u = type_coin(streams.environment) ? 1 : 0;
        std::bernoulli_distribution click(Example1::rate[a][u]);
        const double y = click(streams.environment) ? 1.0 : 0.0;
        update(a, y);
        revenue += y;
    }
    return revenue;
}

}  // namespace

double example1_play(Example1Strategy strategy, RunStreams& streams, const Example1Options& options) {
    if (options.users < 0 || options.ab_test_users < 0 || options.ab_test_users > options.users)
        throw ParameterError("invalid user counts");
    Rng& rng = streams.environment;
    switch (strategy) {
        case Example1Strategy::optimal:
            return binomial(options.users, population_rate(1), rng);
        case Example1Strategy::empirical_average: {
            const Action a = example1_empirical_choice(example1_draw_log(rng), options.empirical_tie);
            return binomial(options.users, population_rate(a), rng);
        }
        case Example1Strategy::causal_inference: {
            const Action a = example1_causal_choice(example1_draw_log(rng), options.causal_tie);
            return binomial(options.users, population_rate(a), rng);
        }
        case Example1Strategy::ab_test: {
            const int na = binomial(options.ab_test_users, 0.5, rng);
            const int nb = options.ab_test_users - na;
            const int ca = binomial(na, population_rate(0), rng);
            const int cb = binomial(nb, population_rate(1), rng);
            Action a = 0;
            if (na == 0)
                a = 1;
            else if (nb > 0)
                a = pick(compare_fraction(ca, na, cb, nb), TieRule::lower_index);
            return ca + cb + binomial(options.users - options.ab_test_users, population_rate(a), rng);
        }
        case Example1Strategy::ucb_em:
            return example1_ucb_em_fast(streams, options);
    }
    return 0.0;
}

std::vector<Example1Summary> example1_run(const std::vector<Example1Strategy>& strategies, std::size_t episodes,
                                          std::uint64_t seed, const Example1Options& options) {
    std::vector<Example1Summary> out;
    for (auto s : strategies) {
        double sum = 0.0, sum2 = 0.0;
        for (std::size_t e = 0; e < episodes; ++e) {
            RunStreams streams = RunStreams::from_seed(mix_seed(seed, e));
            const double r = example1_play(s, streams, options);
            sum += r;
            sum2 += r * r;
        }
        Example1Summary summary;
        summary.strategy = s;
        summary.episodes = episodes;
        summary.mean = episodes ? sum / static_cast<double>(episodes) : 0.0;
        if (episodes > 1) {
            const double var = (sum2 - sum * sum / static_cast<double>(episodes)) / static_cast<double>(episodes - 1);
            summary.standard_error = std::sqrt(std::max(var, 0.0) / static_cast<double>(episodes));
        }
        out.push_back(summary);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_number(const std::string& cell, std::size_t line, const std::string& column) {
    double v = 0.0;
    const char* b = cell.data();
    const char* e = b + cell.size();
    auto res = std::from_chars(b, e, v);
    if (cell.empty() || res.ec != std::errc() || res.ptr != e || !std::isfinite(v))
        throw DataError("line " + std::to_string(line) + ": bad number '" + cell + "' in column " + column);
    return v;
}

std::size_t parse_index(const std::string& cell, std::size_t line, const std::string& column) {
    std::size_t v = 0;
    const char* b = cell.data();
    const char* e = b + cell.size();
    auto res = std::from_chars(b, e, v);
    if (cell.empty() || res.ec != std::errc() || res.ptr != e)
        throw DataError("line " + std::to_string(line) + ": bad action '" + cell + "' in column " + column);
    return v;
}

bool is_indexed(const std::string& name, const std::string& prefix, std::size_t& index) {
    if (name.rfind(prefix, 0) != 0 || name.size() == prefix.size()) return false;
    const std::string rest = name.substr(prefix.size());
    auto res = std::from_chars(rest.data(), rest.data() + rest.size(), index);
    return res.ec == std::errc() && res.ptr == rest.data() + rest.size();
}

struct ContextColumns {
    std::vector<std::size_t> keep;  // column positions of retained x_j
    std::size_t total = 0;          // x_j columns in the file
};

ContextColumns context_columns(const std::vector<std::string>& header, std::size_t first,
                               const std::vector<std::string>& mask) {
    ContextColumns cc;
    for (std::size_t c = first; c < header.size(); ++c) {
        std::size_t j = 0;
        if (!is_indexed(header[c], "x_", j) || j != cc.total)
            throw DataError("line 1: expected column x_" + std::to_string(cc.total) + ", found '" + header[c] + "'");
        ++cc.total;
        if (std::find(mask.begin(), mask.end(), header[c]) == mask.end()) cc.keep.push_back(c);
    }
    for (const auto& m : mask) {
        bool found = false;
        for (std::size_t c = first; c < header.size(); ++c) found = found || header[c] == m;
        if (!found) throw ParameterError("masked column '" + m + "' not in file");
    }
    return cc;
}

// Keep mask for the selection-bias thinning rule.
std::vector<char> bias_keep(const std::vector<Action>& actions, const std::vector<double>& rewards,
                            std::size_t num_actions, const IngestOptions& o) {
    std::vector<char> keep(actions.size(), 1);
    if (!o.bias_injection) return keep;
    std::vector<double> sum(num_actions, 0.0);
    std::vector<std::size_t> cnt(num_actions, 0);
    for (std::size_t i = 0; i < actions.size(); ++i) {
        sum[actions[i]] += rewards[i];
        ++cnt[actions[i]];
    }
    std::vector<Action> order;
    for (Action a = 0; a < num_actions; ++a)
        if (cnt[a] > 0) order.push_back(a);
    std::stable_sort(order.begin(), order.end(), [&](Action x, Action y) {
        return sum[x] / static_cast<double>(cnt[x]) > sum[y] / static_cast<double>(cnt[y]);
    });
    std::vector<char> top(num_actions, 0);
    for (std::size_t i = 0; i < std::min(o.bias_top, order.size()); ++i) top[order[i]] = 1;
    Rng rng = make_stream(o.bias_seed, 0xb1a5);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (std::size_t i = 0; i < actions.size(); ++i) {
        const double u = u01(rng);
        const bool hit = (top[actions[i]] && rewards[i] == 1.0) || (!top[actions[i]] && rewards[i] == 0.0);
        if (hit && u < o.bias_delete_probability) keep[i] = 0;
    }
    return keep;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    return out;
}

}  // namespace

LoggedDataset read_logged_csv(std::istream& in, const IngestOptions& options) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("line 1: missing header");
    const auto header = split(line, ',');
    if (header.size() < 3 || header[0] != "action" || header[1] != "reward" || header[2] != "p_chosen")
        throw DataError("line 1: header must start with action,reward,p_chosen");
    std::size_t np = 0;
    std::size_t c = 3;
    for (std::size_t j = 0; c < header.size(); ++c) {
        if (!is_indexed(header[c], "p_", j)) break;
        if (j != np) throw DataError("line 1: expected column p_" + std::to_string(np));
        ++np;
    }
    const auto cc = context_columns(header, c, options.mask_columns);

    std::vector<LoggedRecord> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto cells = split(line, ',');
        if (cells.size() != header.size())
            throw DataError("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(cells.size()));
        LoggedRecord r;
        r.id = rows.size();
        r.action = parse_index(cells[0], lineno, "action");
        r.outcome = parse_number(cells[1], lineno, "reward");
        if (!cells[2].empty()) r.propensity_chosen = parse_number(cells[2], lineno, "p_chosen");
        std::size_t present = 0;
        std::vector<double> p(np);
        for (std::size_t j = 0; j < np; ++j) {
            if (cells[3 + j].empty()) continue;
            p[j] = parse_number(cells[3 + j], lineno, header[3 + j]);
            ++present;
        }
        if (present != 0 && present != np)
            throw DataError("line " + std::to_string(lineno) + ": propensity vector partially missing");
        if (present == np && np > 0) r.propensity_vector = std::move(p);
        for (std::size_t col : cc.keep) r.context.push_back(parse_number(cells[col], lineno, header[col]));
        rows.push_back(std::move(r));
    }
    std::size_t k = np + 1;
    if (np == 0)
        for (const auto& r : rows) k = std::max(k, r.action + 1);

    std::vector<Action> actions;
    std::vector<double> rewards;
    for (const auto& r : rows) {
        if (r.action >= k) throw DataError("line " + std::to_string(r.id + 2) + ": action out of range");
        actions.push_back(r.action);
        rewards.push_back(r.outcome);
    }
    const auto keep = bias_keep(actions, rewards, k, options);
    LoggedDataset data(k, cc.keep.size(), options.range);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!keep[i]) continue;
        try {
            data.add(std::move(rows[i]));
        } catch (const DataError& e) {
            throw DataError("line " + std::to_string(i + 2) + ": " + e.what());
        }
    }
    return data;
}

LoggedDataset read_logged_csv(const std::string& path, const IngestOptions& options) {
    auto in = open_in(path);
    return read_logged_csv(in, options);
}

void write_logged_csv(std::ostream& out, const LoggedDataset& data) {
    out << "action,reward,p_chosen";
    for (std::size_t j = 0; j + 1 < data.num_actions(); ++j) out << ",p_" << j;
    for (std::size_t j = 0; j < data.dim(); ++j) out << ",x_" << j;
    out << '\n';
    for (std::size_t s = 0; s < data.total_size(); ++s) {
        if (!data.slot_alive(s)) continue;
        const auto& r = data.at_slot(s);
        out << r.action << ',' << format_double(r.outcome) << ',';
        if (r.propensity_chosen) out << format_double(*r.propensity_chosen);
        for (std::size_t j = 0; j + 1 < data.num_actions(); ++j) {
            out << ',';
            if (r.propensity_vector) out << format_double((*r.propensity_vector)[j]);
        }
        for (double v : r.context) out << ',' << format_double(v);
        out << '\n';
    }
}

void write_logged_csv(const std::string& path, const LoggedDataset& data) {
    auto out = open_out(path);
    write_logged_csv(out, data);
}

// ---------------------------------------------------------------------------
// Replay

void ReplayCorpus::add(ReplayRow row) {
    if (row.candidates.empty()) throw DataError("replay row needs candidates");
    for (Action a : row.candidates)
        if (a >= num_actions_) throw DataError("candidate action out of range");
    if (std::find(row.candidates.begin(), row.candidates.end(), row.chosen) == row.candidates.end())
        throw DataError("logged action is not among the candidates");
    if (row.reward != 0.0 && row.reward != 1.0) throw DataError("replay reward must be 0 or 1");
    if (row.context.size() != dim_) throw DataError("replay context dimension mismatch");
    rows_.push_back(std::move(row));
}

std::pair<LoggedDataset, ReplayCorpus> ReplayCorpus::split_logged(double fraction, std::uint64_t seed) const {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ParameterError("split fraction must lie in [0,1]");
    std::vector<std::size_t> order(rows_.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_stream(seed, stream::logged_data);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_logged = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(rows_.size())));
    LoggedDataset logged(num_actions_, dim_);
    ReplayCorpus rest(num_actions_, dim_);
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& r = rows_[order[i]];
        if (i < n_logged) {
            LoggedRecord rec;
            rec.id = i;
            rec.action = r.chosen;
            rec.context = r.context;
            rec.outcome = r.reward;
            rec.propensity_chosen = 1.0 / static_cast<double>(r.candidates.size());
            logged.add(std::move(rec));
        } else {
            rest.rows_.push_back(r);
        }
    }
    return {std::move(logged), std::move(rest)};
}

ReplayCorpus read_replay_csv(std::istream& in, const IngestOptions& options) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("line 1: missing header");
    const auto header = split(line, ',');
    if (header.size() < 3 || header[0] != "candidates" || header[1] != "chosen" || header[2] != "reward")
        throw DataError("line 1: header must start with candidates,chosen,reward");
    const auto cc = context_columns(header, 3, options.mask_columns);
    std::vector<ReplayRow> rows;
    std::vector<std::size_t> lines;
    std::size_t k = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto cells = split(line, ',');
        if (cells.size() != header.size())
            throw DataError("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(cells.size()));
        ReplayRow r;
        for (const auto& c : split(cells[0], '|')) {
            r.candidates.push_back(parse_index(c, lineno, "candidates"));
            k = std::max(k, r.candidates.back() + 1);
        }
        r.chosen = parse_index(cells[1], lineno, "chosen");
        k = std::max(k, r.chosen + 1);
        r.reward = parse_number(cells[2], lineno, "reward");
        for (std::size_t col : cc.keep) r.context.push_back(parse_number(cells[col], lineno, header[col]));
        rows.push_back(std::move(r));
        lines.push_back(lineno);
    }
    std::vector<Action> actions;
    std::vector<double> rewards;
    for (const auto& r : rows) {
        actions.push_back(r.chosen);
        rewards.push_back(r.reward);
    }
    const auto keep = bias_keep(actions, rewards, k, options);
    ReplayCorpus corpus(k, cc.keep.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!keep[i]) continue;
        try {
            corpus.add(std::move(rows[i]));
        } catch (const DataError& e) {
            throw DataError("line " + std::to_string(lines[i]) + ": " + e.what());
        }
    }
    return corpus;
}

ReplayCorpus read_replay_csv(const std::string& path, const IngestOptions& options) {
    auto in = open_in(path);
    return read_replay_csv(in, options);
}

void write_replay_csv(std::ostream& out, const ReplayCorpus& corpus) {
    out << "candidates,chosen,reward";
    for (std::size_t j = 0; j < corpus.dim(); ++j) out << ",x_" << j;
    out << '\n';
    for (const auto& r : corpus.rows()) {
        for (std::size_t i = 0; i < r.candidates.size(); ++i) out << (i ? "|" : "") << r.candidates[i];
        out << ',' << r.chosen << ',' << format_double(r.reward);
        for (double v : r.context) out << ',' << format_double(v);
        out << '\n';
    }
}

void write_replay_csv(const std::string& path, const ReplayCorpus& corpus) {
    auto out = open_out(path);
    write_replay_csv(out, corpus);
}

ReplayCorpus make_synthetic_corpus(const ReplayCorpusParams& p, Rng& rng) {
    if (p.num_actions < 1) throw ParameterError("corpus needs K >= 1");
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> base(-3.0, -1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<std::vector<double>> w(p.num_actions, std::vector<double>(p.dim));
    std::vector<double> c(p.num_actions);
    for (Action a = 0; a < p.num_actions; ++a) {
        for (auto& v : w[a]) v = u(rng);
        c[a] = base(rng);
    }
    const std::size_t m =
        p.candidates_per_row == 0 ? p.num_actions : std::min(p.candidates_per_row, p.num_actions);
    ReplayCorpus corpus(p.num_actions, p.dim);
    std::vector<Action> all = all_actions(p.num_actions);
    for (std::size_t i = 0; i < p.rows; ++i) {
        ReplayRow r;
        r.context.resize(p.dim);
        for (auto& v : r.context) v = u01(rng);
        if (m == p.num_actions) {
            r.candidates = all;
        } else {
            for (std::size_t j = 0; j < m; ++j) {
                std::uniform_int_distribution<std::size_t> pick(j, all.size() - 1);
                std::swap(all[j], all[pick(rng)]);
            }
            r.candidates.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(m));
            std::sort(r.candidates.begin(), r.candidates.end());
        }
        std::uniform_int_distribution<std::size_t> pick(0, r.candidates.size() - 1);
        r.chosen = r.candidates[pick(rng)];
        double z = c[r.chosen];
        if (p.contextual)
            for (std::size_t j = 0; j < p.dim; ++j) z += w[r.chosen][j] * r.context[j];
        r.reward = u01(rng) < 1.0 / (1.0 + std::exp(-z)) ? 1.0 : 0.0;
        corpus.add(std::move(r));
    }
    return corpus;
}

std::optional<ReplayEvent> ReplayCursor::step(const BanditOracle& oracle, Rng& rng) {
    if (exhausted()) throw ContractError("replay corpus exhausted");
    const std::size_t i = next_++;
    const auto& row = corpus_->row(i);
    const Action a = oracle.play_among(row.context, row.candidates, rng);
    if (a != row.chosen) return std::nullopt;
    return ReplayEvent{i, row.context, a, row.reward};
}

double ReplayTrace::total_reward() const {
    double s = 0.0;
    for (const auto& e : events) s += e.reward;
    return s;
}

ReplayTrace run_replay(BanditOracle& oracle, OfflineEvaluator& evaluator, ContextGenerator& contexts,
                       const ReplayCorpus& corpus, RunStreams& streams, std::size_t max_events,
                       std::size_t max_virtual_per_round) {
    ReplayTrace trace;
    ReplayCursor cursor(corpus);
    while (trace.events.size() < max_events && !cursor.exhausted()) {
        std::size_t virtual_count = 0;
        for (;;) {
            const Context x = contexts.draw(streams.context_generator);
            const Action a = oracle.play(x, streams.virtual_play);
            const auto y = evaluator.get_outcome(x, a, streams.evaluator);
            if (!y) break;
            if (++virtual_count > max_virtual_per_round)
                throw RunnerError("offline evaluator exceeded the virtual-play cap during replay");
            oracle.update(x, a, *y);
        }
        std::optional<ReplayEvent> ev;
        while (!ev && !cursor.exhausted()) ev = cursor.step(oracle, streams.oracle);
        if (!ev) break;
        oracle.update(ev->context, ev->action, ev->reward);
        contexts.observe(ev->context);
        trace.events.push_back(*ev);
        trace.virtual_plays.push_back(virtual_count);
    }
    trace.rows_read = cursor.position();
    return trace;
}

}  // namespace warmbandit
