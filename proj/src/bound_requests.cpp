#include "warmbandit/experiments.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace warmbandit {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }) == allowed.end())
            throw ConfigError(it.key() + ": unknown key");
}

const json& need(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw ConfigError(std::string(key) + ": required");
    return *it;
}

double number(const json& j, const char* key) {
    const json& v = need(j, key);
    if (!v.is_number()) throw ConfigError(std::string(key) + ": expected a number");
    return v.get<double>();
}

double number_or(const json& j, const char* key, double fallback) {
    return j.contains(key) ? number(j, key) : fallback;
}

std::uint64_t count(const json& j, const char* key) {
    const json& v = need(j, key);
    if (!(v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0))) throw ConfigError(std::string(key) + ": expected a nonnegative integer");
    return v.get<std::uint64_t>();
}

std::vector<double> vec(const json& j, const char* key) {
    const json& v = need(j, key);
    if (!v.is_array()) throw ConfigError(std::string(key) + ": expected an array");
    std::vector<double> out;
    for (const auto& e : v) {
        if (!e.is_number()) throw ConfigError(std::string(key) + ": expected numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

std::vector<std::vector<double>> matrix(const json& j, const char* key) {
    const json& v = need(j, key);
    if (!v.is_array()) throw ConfigError(std::string(key) + ": expected an array of arrays");
    std::vector<std::vector<double>> out;
    for (const auto& row : v) {
        if (!row.is_array()) throw ConfigError(std::string(key) + ": expected an array of arrays");
        std::vector<double> r;
        for (const auto& e : row) {
            if (!e.is_number()) throw ConfigError(std::string(key) + ": expected numbers");
            r.push_back(e.get<double>());
        }
        out.push_back(std::move(r));
    }
    return out;
}

RewardRange range_of(const json& j) {
    if (!j.contains("reward_range")) return {};
    const auto r = vec(j, "reward_range");
    if (r.size() != 2 || !(r[0] < r[1])) throw ConfigError("reward_range: expected [lo, hi] with lo < hi");
    return {r[0], r[1]};
}

std::vector<double> gaps_from_means(const std::vector<std::optional<double>>& means) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < means.size(); ++a) {
        if (!means[a]) throw ConfigError("logged_csv: action " + std::to_string(a) + " has no records");
        best = std::max(best, *means[a]);
    }
    std::vector<double> gaps;
    for (const auto& m : means) gaps.push_back(best - *m);
    return gaps;
}

json evaluate_one(const json& req) {
    if (!req.is_object()) throw ConfigError("bound request: expected an object");
    const json& th = need(req, "theorem");
    if (!th.is_string()) throw ConfigError("theorem: expected a string");
    const std::string theorem = th.get<std::string>();
    json out{{"theorem", theorem}};

    if (req.contains("logged_csv")) {
        check_keys(req, {"theorem", "logged_csv", "T", "reward_range"});
        IngestOptions opt;
        opt.range = range_of(req);
        const json& path = need(req, "logged_csv");
        if (!path.is_string()) throw ConfigError("logged_csv: expected a path");
        const LoggedDataset data = read_logged_csv(path.get<std::string>(), opt);
        const std::size_t k = data.num_actions();
        out["source"] = "plug-in";
        if (theorem == "ucb_em") {
            std::map<std::vector<double>, std::vector<double>> cells;
            std::vector<double> n(k, 0.0), s(k, 0.0);
            for (std::size_t i = 0; i < data.total_size(); ++i) {
                const auto& r = data.at_slot(i);
                auto& row = cells[r.context];
                row.resize(k, 0.0);
                row[r.action] += 1.0;
                n[r.action] += 1.0;
                s[r.action] += r.outcome;
            }
            std::vector<std::optional<double>> means(k);
            for (Action a = 0; a < k; ++a)
                if (n[a] > 0.0) means[a] = s[a] / n[a];
            MatchingBoundInputs in;
            in.T = count(req, "T");
            in.gaps = gaps_from_means(means);
            in.range = opt.range;
            const double total = static_cast<double>(data.total_size());
            for (const auto& [x, row] : cells) {
                double m = 0.0;
                for (double v : row) m += v;
                in.cell_probability.push_back(m / total);
                in.cell_counts.push_back(row);
            }
            out["value"] = bound_ucb_em(in);
            out["gaps"] = in.gaps;
            out["cells"] = in.cell_probability.size();
            return out;
        }
        if (theorem == "ucb_ipsw") {
            const IPSWEvaluator ipsw(data);
            std::vector<std::optional<double>> means(k);
            IPSWBoundInputs in;
            in.T = count(req, "T");
            in.range = opt.range;
            for (Action a = 0; a < k; ++a) {
                means[a] = ipsw.mean(a);
                in.effective_counts.push_back(ipsw.initial_budget(a));
            }
            in.gaps = gaps_from_means(means);
            out["value"] = bound_ucb_ipsw(in);
            out["gaps"] = in.gaps;
            out["effective_counts"] = in.effective_counts;
            return out;
        }
        throw ConfigError("theorem: plug-in estimates are available for 'ucb_em' and 'ucb_ipsw' only");
    }

    out["source"] = "supplied";
    if (theorem == "ucb_em" || theorem == "ucb_psm") {
        check_keys(req, {"theorem", "T", "gaps", "cell_probability", "cell_counts", "reward_range"});
        MatchingBoundInputs in;
        in.T = count(req, "T");
        in.gaps = vec(req, "gaps");
        in.cell_probability = vec(req, "cell_probability");
        in.cell_counts = matrix(req, "cell_counts");
        in.range = range_of(req);
        out["value"] = theorem == "ucb_em" ? bound_ucb_em(in) : bound_ucb_psm(in);
    } else if (theorem == "ucb_ipsw") {
        check_keys(req, {"theorem", "T", "gaps", "effective_counts", "reward_range"});
        IPSWBoundInputs in;
        in.T = count(req, "T");
        in.gaps = vec(req, "gaps");
        in.effective_counts = vec(req, "effective_counts");
        in.range = range_of(req);
        out["value"] = bound_ucb_ipsw(in);
    } else if (theorem == "biased") {
        check_keys(req, {"theorem", "T", "gaps", "counts", "bias", "reward_range"});
        BiasedBoundInputs in;
        in.T = count(req, "T");
        in.gaps = vec(req, "gaps");
        in.counts = vec(req, "counts");
        in.bias = vec(req, "bias");
        in.range = range_of(req);
        const auto b = bound_biased(in);
        out["value"] = b.value;
        out["reduces_regret"] = b.reduces_regret;
    } else if (theorem == "linucb") {
        check_keys(req, {"theorem", "mode", "T", "N", "feature_dim", "L", "delta_min", "lambda_min", "beta_T",
                         "trace_v0", "det_v0", "min_feature_norm"});
        LinearBoundInputs in;
        in.T = count(req, "T");
        in.N = req.contains("N") ? count(req, "N") : 0;
        in.feature_dim = number(req, "feature_dim");
        in.L = number_or(req, "L", 1.0);
        in.delta_min = number_or(req, "delta_min", 0.0);
        in.lambda_min = number_or(req, "lambda_min", 1.0);
        in.beta_T = number_or(req, "beta_T", 0.0);
        in.trace_v0 = number_or(req, "trace_v0", 0.0);
        in.det_v0 = number_or(req, "det_v0", 1.0);
        in.min_feature_norm = number_or(req, "min_feature_norm", 1.0);
        std::string mode = "dependent";
        if (req.contains("mode")) {
            if (!req["mode"].is_string()) throw ConfigError("mode: expected a string");
            mode = req["mode"].get<std::string>();
        }
        if (mode != "dependent" && mode != "independent")
            throw ConfigError("mode: expected 'dependent' or 'independent'");
        out["mode"] = mode;
        out["value"] = bound_linucb(
            in, mode == "dependent" ? LinearBoundMode::problem_dependent : LinearBoundMode::problem_independent);
    } else if (theorem == "forest_constants") {
        check_keys(req, {"theorem", "alpha", "d", "pi_prime", "omega"});
        const auto fc = forest_constants(number(req, "alpha"), count(req, "d"), number_or(req, "pi_prime", 1.0),
                                         number_or(req, "omega", 0.0));
        out["A"] = fc.schedule.A;
        out["beta"] = fc.schedule.beta;
        out["epsilon_exponent"] = fc.schedule.exponent;
        out["regret_exponent"] = fc.regret_exponent;
    } else {
        throw ConfigError("theorem: unknown value '" + theorem +
                          "' (expected ucb_em, ucb_psm, ucb_ipsw, biased, linucb, forest_constants)");
    }
    return out;
}

}  // namespace

json evaluate_bound_request(const json& request) {
    if (request.is_array()) {
        json out = json::array();
        for (const auto& r : request) out.push_back(evaluate_one(r));
        return out;
    }
    return evaluate_one(request);
}

}  // namespace warmbandit
