#include "warmbandit/experiments.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace warmbandit {

using nlohmann::json;

namespace {

// Signed storage is what json literals built in code use for positive values.
bool is_count(const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); }

template <class E>
E lookup(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const std::string& what) {
    for (const auto& [name, value] : table)
        if (s == name) return value;
    std::string names;
    for (const auto& [name, value] : table) names += std::string(names.empty() ? "" : ", ") + name;
    throw ConfigError(what + ": unknown value '" + s + "' (expected one of " + names + ")");
}

template <class E>
std::string name_of(E v, std::initializer_list<std::pair<const char*, E>> table) {
    for (const auto& [name, value] : table)
        if (v == value) return name;
    return "?";
}

constexpr std::initializer_list<std::pair<const char*, OracleKind>> kOracleNames{
    {"ab", OracleKind::ab},         {"ucb", OracleKind::ucb},       {"ts_gauss", OracleKind::ts_gauss},
    {"ts_bern", OracleKind::ts_bern}, {"linucb", OracleKind::linucb}, {"fst", OracleKind::fst}};
constexpr std::initializer_list<std::pair<const char*, EvaluatorKind>> kEvaluatorNames{
    {"null", EvaluatorKind::null}, {"em", EvaluatorKind::em},   {"psm", EvaluatorKind::psm},
    {"ipsw", EvaluatorKind::ipsw}, {"lr", EvaluatorKind::lr},   {"mof", EvaluatorKind::mof},
    {"historical", EvaluatorKind::historical}};
constexpr std::initializer_list<std::pair<const char*, Variant>> kVariantNames{
    {"offline_online", Variant::offline_online},
    {"only_online", Variant::only_online},
    {"only_offline", Variant::only_offline}};
constexpr std::initializer_list<std::pair<const char*, RunMode>> kModeNames{{"interleaved", RunMode::interleaved},
                                                                            {"batch", RunMode::batch}};
constexpr std::initializer_list<std::pair<const char*, ContextMode>> kContextNames{
    {"true", ContextMode::true_sampler}, {"empirical", ContextMode::empirical}};
constexpr std::initializer_list<std::pair<const char*, RegretChoice>> kRegretNames{
    {"auto", RegretChoice::automatic}, {"marginal", RegretChoice::marginal}, {"contextual", RegretChoice::contextual}};
constexpr std::initializer_list<std::pair<const char*, EnvironmentKind>> kEnvNames{
    {"synthetic", EnvironmentKind::synthetic}, {"example1", EnvironmentKind::example1}};
constexpr std::initializer_list<std::pair<const char*, ExplorationSchedule::Kind>> kScheduleNames{
    {"theorem", ExplorationSchedule::Kind::theorem},
    {"power", ExplorationSchedule::Kind::power},
    {"constant", ExplorationSchedule::Kind::constant}};

// Reads one JSON object, remembering which keys were consumed.
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* find(const std::string& key) {
        used_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void read(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) throw ConfigError(field(key) + ": expected a number");
            out = v->get<double>();
        }
    }
    void read(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) throw ConfigError(field(key) + ": expected true or false");
            out = v->get<bool>();
        }
    }
    void read(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) throw ConfigError(field(key) + ": expected a string");
            out = v->get<std::string>();
        }
    }
    void read(const std::string& key, std::uint64_t& out) {
        if (const json* v = find(key)) {
            if (!is_count(*v)) throw ConfigError(field(key) + ": expected a nonnegative integer");
            out = v->get<std::uint64_t>();
        }
    }
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown key");
    }

    std::string where() const { return path_.empty() ? "config" : path_; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

ForestParams parse_forest(const json& j, const std::string& path) {
    Fields f(j, path);
    ForestParams p;
    f.read("trees", p.num_trees);
    f.read("alpha", p.alpha);
    f.read("min_per_action", p.min_per_action);
    if (const json* v = f.find("subsample_exponent")) {
        if (!v->is_number()) throw ConfigError(f.field("subsample_exponent") + ": expected a number");
        p.subsample_exponent = v->get<double>();
    }
    f.read("pi_prime", p.pi_prime);
    f.read("honest", p.honest);
    f.read("features_per_node", p.features_per_node);
    f.finish();
    try {
        p.validate();
    } catch (const std::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return p;
}

json forest_json(const ForestParams& p) {
    json j{{"trees", p.num_trees},   {"alpha", p.alpha},   {"min_per_action", p.min_per_action},
           {"pi_prime", p.pi_prime}, {"honest", p.honest}, {"features_per_node", p.features_per_node}};
    if (p.subsample_exponent) j["subsample_exponent"] = *p.subsample_exponent;
    return j;
}

bool context_free(OracleKind k) {
    return k == OracleKind::ab || k == OracleKind::ucb || k == OracleKind::ts_gauss || k == OracleKind::ts_bern;
}

RegretMode regret_mode(const ExperimentConfig& c) {
    switch (c.regret) {
        case RegretChoice::marginal:
            return RegretMode::marginal;
        case RegretChoice::contextual:
            return RegretMode::contextual;
        case RegretChoice::automatic:
            break;
    }
    return context_free(c.oracle.kind) ? RegretMode::marginal : RegretMode::contextual;
}

}  // namespace

std::string to_string(OracleKind k) { return name_of(k, kOracleNames); }
std::string to_string(EvaluatorKind k) { return name_of(k, kEvaluatorNames); }
std::string to_string(Variant v) { return name_of(v, kVariantNames); }
OracleKind parse_oracle_kind(const std::string& s) { return lookup(s, kOracleNames, "oracle.kind"); }
EvaluatorKind parse_evaluator_kind(const std::string& s) { return lookup(s, kEvaluatorNames, "evaluator.kind"); }

ExperimentConfig parse_config(const json& j) {
    ExperimentConfig c;
    Fields top(j, "");
    top.read("name", c.name);

    if (const json* e = top.find("environment")) {
        Fields f(*e, "environment");
        std::string kind = "synthetic";
        f.read("kind", kind);
        c.environment.kind = lookup(kind, kEnvNames, f.field("kind"));
        auto& p = c.environment.synthetic;
        f.read("num_actions", p.num_actions);
        f.read("dim", p.dim);
        std::string family = to_string(p.family), contexts = to_string(p.contexts);
        f.read("family", family);
        f.read("contexts", contexts);
        try {
            p.family = parse_reward_family(family);
        } catch (const std::exception&) {
            throw ConfigError(f.field("family") + ": unknown value '" + family + "'");
        }
        try {
            p.contexts = parse_context_kind(contexts);
        } catch (const std::exception&) {
            throw ConfigError(f.field("contexts") + ": unknown value '" + contexts + "'");
        }
        f.read("rho", p.rho);
        f.read("literal_double_exp", p.literal_double_exp);
        f.read("noise", p.noise);
        f.read("bias_step", p.bias_step);
        f.read("qmc_points", p.qmc_points);
        f.read("qmc_shifts", p.qmc_shifts);
        f.read("qmc_seed", p.qmc_seed);
        f.read("theta_seed", c.environment.theta_seed);
        f.finish();
        if (c.environment.kind == EnvironmentKind::synthetic) {
            if (p.num_actions < 2) throw ConfigError("environment.num_actions: must be >= 2");
            if (p.dim < 1) throw ConfigError("environment.dim: must be >= 1");
            if (p.noise < 0.0) throw ConfigError("environment.noise: must be >= 0");
        }
    }

    top.read("logged_size", c.logged_size);

    if (const json* o = top.find("oracle")) {
        Fields f(*o, "oracle");
        std::string kind = to_string(c.oracle.kind);
        f.read("kind", kind);
        c.oracle.kind = lookup(kind, kOracleNames, f.field("kind"));
        f.read("beta", c.oracle.beta);
        if (const json* v = f.find("linucb_beta")) {
            if (!v->is_number()) throw ConfigError(f.field("linucb_beta") + ": expected a number");
            c.oracle.linucb_beta = v->get<double>();
        }
        f.read("prior_success", c.oracle.prior_success);
        f.read("prior_failure", c.oracle.prior_failure);
        if (const json* v = f.find("forest")) c.oracle.forest = parse_forest(*v, f.field("forest"));
        f.read("retrain_every", c.oracle.retrain_every);
        if (const json* v = f.find("epsilon")) {
            Fields g(*v, f.field("epsilon"));
            std::string sk = "theorem";
            g.read("kind", sk);
            c.oracle.epsilon.kind = lookup(sk, kScheduleNames, g.field("kind"));
            g.read("alpha", c.oracle.epsilon.alpha);
            g.read("pi_prime", c.oracle.epsilon.pi_prime);
            g.read("scale", c.oracle.epsilon.scale);
            g.read("exponent", c.oracle.epsilon.exponent);
            g.read("value", c.oracle.epsilon.value);
            g.finish();
        }
        f.finish();
        if (c.oracle.beta < 0.0) throw ConfigError("oracle.beta: must be >= 0");
        if (c.oracle.retrain_every < 1) throw ConfigError("oracle.retrain_every: must be >= 1");
    }

    if (const json* e = top.find("evaluator")) {
        Fields f(*e, "evaluator");
        std::string kind = to_string(c.evaluator.kind);
        f.read("kind", kind);
        c.evaluator.kind = lookup(kind, kEvaluatorNames, f.field("kind"));
        f.read("pivot_spacing", c.evaluator.pivot_spacing);
        std::string prop = c.evaluator.frequency_propensity ? "frequency" : "stored";
        f.read("propensity", prop);
        if (prop != "stored" && prop != "frequency")
            throw ConfigError(f.field("propensity") + ": expected 'stored' or 'frequency'");
        c.evaluator.frequency_propensity = prop == "frequency";
        if (const json* v = f.find("forest")) c.evaluator.forest = parse_forest(*v, f.field("forest"));
        f.finish();
        if (!(c.evaluator.pivot_spacing > 0.0 && c.evaluator.pivot_spacing <= 1.0))
            throw ConfigError("evaluator.pivot_spacing: must be in (0, 1]");
    }

    if (const json* v = top.find("variants")) {
        if (!v->is_array() || v->empty()) throw ConfigError("variants: expected a non-empty array");
        c.variants.clear();
        for (std::size_t i = 0; i < v->size(); ++i) {
            const auto path = "variants[" + std::to_string(i) + "]";
            if (!(*v)[i].is_string()) throw ConfigError(path + ": expected a string");
            const Variant var = lookup((*v)[i].get<std::string>(), kVariantNames, path);
            if (std::find(c.variants.begin(), c.variants.end(), var) != c.variants.end())
                throw ConfigError(path + ": duplicate variant");
            c.variants.push_back(var);
        }
    }
    std::string s = name_of(c.mode, kModeNames);
    top.read("mode", s);
    c.mode = lookup(s, kModeNames, "mode");
    s = name_of(c.contexts, kContextNames);
    top.read("context_generator", s);
    c.contexts = lookup(s, kContextNames, "context_generator");
    s = name_of(c.regret, kRegretNames);
    top.read("regret", s);
    c.regret = lookup(s, kRegretNames, "regret");
    top.read("T", c.T);
    top.read("replications", c.replications);
    top.read("seed", c.seed);
    top.read("threads", c.threads);
    top.read("max_virtual_per_round", c.max_virtual_per_round);
    if (const json* v = top.find("bound_checkpoints")) {
        if (!v->is_array()) throw ConfigError("bound_checkpoints: expected an array");
        for (std::size_t i = 0; i < v->size(); ++i) {
            if (!is_count((*v)[i]) || (*v)[i].get<std::uint64_t>() < 1)
                throw ConfigError("bound_checkpoints[" + std::to_string(i) + "]: expected a positive integer");
            c.bound_checkpoints.push_back((*v)[i].get<std::size_t>());
        }
    }
    if (const json* v = top.find("output")) {
        Fields f(*v, "output");
        f.read("dir", c.output_dir);
        f.read("traces", c.write_traces);
        f.finish();
    }
    top.finish();

    if (c.T < 1) throw ConfigError("T: must be >= 1");
    if (c.replications < 1) throw ConfigError("replications: must be >= 1");
    for (std::size_t i = 0; i < c.bound_checkpoints.size(); ++i)
        if (c.bound_checkpoints[i] > c.T)
            throw ConfigError("bound_checkpoints[" + std::to_string(i) + "]: exceeds T");
    if (c.evaluator.kind == EvaluatorKind::lr && c.oracle.kind != OracleKind::linucb)
        throw ConfigError("evaluator.kind: 'lr' requires oracle.kind 'linucb'");
    if (c.oracle.kind == OracleKind::ts_bern && c.environment.kind == EnvironmentKind::synthetic &&
        c.environment.synthetic.family != RewardFamily::binary)
        throw ConfigError("oracle.kind: 'ts_bern' requires environment.family 'binary'");
    if (c.environment.kind == EnvironmentKind::example1) {
        if (c.evaluator.kind == EvaluatorKind::psm && !c.evaluator.frequency_propensity)
            throw ConfigError("evaluator.propensity: example1 logs carry no stored propensities");
        if (c.evaluator.kind == EvaluatorKind::ipsw)
            throw ConfigError("evaluator.kind: example1 logs carry no propensities for 'ipsw'");
    }
    if (c.contexts == ContextMode::empirical && c.logged_size == 0 && c.environment.kind == EnvironmentKind::synthetic)
        throw ConfigError("context_generator: 'empirical' needs logged_size >= 1");
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
    const auto& p = c.environment.synthetic;
    json env{{"kind", name_of(c.environment.kind, kEnvNames)},
             {"num_actions", p.num_actions},
             {"dim", p.dim},
             {"family", to_string(p.family)},
             {"contexts", to_string(p.contexts)},
             {"rho", p.rho},
             {"literal_double_exp", p.literal_double_exp},
             {"noise", p.noise},
             {"bias_step", p.bias_step},
             {"qmc_points", p.qmc_points},
             {"qmc_shifts", p.qmc_shifts},
             {"qmc_seed", p.qmc_seed},
             {"theta_seed", c.environment.theta_seed}};
    json oracle{{"kind", to_string(c.oracle.kind)},
                {"beta", c.oracle.beta},
                {"prior_success", c.oracle.prior_success},
                {"prior_failure", c.oracle.prior_failure},
                {"forest", forest_json(c.oracle.forest)},
                {"retrain_every", c.oracle.retrain_every},
                {"epsilon",
                 {{"kind", name_of(c.oracle.epsilon.kind, kScheduleNames)},
                  {"alpha", c.oracle.epsilon.alpha},
                  {"pi_prime", c.oracle.epsilon.pi_prime},
                  {"scale", c.oracle.epsilon.scale},
                  {"exponent", c.oracle.epsilon.exponent},
                  {"value", c.oracle.epsilon.value}}}};
    if (c.oracle.linucb_beta) oracle["linucb_beta"] = *c.oracle.linucb_beta;
    json evaluator{{"kind", to_string(c.evaluator.kind)},
                   {"pivot_spacing", c.evaluator.pivot_spacing},
                   {"propensity", c.evaluator.frequency_propensity ? "frequency" : "stored"},
                   {"forest", forest_json(c.evaluator.forest)}};
    json variants = json::array();
    for (auto v : c.variants) variants.push_back(to_string(v));
    return json{{"name", c.name},
                {"environment", env},
                {"logged_size", c.logged_size},
                {"oracle", oracle},
                {"evaluator", evaluator},
                {"variants", variants},
                {"mode", name_of(c.mode, kModeNames)},
                {"context_generator", name_of(c.contexts, kContextNames)},
                {"regret", name_of(c.regret, kRegretNames)},
                {"T", c.T},
                {"replications", c.replications},
                {"seed", c.seed},
                {"threads", c.threads},
                {"max_virtual_per_round", c.max_virtual_per_round},
                {"bound_checkpoints", c.bound_checkpoints},
                {"output", {{"dir", c.output_dir}, {"traces", c.write_traces}}}};
}

// ---------------------------------------------------------------------------

namespace {

// Stratum probabilities under the online context distribution plus the map
// from pivot index to cell.
void fill_strata(const ExperimentConfig& c, ExperimentSetup& s) {
    const std::size_t k = s.env->num_actions();
    const auto pivots = PivotSet::grid(k - 1, c.evaluator.pivot_spacing);
    std::vector<double> mass(pivots.size(), 0.0);
    auto leading = [&](const Context& x) {
        auto p = s.synthetic->propensity(x);
        p.pop_back();
        return p;
    };
    if (auto support = discrete_support(s)) {
        for (const auto& [x, w] : *support) mass[pivots.stratify(leading(x))] += w;
    } else {
        s.strata_exact = false;
        Rng rng = make_stream(c.environment.theta_seed, 0x9517);
        const std::size_t draws = 1 << 17;
        for (std::size_t i = 0; i < draws; ++i) mass[pivots.stratify(leading(s.env->sample_context(rng)))] += 1.0;
        for (auto& m : mass) m /= static_cast<double>(draws);
    }
    s.strata_cell_of_pivot.assign(pivots.size(), BucketIndex::npos);
    for (std::size_t i = 0; i < pivots.size(); ++i)
        if (mass[i] > 0.0) {
            s.strata_cell_of_pivot[i] = s.strata_probability.size();
            s.strata_probability.push_back(mass[i]);
        }
}

}  // namespace

ExperimentSetup make_setup(const ExperimentConfig& c) {
    ExperimentSetup s;
    if (c.environment.kind == EnvironmentKind::example1) {
        s.env = std::make_shared<Example1Env>();
    } else {
        Rng rng = make_stream(c.environment.theta_seed, stream::environment_params);
        auto env = std::make_shared<SyntheticEnv>(c.environment.synthetic, rng);
        s.synthetic = env;
        s.env = env;
        for (Action a = 0; a < env->num_actions(); ++a) s.gaps_exact = s.gaps_exact && env->marginal_estimate(a).exact;
    }
    for (Action a = 0; a < s.env->num_actions(); ++a) s.marginal.push_back(*s.env->marginal_mean(a));
    const double best = *std::max_element(s.marginal.begin(), s.marginal.end());
    for (double m : s.marginal) s.gaps.push_back(best - m);
    if (c.evaluator.kind == EvaluatorKind::psm && s.synthetic) fill_strata(c, s);
    return s;
}

LoggedDataset make_logged(const ExperimentConfig& c, const ExperimentSetup& s, std::uint64_t rep_seed) {
    Rng rng = make_stream(rep_seed, stream::logged_data);
    if (!s.synthetic) return example1_logged_dataset(example1_draw_log(rng));
    return gen_logged_data(*s.synthetic, c.logged_size, rng);
}

namespace {

FstParams fst_params(const ExperimentConfig& c, const ExperimentSetup& s, std::uint64_t rep_seed) {
    FstParams p;
    p.forest = c.oracle.forest;
    p.retrain_every = c.oracle.retrain_every;
    p.epsilon = c.oracle.epsilon;
    p.epsilon.d = s.env->dim();
    p.range = s.env->reward_range();
    p.seed = mix_seed(rep_seed, stream::forest);
    return p;
}

}  // namespace

Components make_components(const ExperimentConfig& c, const ExperimentSetup& s, Variant v, const LoggedDataset& logged,
                           std::uint64_t rep_seed) {
    const std::size_t k = s.env->num_actions();
    const std::size_t d = s.env->dim();
    Components out;
    std::shared_ptr<RidgeState> ridge;
    std::shared_ptr<const FeatureMap> features;
    switch (c.oracle.kind) {
        case OracleKind::ab:
            out.oracle = std::make_unique<ABOracle>(k);
            break;
        case OracleKind::ucb:
            out.oracle = std::make_unique<UCBOracle>(k, c.oracle.beta);
            break;
        case OracleKind::ts_gauss:
            out.oracle = std::make_unique<TSGaussOracle>(k, c.oracle.beta);
            break;
        case OracleKind::ts_bern:
            out.oracle = std::make_unique<TSBernOracle>(k, c.oracle.prior_success, c.oracle.prior_failure);
            break;
        case OracleKind::linucb: {
            features = std::make_shared<BlockOneHotFeatureMap>(k, d);
            auto lin = std::make_unique<LinUCBOracle>(
                k, features, c.oracle.linucb_beta ? constant_beta(*c.oracle.linucb_beta) : BetaSchedule{});
            ridge = lin->ridge();
            out.oracle = std::move(lin);
            break;
        }
        case OracleKind::fst:
            out.oracle = std::make_unique<FstOracle>(k, d, fst_params(c, s, rep_seed));
            break;
    }
    if (v == Variant::only_online) {
        out.evaluator = std::make_unique<NullEvaluator>();
        return out;
    }
    switch (c.evaluator.kind) {
        case EvaluatorKind::null:
            out.evaluator = std::make_unique<NullEvaluator>();
            break;
        case EvaluatorKind::em:
            out.evaluator = std::make_unique<ExactMatchingEvaluator>(logged);
            break;
        case EvaluatorKind::psm: {
            auto pivots = PivotSet::grid(k - 1, c.evaluator.pivot_spacing);
            if (c.evaluator.frequency_propensity) {
                out.evaluator =
                    std::make_unique<PSMEvaluator>(PSMEvaluator::with_frequency_estimator(logged, std::move(pivots)));
            } else {
                auto env = s.synthetic;
                PropensityModel model = [env](const Context& x) {
                    auto p = env->propensity(x);
                    p.pop_back();
                    return p;
                };
                out.evaluator = std::make_unique<PSMEvaluator>(logged, std::move(model), std::move(pivots));
            }
            break;
        }
        case EvaluatorKind::ipsw:
            out.evaluator = std::make_unique<IPSWEvaluator>(logged);
            break;
        case EvaluatorKind::lr:
            out.evaluator = std::make_unique<LinearRegressionEvaluator>(logged, features, ridge);
            break;
        case EvaluatorKind::mof: {
            Rng rng = make_stream(rep_seed, stream::forest);
            out.evaluator = std::make_unique<MatchingOnForestEvaluator>(logged, c.evaluator.forest, rng);
            break;
        }
        case EvaluatorKind::historical:
            out.evaluator = std::make_unique<HistoricalAverageEvaluator>(logged);
            break;
    }
    return out;
}

std::optional<std::vector<std::pair<Context, double>>> discrete_support(const ExperimentSetup& s) {
    std::vector<std::pair<Context, double>> out;
    if (!s.synthetic) {
        out.push_back({Context{0.0}, Example1::type_probability});
        out.push_back({Context{1.0}, 1.0 - Example1::type_probability});
        return out;
    }
    const auto& p = s.synthetic->params();
    if (p.contexts != ContextKind::binary || p.dim > 20) return std::nullopt;
    const std::size_t n = std::size_t{1} << p.dim;
    const double w = 1.0 / static_cast<double>(n);
    for (std::size_t m = 0; m < n; ++m) {
        Context x(p.dim);
        for (std::size_t j = 0; j < p.dim; ++j) x[j] = (m >> j) & 1u ? 1.0 : -1.0;
        out.push_back({std::move(x), w});
    }
    return out;
}

namespace {

std::size_t binary_cell(const Context& x) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < x.size(); ++j)
        if (x[j] > 0.0) m |= std::size_t{1} << j;
    return m;
}

std::size_t support_cell(const ExperimentSetup& s, const Context& x) {
    return s.synthetic ? binary_cell(x) : static_cast<std::size_t>(x[0] > 0.5);
}

double lambda_min_of(const Eigen::MatrixXd& V) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(V, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

}  // namespace

ReplicationResult run_replication(const ExperimentConfig& c, const ExperimentSetup& s, Variant v, std::size_t rep,
                                  bool keep_trace) {
    const std::uint64_t rep_seed = mix_seed(c.seed, rep);
    const LoggedDataset logged = make_logged(c, s, rep_seed);
    Components parts = make_components(c, s, v, logged, rep_seed);
    RunStreams streams = RunStreams::from_seed(rep_seed);
    ContextGenerator contexts = c.contexts == ContextMode::empirical ? ContextGenerator::empirical(logged)
                                                                     : ContextGenerator::true_sampler(s.env);
    RunOptions options;
    options.regret = regret_mode(c);
    options.max_virtual_per_round = c.max_virtual_per_round;
    options.learn_online = v != Variant::only_offline;
    Runner runner(*parts.oracle, *parts.evaluator, contexts, *s.env, streams, options);
    RunTrace trace = (c.mode == RunMode::batch || v == Variant::only_offline) ? runner.run_batch(c.T) : runner.run(c.T);

    ReplicationResult out;
    out.curve = cumulative_regret(trace);
    out.virtual_plays = trace.virtual_plays.size();

    const std::size_t k = s.env->num_actions();
    const bool linear = c.oracle.kind == OracleKind::linucb;
    std::unique_ptr<BlockOneHotFeatureMap> phi;
    Eigen::MatrixXd V;
    if (linear) {
        phi = std::make_unique<BlockOneHotFeatureMap>(k, s.env->dim());
        V = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(phi->dim()), static_cast<Eigen::Index>(phi->dim()));
    }
    std::vector<std::size_t> checkpoints = c.bound_checkpoints;
    std::sort(checkpoints.begin(), checkpoints.end());
    std::size_t next = 0;
    std::vector<double> emitted(k, 0.0), sums(k, 0.0);
    std::size_t total = 0;
    for (std::size_t cp : checkpoints) {
        while (next < trace.virtual_plays.size() && trace.virtual_plays[next].round <= cp) {
            const auto& vp = trace.virtual_plays[next++];
            emitted[vp.action] += 1.0;
            sums[vp.action] += vp.outcome;
            ++total;
            if (linear) {
                const Eigen::VectorXd f = (*phi)(vp.context, vp.action);
                V.noalias() += f * f.transpose();
            }
        }
        CheckpointStats st;
        st.t = cp;
        st.regret = out.curve[cp - 1];
        st.emitted = emitted;
        st.emitted_sum = sums;
        st.virtual_total = total;
        if (linear) st.lambda_min = lambda_min_of(V);
        out.checkpoints.push_back(std::move(st));
    }

    if (v != Variant::only_online) {
        if (c.evaluator.kind == EvaluatorKind::em) {
            if (auto support = discrete_support(s)) {
                out.cell_counts.assign(support->size(), std::vector<double>(k, 0.0));
                for (std::size_t i = 0; i < logged.total_size(); ++i) {
                    const auto& r = logged.at_slot(i);
                    out.cell_counts[support_cell(s, r.context)][r.action] += 1.0;
                }
            }
        } else if (c.evaluator.kind == EvaluatorKind::psm && s.synthetic) {
            const auto pivots = PivotSet::grid(k - 1, c.evaluator.pivot_spacing);
            out.cell_counts.assign(s.strata_probability.size(), std::vector<double>(k, 0.0));
            for (std::size_t i = 0; i < logged.total_size(); ++i) {
                const auto& r = logged.at_slot(i);
                const std::size_t cell = s.strata_cell_of_pivot[pivots.stratify(*r.propensity_vector)];
                if (cell != BucketIndex::npos) out.cell_counts[cell][r.action] += 1.0;
            }
        } else if (c.evaluator.kind == EvaluatorKind::ipsw) {
            const IPSWEvaluator probe(logged);
            for (Action a = 0; a < k; ++a) out.effective_counts.push_back(probe.initial_budget(a));
        }
    }
    if (keep_trace) out.trace = std::move(trace);
    return out;
}

const VariantResult& ExperimentResult::variant(Variant v) const {
    for (const auto& r : variants)
        if (r.variant == v) return r;
    throw ParameterError("variant '" + to_string(v) + "' was not run");
}

namespace {

BoundCheck make_check(std::string theorem, std::size_t cp, const std::vector<double>& bounds,
                      const std::vector<double>& regrets) {
    BoundCheck b;
    b.theorem = std::move(theorem);
    b.checkpoint = cp;
    b.mean_bound = mean_se(bounds).mean;
    b.regret = mean_se(regrets);
    std::size_t within = 0;
    for (std::size_t i = 0; i < bounds.size(); ++i) within += regrets[i] <= bounds[i] ? 1 : 0;
    b.fraction_within = static_cast<double>(within) / static_cast<double>(bounds.size());
    b.holds = b.regret.mean <= b.mean_bound;
    return b;
}

bool ucb_theorem_applies(const ExperimentConfig& c, const ExperimentSetup& s, std::string& why) {
    if (c.oracle.kind != OracleKind::ucb) {
        why = "oracle is not ucb";
        return false;
    }
    if (c.oracle.beta != 1.0) {
        why = "ucb beta differs from 1";
        return false;
    }
    if (!s.env->reward_range().is_unit()) {
        why = "rewards are not in [0,1]";
        return false;
    }
    if (c.mode == RunMode::batch) {
        why = "batch mode";
        return false;
    }
    return true;
}

void add_bounds(const ExperimentConfig& c, const ExperimentSetup& s, VariantResult& vr,
                const std::vector<ReplicationResult>& reps, json& notes) {
    if (c.bound_checkpoints.empty() || vr.variant == Variant::only_offline) return;
    const std::size_t k = s.env->num_actions();
    const std::size_t R = reps.size();
    const std::size_t ncp = reps.front().checkpoints.size();
    const bool offline = vr.variant == Variant::offline_online && c.evaluator.kind != EvaluatorKind::null;
    std::string why;
    if (ucb_theorem_applies(c, s, why)) {
        for (std::size_t ci = 0; ci < ncp; ++ci) {
            const std::size_t cp = reps.front().checkpoints[ci].t;
            std::vector<double> regrets(R), b_main(R), b_biased(R);
            std::string main_name;
            bool all_reduce = true;
            for (std::size_t r = 0; r < R; ++r) {
                const auto& rep = reps[r];
                regrets[r] = rep.checkpoints[ci].regret;
                if (!offline || c.evaluator.kind == EvaluatorKind::ipsw) {
                    IPSWBoundInputs in;
                    in.T = cp;
                    in.gaps = s.gaps;
                    in.effective_counts = offline ? rep.effective_counts : std::vector<double>(k, 0.0);
                    b_main[r] = bound_ucb_ipsw(in);
                    main_name = offline ? "ucb_ipsw" : "ucb";
                } else if ((c.evaluator.kind == EvaluatorKind::em || c.evaluator.kind == EvaluatorKind::psm) &&
                           !rep.cell_counts.empty()) {
                    MatchingBoundInputs in;
                    in.T = cp;
                    in.gaps = s.gaps;
                    in.cell_counts = rep.cell_counts;
                    if (c.evaluator.kind == EvaluatorKind::em) {
                        for (const auto& [x, w] : *discrete_support(s)) in.cell_probability.push_back(w);
                        b_main[r] = bound_ucb_em(in);
                        main_name = "ucb_em";
                    } else {
                        in.cell_probability = s.strata_probability;
                        b_main[r] = bound_ucb_psm(in);
                        main_name = "ucb_psm";
                    }
                }
                BiasedBoundInputs bi;
                bi.T = cp;
                bi.gaps = s.gaps;
                bi.counts = rep.checkpoints[ci].emitted;
                bi.bias.assign(k, 0.0);
                for (Action a = 0; a < k; ++a) bi.bias[a] = vr.bias[a].value_or(0.0);
                const auto bb = bound_biased(bi);
                b_biased[r] = bb.value;
                all_reduce = all_reduce && bb.reduces_regret;
            }
            if (!main_name.empty()) {
                auto chk = make_check(main_name, cp, b_main, regrets);
                if (!s.gaps_exact) chk.note = "gaps estimated by quasi-Monte Carlo";
                if (main_name == "ucb_psm" && !s.strata_exact)
                    chk.note += std::string(chk.note.empty() ? "" : "; ") + "stratum probabilities estimated";
                vr.bounds.push_back(std::move(chk));
            }
            if (offline) {
                auto chk = make_check("biased", cp, b_biased, regrets);
                chk.reduces_regret = all_reduce;
                chk.note = "bias pooled over replications";
                vr.bounds.push_back(std::move(chk));
            }
        }
    } else {
        notes.push_back(to_string(vr.variant) + ": ucb bounds skipped (" + why + ")");
    }

    if (c.oracle.kind == OracleKind::linucb && s.synthetic && c.mode == RunMode::interleaved) {
        const auto support = discrete_support(s);
        const bool linear_family = s.synthetic->params().family == RewardFamily::linear;
        if (!support || !linear_family) {
            notes.push_back(to_string(vr.variant) + ": linucb bounds skipped (needs binary contexts and linear rewards)");
            return;
        }
        double delta_min = std::numeric_limits<double>::infinity();
        for (const auto& [x, w] : *support) {
            std::vector<double> m;
            for (Action a = 0; a < k; ++a) m.push_back(*s.env->expected_reward(x, a));
            std::sort(m.begin(), m.end());
            delta_min = std::min(delta_min, m[k - 1] - m[k - 2]);
        }
        const double d_prime = static_cast<double>(k * (s.env->dim() + 1));
        const double L = std::sqrt(static_cast<double>(s.env->dim()) + 1.0);
        if (!(delta_min > 0.0)) {
            notes.push_back(to_string(vr.variant) + ": linucb problem-dependent bound skipped (zero gap)");
        }
        for (std::size_t ci = 0; ci < ncp; ++ci) {
            const std::size_t cp = reps.front().checkpoints[ci].t;
            std::vector<double> regrets(R), dep(R), indep(R);
            for (std::size_t r = 0; r < R; ++r) {
                const auto& st = reps[r].checkpoints[ci];
                regrets[r] = st.regret;
                LinearBoundInputs in;
                in.T = cp;
                in.N = st.virtual_total;
                in.feature_dim = d_prime;
                in.L = L;
                in.delta_min = delta_min;
                in.lambda_min = st.lambda_min;
                in.min_feature_norm = L;
                if (delta_min > 0.0) dep[r] = bound_linucb(in, LinearBoundMode::problem_dependent);
                indep[r] = bound_linucb(in, LinearBoundMode::problem_independent);
            }
            if (delta_min > 0.0) vr.bounds.push_back(make_check("linucb_dependent", cp, dep, regrets));
            vr.bounds.push_back(make_check("linucb_independent", cp, indep, regrets));
        }
    }
}

json mean_se_json(const MeanSE& m) { return json{{"mean", m.mean}, {"se", m.standard_error}, {"n", m.n}}; }

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
    out << text;
    if (!out) throw std::runtime_error("write failed for '" + p.string() + "'");
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& c) {
    const ExperimentSetup setup = make_setup(c);
    const std::size_t k = setup.env->num_actions();
    const bool writing = !c.output_dir.empty();
    const std::filesystem::path dir(c.output_dir);
    if (writing) std::filesystem::create_directories(dir);

    std::size_t threads = c.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : c.threads;
    threads = std::min(threads, c.replications);

    ExperimentResult result;
    json variants_json = json::object();
    json notes = json::array();
    for (Variant v : c.variants) {
        std::vector<ReplicationResult> reps(c.replications);
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        auto worker = [&]() {
            for (;;) {
                const std::size_t r = next.fetch_add(1);
                if (r >= c.replications) return;
                try {
                    reps[r] = run_replication(c, setup, v, r, writing && c.write_traces);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next = c.replications;
                    return;
                }
            }
        };
        if (threads <= 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
            for (auto& t : pool) t.join();
        }
        if (failure) std::rethrow_exception(failure);

        VariantResult vr;
        vr.variant = v;
        std::vector<std::vector<double>> curves;
        std::vector<double> vplays;
        for (auto& rep : reps) {
            curves.push_back(rep.curve);
            vr.final_regret.push_back(rep.curve.back());
            vplays.push_back(static_cast<double>(rep.virtual_plays));
        }
        vr.bands = aggregate(curves);
        vr.final = mean_se(vr.final_regret);
        vr.virtual_plays = mean_se(vplays);

        // bias: pooled emitted mean minus the true marginal mean (last checkpoint, else none)
        vr.emitted_mean.assign(k, 0.0);
        vr.bias.assign(k, std::nullopt);
        if (!reps.front().checkpoints.empty()) {
            std::vector<double> n(k, 0.0), sum(k, 0.0);
            for (const auto& rep : reps) {
                const auto& st = rep.checkpoints.back();
                for (Action a = 0; a < k; ++a) {
                    n[a] += st.emitted[a];
                    sum[a] += st.emitted_sum[a];
                }
            }
            for (Action a = 0; a < k; ++a) {
                vr.emitted_mean[a] = n[a] / static_cast<double>(reps.size());
                if (n[a] > 0.0) vr.bias[a] = sum[a] / n[a] - setup.marginal[a];
            }
        }
        add_bounds(c, setup, vr, reps, notes);

        if (writing) {
            const auto name = to_string(v);
            std::ostringstream agg;
            write_bands_csv(agg, vr.bands);
            write_text(dir / ("aggregate_" + name + ".csv"), agg.str());
            if (c.write_traces) {
                std::filesystem::create_directories(dir / name);
                for (std::size_t r = 0; r < reps.size(); ++r) {
                    std::ostringstream tr;
                    write_trace_csv(tr, reps[r].trace);
                    std::ostringstream fname;
                    fname << "rep_" << std::setw(5) << std::setfill('0') << r << ".csv";
                    write_text(dir / name / fname.str(), tr.str());
                }
            }
        }

        json vj;
        vj["final_regret"] = mean_se_json(vr.final);
        vj["final_regret_p20"] = vr.bands.p20.back();
        vj["final_regret_p80"] = vr.bands.p80.back();
        vj["virtual_plays"] = mean_se_json(vr.virtual_plays);
        vj["emitted_per_action"] = vr.emitted_mean;
        json bias = json::array();
        for (const auto& b : vr.bias) bias.push_back(b ? json(*b) : json(nullptr));
        vj["bias"] = bias;
        json bj = json::array();
        for (const auto& b : vr.bounds) {
            json e{{"theorem", b.theorem},
                   {"T", b.checkpoint},
                   {"mean_bound", b.mean_bound},
                   {"regret", mean_se_json(b.regret)},
                   {"fraction_within", b.fraction_within},
                   {"holds", b.holds}};
            if (b.reduces_regret) e["reduces_regret"] = *b.reduces_regret;
            if (!b.note.empty()) e["note"] = b.note;
            bj.push_back(e);
        }
        vj["bounds"] = bj;
        variants_json[to_string(v)] = vj;
        result.variants.push_back(std::move(vr));
    }

    json summary;
    summary["name"] = c.name;
    summary["T"] = c.T;
    summary["replications"] = c.replications;
    summary["seed"] = c.seed;
    summary["marginal_means"] = setup.marginal;
    summary["gaps"] = setup.gaps;
    summary["gaps_exact"] = setup.gaps_exact;
    summary["variants"] = variants_json;
    if (std::find(c.variants.begin(), c.variants.end(), Variant::offline_online) != c.variants.end() &&
        std::find(c.variants.begin(), c.variants.end(), Variant::only_online) != c.variants.end()) {
        summary["value_of_logged_data"] =
            result.variant(Variant::only_online).final.mean - result.variant(Variant::offline_online).final.mean;
    }
    summary["notes"] = notes;
    result.summary = summary;
    if (writing) {
        write_text(dir / "config.json", to_json(c).dump(2) + "\n");
        write_text(dir / "summary.json", summary.dump(2) + "\n");
    }
    return result;
}

}  // namespace warmbandit
