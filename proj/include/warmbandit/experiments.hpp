// Experiment configuration, replication driver, summaries and bound checks.
#pragma once

#include "warmbandit/bounds.hpp"
#include "warmbandit/environments.hpp"
#include "warmbandit/evaluators.hpp"
#include "warmbandit/metrics.hpp"
#include "warmbandit/oracles.hpp"

#include <json.hpp>

namespace warmbandit {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class EnvironmentKind { synthetic, example1 };
enum class OracleKind { ab, ucb, ts_gauss, ts_bern, linucb, fst };
enum class EvaluatorKind { null, em, psm, ipsw, lr, mof, historical };
enum class Variant { offline_online, only_online, only_offline };
enum class RunMode { interleaved, batch };
enum class ContextMode { true_sampler, empirical };
enum class RegretChoice { automatic, marginal, contextual };

std::string to_string(OracleKind k);
std::string to_string(EvaluatorKind k);
std::string to_string(Variant v);
OracleKind parse_oracle_kind(const std::string& s);
EvaluatorKind parse_evaluator_kind(const std::string& s);

struct EnvironmentSpec {
    EnvironmentKind kind = EnvironmentKind::synthetic;
    SyntheticParams synthetic;
    std::uint64_t theta_seed = 2024;
};

struct OracleSpec {
    OracleKind kind = OracleKind::ucb;
    double beta = 1.0;                  // ucb, ts_gauss
    std::optional<double> linucb_beta;  // constant; default schedule otherwise
    double prior_success = 1.0;
    double prior_failure = 1.0;
    ForestParams forest;                // fst
    std::size_t retrain_every = 50;
    ExplorationSchedule epsilon;        // fst; d is filled from the environment
};

struct EvaluatorSpec {
    EvaluatorKind kind = EvaluatorKind::null;
    double pivot_spacing = 0.1;
    bool frequency_propensity = false;  // psm
    ForestParams forest;                // mof
};

struct ExperimentConfig {
    std::string name = "experiment";
    EnvironmentSpec environment;
    std::size_t logged_size = 100;
    OracleSpec oracle;
    EvaluatorSpec evaluator;
    std::vector<Variant> variants{Variant::offline_online};
    RunMode mode = RunMode::interleaved;
    ContextMode contexts = ContextMode::true_sampler;
    RegretChoice regret = RegretChoice::automatic;
    std::size_t T = 1000;
    std::size_t replications = 100;
    std::uint64_t seed = 1;
    std::size_t threads = 1;  // 0: hardware concurrency
    std::size_t max_virtual_per_round = 10'000'000;
    std::vector<std::size_t> bound_checkpoints;
    std::string output_dir;   // empty: nothing written
    bool write_traces = true;
};

// Throws ConfigError naming the offending field path.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& c);

// Shared read-only pieces built once per experiment.
struct ExperimentSetup {
    std::shared_ptr<const Environment> env;
    std::shared_ptr<const SyntheticEnv> synthetic;  // null for example1
    std::vector<double> marginal;                   // E[y|a]
    std::vector<double> gaps;
    bool gaps_exact = true;
    // psm: online probability of each reachable stratum, and pivot -> cell
    std::vector<double> strata_probability;
    std::vector<std::size_t> strata_cell_of_pivot;
    bool strata_exact = true;
};

ExperimentSetup make_setup(const ExperimentConfig& c);
LoggedDataset make_logged(const ExperimentConfig& c, const ExperimentSetup& s, std::uint64_t rep_seed);

struct Components {
    std::unique_ptr<BanditOracle> oracle;
    std::unique_ptr<OfflineEvaluator> evaluator;
};

Components make_components(const ExperimentConfig& c, const ExperimentSetup& s, Variant v, const LoggedDataset& logged,
                           std::uint64_t rep_seed);

struct CheckpointStats {
    std::size_t t = 0;
    double regret = 0.0;
    std::vector<double> emitted;      // per action, virtual outcomes up to t
    std::vector<double> emitted_sum;
    std::size_t virtual_total = 0;
    double lambda_min = 1.0;          // linucb: smallest eigenvalue of I + sum phi phi'
};

struct ReplicationResult {
    std::vector<double> curve;  // cumulative regret
    std::size_t virtual_plays = 0;
    std::vector<CheckpointStats> checkpoints;
    std::vector<std::vector<double>> cell_counts;  // em/psm logged counts per cell
    std::vector<double> effective_counts;          // ipsw
    RunTrace trace;                                // kept when traces are written
};

ReplicationResult run_replication(const ExperimentConfig& c, const ExperimentSetup& s, Variant v, std::size_t rep,
                                  bool keep_trace = false);

struct BoundCheck {
    std::string theorem;
    std::size_t checkpoint = 0;
    double mean_bound = 0.0;
    MeanSE regret;
    double fraction_within = 0.0;  // replications with regret <= own bound
    bool holds = false;            // mean regret <= mean bound
    std::optional<bool> reduces_regret;
    std::string note;
};

struct VariantResult {
    Variant variant = Variant::offline_online;
    Bands bands;
    std::vector<double> final_regret;
    MeanSE final;
    MeanSE virtual_plays;
    std::vector<double> emitted_mean;             // per action
    std::vector<std::optional<double>> bias;      // delta_a pooled over replications
    std::vector<BoundCheck> bounds;
};

struct ExperimentResult {
    std::vector<VariantResult> variants;
    nlohmann::json summary;

    const VariantResult& variant(Variant v) const;
};

ExperimentResult run_experiment(const ExperimentConfig& c);

// Evaluates one bound request (or an array of them). Population inputs may be
// given directly or estimated from a logged CSV ("logged_csv"); estimated
// results are labelled "plug-in".
nlohmann::json evaluate_bound_request(const nlohmann::json& request);

// Discrete context support with probabilities, when enumerable.
std::optional<std::vector<std::pair<Context, double>>> discrete_support(const ExperimentSetup& s);

}  // namespace warmbandit
