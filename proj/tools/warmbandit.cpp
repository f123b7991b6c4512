// Command-line front end: simulate, replay, gen-data, bounds, example1.
#include "warmbandit/experiments.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>

using namespace warmbandit;
using nlohmann::json;

namespace {

int cmd_simulate(const std::string& config_path, const std::string& output, std::optional<std::size_t> reps,
                 std::optional<std::size_t> threads, std::optional<std::uint64_t> seed) {
    ExperimentConfig c = load_config(config_path);
    if (!output.empty()) c.output_dir = output;
    if (reps) c.replications = *reps;
    if (threads) c.threads = *threads;
    if (seed) c.seed = *seed;
    if (c.replications < 1) throw ConfigError("replications: must be >= 1");
    const auto result = run_experiment(c);
    std::cout << result.summary.dump(2) << '\n';
    return 0;
}

struct ReplayArgs {
    std::string corpus;
    std::size_t rows = 100000;
    std::size_t actions = 10;
    std::size_t dim = 6;
    std::size_t candidates = 0;
    bool context_free = false;
    std::string oracle = "ucb";
    double beta = 1.0;
    std::string evaluator = "null";
    double logged_fraction = 0.0;
    std::size_t events = 10000;
    std::uint64_t seed = 1;
    std::string output;
};

int cmd_replay(const ReplayArgs& a) {
    ReplayCorpus corpus;
    if (!a.corpus.empty()) {
        corpus = read_replay_csv(a.corpus);
    } else {
        ReplayCorpusParams p;
        p.num_actions = a.actions;
        p.dim = a.dim;
        p.rows = a.rows;
        p.candidates_per_row = a.candidates;
        p.contextual = !a.context_free;
        Rng rng = make_stream(a.seed, stream::environment_params);
        corpus = make_synthetic_corpus(p, rng);
    }
    const std::size_t k = corpus.num_actions();
    const std::size_t d = corpus.dim();
    auto [logged, stream_part] = corpus.split_logged(a.logged_fraction, a.seed);

    std::unique_ptr<BanditOracle> oracle;
    std::shared_ptr<const FeatureMap> features;
    std::shared_ptr<RidgeState> ridge;
    switch (parse_oracle_kind(a.oracle)) {
        case OracleKind::ab:
            oracle = std::make_unique<ABOracle>(k);
            break;
        case OracleKind::ucb:
            oracle = std::make_unique<UCBOracle>(k, a.beta);
            break;
        case OracleKind::ts_gauss:
            oracle = std::make_unique<TSGaussOracle>(k, a.beta);
            break;
        case OracleKind::ts_bern:
            oracle = std::make_unique<TSBernOracle>(k);
            break;
        case OracleKind::linucb: {
            features = std::make_shared<BlockOneHotFeatureMap>(k, d);
            auto lin = std::make_unique<LinUCBOracle>(k, features);
            ridge = lin->ridge();
            oracle = std::move(lin);
            break;
        }
        case OracleKind::fst:
            throw ConfigError("oracle: 'fst' is not offered for replay");
    }
    std::unique_ptr<OfflineEvaluator> evaluator;
    switch (parse_evaluator_kind(a.evaluator)) {
        case EvaluatorKind::null:
            evaluator = std::make_unique<NullEvaluator>();
            break;
        case EvaluatorKind::em:
            evaluator = std::make_unique<ExactMatchingEvaluator>(logged);
            break;
        case EvaluatorKind::ipsw:
            evaluator = std::make_unique<IPSWEvaluator>(logged);
            break;
        case EvaluatorKind::historical:
            evaluator = std::make_unique<HistoricalAverageEvaluator>(logged);
            break;
        case EvaluatorKind::lr:
            if (!ridge) throw ConfigError("evaluator: 'lr' requires oracle 'linucb'");
            evaluator = std::make_unique<LinearRegressionEvaluator>(logged, features, ridge);
            break;
        default:
            throw ConfigError("evaluator: replay supports null, em, ipsw, historical, lr");
    }
    std::vector<Context> pool;
    for (std::size_t i = 0; i < logged.total_size(); ++i) pool.push_back(logged.at_slot(i).context);
    if (pool.empty()) {
        if (stream_part.size() == 0) throw DataError("replay corpus is empty");
        pool.push_back(stream_part.row(0).context);
    }
    ContextGenerator contexts = ContextGenerator::empirical(std::move(pool));
    RunStreams streams = RunStreams::from_seed(a.seed);
    const auto trace = run_replay(*oracle, *evaluator, contexts, stream_part, streams, a.events);

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!a.output.empty()) {
        file.open(a.output);
        if (!file) throw std::runtime_error("cannot write '" + a.output + "'");
        out = &file;
    }
    *out << "event,row,action,reward,virtual_plays,cumulative_reward,mean_reward\n";
    double total = 0.0;
    for (std::size_t i = 0; i < trace.events.size(); ++i) {
        const auto& e = trace.events[i];
        total += e.reward;
        *out << i + 1 << ',' << e.row << ',' << e.action << ',' << format_double(e.reward) << ','
             << trace.virtual_plays[i] << ',' << format_double(total) << ','
             << format_double(total / static_cast<double>(i + 1)) << '\n';
    }
    if (!a.output.empty()) {
        const double rate = trace.rows_read ? static_cast<double>(trace.events.size()) / trace.rows_read : 0.0;
        std::cout << "events " << trace.events.size() << " rows_read " << trace.rows_read << " acceptance "
                  << format_double(rate) << " total_reward " << format_double(total) << '\n';
    }
    return 0;
}

struct GenArgs {
    std::string config;
    std::size_t actions = 3;
    std::size_t dim = 6;
    std::string family = "linear";
    std::string contexts = "continuous";
    double rho = -1.0;
    double noise = 0.1;
    std::uint64_t theta_seed = 2024;
    std::size_t n = 100;
    std::uint64_t seed = 1;
    std::string output;
};

int cmd_gen_data(const GenArgs& a) {
    ExperimentConfig c;
    if (!a.config.empty()) {
        c = load_config(a.config);
    } else {
        auto& p = c.environment.synthetic;
        p.num_actions = a.actions;
        p.dim = a.dim;
        p.family = parse_reward_family(a.family);
        p.contexts = parse_context_kind(a.contexts);
        p.rho = a.rho;
        p.noise = a.noise;
        c.environment.theta_seed = a.theta_seed;
    }
    if (c.environment.kind != EnvironmentKind::synthetic) throw ConfigError("environment.kind: gen-data needs synthetic");
    Rng theta_rng = make_stream(c.environment.theta_seed, stream::environment_params);
    const SyntheticEnv env(c.environment.synthetic, theta_rng);
    Rng rng = make_stream(a.seed, stream::logged_data);
    const auto data = gen_logged_data(env, a.n, rng);
    if (a.output.empty())
        write_logged_csv(std::cout, data);
    else
        write_logged_csv(a.output, data);
    return 0;
}

int cmd_bounds(const std::string& input) {
    json req;
    if (input == "-") {
        std::cin >> req;
    } else {
        std::ifstream in(input);
        if (!in) throw ConfigError("cannot open '" + input + "'");
        in >> req;
    }
    std::cout << evaluate_bound_request(req).dump(2) << '\n';
    return 0;
}

int cmd_example1(std::size_t episodes, std::uint64_t seed, double beta, const std::vector<std::string>& names,
                 bool as_json) {
    std::vector<Example1Strategy> strategies;
    for (const auto& n : names) strategies.push_back(parse_example1_strategy(n));
    Example1Options opt;
    opt.ucb_beta = beta;
    const auto start = std::chrono::steady_clock::now();
    const auto rows = example1_run(strategies, episodes, seed, opt);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (as_json) {
        json out = json::array();
        for (const auto& r : rows)
            out.push_back({{"strategy", to_string(r.strategy)},
                           {"mean", r.mean},
                           {"se", r.standard_error},
                           {"episodes", r.episodes}});
        std::cout << out.dump(2) << '\n';
    } else {
        std::cout << "strategy,expected_revenue,se,episodes\n";
        for (const auto& r : rows)
            std::cout << to_string(r.strategy) << ',' << format_double(r.mean) << ',' << format_double(r.standard_error)
                      << ',' << r.episodes << '\n';
        std::cerr << "elapsed " << secs << " s\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Warm-started contextual bandit simulator"};
    app.require_subcommand(1);

    auto* sim = app.add_subcommand("simulate", "Run an experiment config; writes traces, aggregates and a summary");
    std::string config_path, output;
    std::optional<std::size_t> reps, threads;
    std::optional<std::uint64_t> sim_seed;
    sim->add_option("-c,--config", config_path, "Experiment JSON")->required()->check(CLI::ExistingFile);
    sim->add_option("-o,--output", output, "Output directory (overrides the config)");
    sim->add_option("-r,--replications", reps, "Override replications");
    sim->add_option("-j,--threads", threads, "Worker threads (0: all cores)");
    sim->add_option("--seed", sim_seed, "Override the root seed");

    auto* rep = app.add_subcommand("replay", "Rejection-sampling replay over a uniformly logged corpus");
    ReplayArgs ra;
    rep->add_option("--corpus", ra.corpus, "Replay CSV (candidates,chosen,reward,x_j...)");
    rep->add_option("--rows", ra.rows, "Synthetic corpus rows when no corpus is given");
    rep->add_option("--actions", ra.actions, "Synthetic corpus actions");
    rep->add_option("--dim", ra.dim, "Synthetic corpus context dimension");
    rep->add_option("--candidates", ra.candidates, "Candidates per synthetic row (0: all)");
    rep->add_flag("--context-free", ra.context_free, "Synthetic click rates ignore the context");
    rep->add_option("--oracle", ra.oracle, "ab | ucb | ts_gauss | ts_bern | linucb");
    rep->add_option("--beta", ra.beta, "UCB / Gaussian TS beta");
    rep->add_option("--evaluator", ra.evaluator, "null | em | ipsw | historical | lr");
    rep->add_option("--logged-fraction", ra.logged_fraction, "Share of the corpus used as logged data")
        ->check(CLI::Range(0.0, 1.0));
    rep->add_option("--events", ra.events, "Accepted events to collect");
    rep->add_option("--seed", ra.seed, "Root seed");
    rep->add_option("-o,--output", ra.output, "Reward curve CSV (stdout when omitted)");

    auto* gen = app.add_subcommand("gen-data", "Generate a logged CSV from a synthetic environment");
    GenArgs ga;
    gen->add_option("-c,--config", ga.config, "Take the environment from an experiment config")
        ->check(CLI::ExistingFile);
    gen->add_option("--actions", ga.actions);
    gen->add_option("--dim", ga.dim);
    gen->add_option("--family", ga.family, "linear | sigmoid | binary | indicator");
    gen->add_option("--contexts", ga.contexts, "continuous | binary");
    gen->add_option("--rho", ga.rho);
    gen->add_option("--noise", ga.noise);
    gen->add_option("--theta-seed", ga.theta_seed);
    gen->add_option("-n,--records", ga.n, "Number of records");
    gen->add_option("--seed", ga.seed);
    gen->add_option("-o,--output", ga.output, "CSV path (stdout when omitted)");

    auto* bnd = app.add_subcommand("bounds", "Evaluate regret bounds from a JSON request");
    std::string bound_input;
    bnd->add_option("-i,--input", bound_input, "Request JSON ('-' for stdin)")->required();

    auto* ex1 = app.add_subcommand("example1", "Two-user-type advertising example: expected revenue per strategy");
    std::size_t episodes = 100000;
    std::uint64_t ex_seed = 1;
    double ex_beta = Example1Options{}.ucb_beta;
    std::vector<std::string> names{"empirical-average", "causal-inference", "ab-test", "ucb+em"};
    bool as_json = false;
    ex1->add_option("-e,--episodes", episodes, "Monte-Carlo episodes");
    ex1->add_option("--seed", ex_seed);
    ex1->add_option("--ucb-beta", ex_beta, "Exploration weight of UCB+EM");
    ex1->add_option("--strategies", names, "optimal | empirical-average | causal-inference | ab-test | ucb+em");
    ex1->add_flag("--json", as_json);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*sim) return cmd_simulate(config_path, output, reps, threads, sim_seed);
        if (*rep) return cmd_replay(ra);
        if (*gen) return cmd_gen_data(ga);
        if (*bnd) return cmd_bounds(bound_input);
        if (*ex1) return cmd_example1(episodes, ex_seed, ex_beta, names, as_json);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
