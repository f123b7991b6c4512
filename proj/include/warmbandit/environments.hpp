// Data-generating processes: the synthetic contextual environment, the
// two-user-type advertising scenario, CSV ingestion/export and the replay
// corpus for rejection-sampling evaluation.
#pragma once

#include "warmbandit/core.hpp"
#include "warmbandit/framework.hpp"

#include <array>
#include <iosfwd>
#include <string>

namespace warmbandit {

enum class RewardFamily { linear, sigmoid, binary, indicator };
enum class ContextKind { continuous, binary };

RewardFamily parse_reward_family(const std::string& name);
std::string to_string(RewardFamily f);
ContextKind parse_context_kind(const std::string& name);
std::string to_string(ContextKind k);

struct SyntheticParams {
    std::size_t num_actions = 3;
    std::size_t dim = 6;
    RewardFamily family = RewardFamily::linear;
    ContextKind contexts = ContextKind::continuous;
    double rho = -1.0;
    bool literal_double_exp = true;
    double noise = 0.1;            // half width of the additive uniform noise (linear, indicator)
    double bias_step = 0.5;        // b_a = bias_step * a
    std::size_t qmc_points = 1 << 16;
    std::size_t qmc_shifts = 8;
    std::uint64_t qmc_seed = 12345;
};

struct MarginalEstimate {
    double value = 0.0;
    double standard_error = 0.0;  // zero when exact
    bool exact = true;
};

class SyntheticEnv final : public Environment {
public:
    // Draws theta coordinates uniformly from [-1, 1].
    SyntheticEnv(SyntheticParams params, Rng& rng);
    SyntheticEnv(SyntheticParams params, std::vector<std::vector<double>> theta);

    std::size_t num_actions() const override { return params_.num_actions; }
    std::size_t dim() const override { return params_.dim; }
    RewardRange reward_range() const override { return range_; }
    Context sample_context(Rng& rng) const override;
    double sample_reward(const Context& x, Action a, Rng& rng) const override;
    std::optional<double> expected_reward(const Context& x, Action a) const override;
    std::optional<double> marginal_mean(Action a) const override { return marginal_[a].value; }

    const MarginalEstimate& marginal_estimate(Action a) const { return marginal_[a]; }
    // Softmax over all K actions.
    std::vector<double> propensity(const Context& x) const;
    const SyntheticParams& params() const { return params_; }
    const std::vector<std::vector<double>>& theta() const { return theta_; }
    double bias(Action a) const { return params_.bias_step * static_cast<double>(a); }
    // Marginal mean estimated with an independent randomisation seed.
    MarginalEstimate estimate_marginal(Action a, std::uint64_t qmc_seed) const;

private:
    void init();
    double dot(const Context& x, Action a) const;

    SyntheticParams params_;
    std::vector<std::vector<double>> theta_;
    std::vector<MarginalEstimate> marginal_;
    RewardRange range_;
};

// n records with actions drawn from the environment's propensities. Ids run
// from first_id.
LoggedDataset gen_logged_data(const SyntheticEnv& env, std::size_t n, Rng& rng, RecordId first_id = 0);

// ---------------------------------------------------------------------------
// Two user types (like / dislike videos), two ad placements.

struct Example1 {
    // rate[a][u]: action a (0 = below video, 1 = below image), user type u.
    static constexpr std::array<std::array<double, 2>, 2> rate{{{0.11, 0.01}, {0.14, 0.04}}};
    static constexpr std::array<std::array<int, 2>, 2> design{{{150, 50}, {50, 150}}};
    static constexpr double type_probability = 0.5;
    static constexpr int users = 10000;
    static constexpr int ab_test_users = 4000;
};

class Example1Env final : public Environment {
public:
    std::size_t num_actions() const override { return 2; }
    std::size_t dim() const override { return 1; }
    Context sample_context(Rng& rng) const override;
    double sample_reward(const Context& x, Action a, Rng& rng) const override;
    std::optional<double> expected_reward(const Context& x, Action a) const override;
    std::optional<double> marginal_mean(Action a) const override;
};

enum class Example1Strategy { optimal, empirical_average, causal_inference, ab_test, ucb_em };
Example1Strategy parse_example1_strategy(const std::string& name);
std::string to_string(Example1Strategy s);

enum class TieRule { lower_index, higher_index };

struct Example1Options {
    int users = Example1::users;
    int ab_test_users = Example1::ab_test_users;
    double ucb_beta = 0.2;
    TieRule empirical_tie = TieRule::higher_index;
    TieRule causal_tie = TieRule::lower_index;
};

// Logged clicks per (action, type) cell.
struct Example1Log {
    std::array<std::array<int, 2>, 2> clicks{};
};

Example1Log example1_draw_log(Rng& rng);
LoggedDataset example1_logged_dataset(const Example1Log& log);

// Action chosen by the offline strategies for a given log.
Action example1_empirical_choice(const Example1Log& log, TieRule tie);
Action example1_causal_choice(const Example1Log& log, TieRule tie);

// One episode; returns total clicks (revenue in dollars). `streams` supplies
// the log, user and learner randomness.
double example1_play(Example1Strategy strategy, RunStreams& streams, const Example1Options& options = {});
// UCB + exact matching through the generic framework (slow reference).
double example1_ucb_em_reference(RunStreams& streams, const Example1Options& options = {});

struct Example1Summary {
    Example1Strategy strategy;
    double mean = 0.0;
    double standard_error = 0.0;
    std::size_t episodes = 0;
};

std::vector<Example1Summary> example1_run(const std::vector<Example1Strategy>& strategies, std::size_t episodes,
                                          std::uint64_t seed, const Example1Options& options = {});

// ---------------------------------------------------------------------------
// CSV

struct IngestOptions {
    RewardRange range;
    // Selection-bias thinning: delete rows of top-ranked actions with reward 1
    // and of the other actions with reward 0.
    bool bias_injection = false;
    double bias_delete_probability = 0.9;
    std::size_t bias_top = 3;
    std::uint64_t bias_seed = 0;
    // Context columns (x_j names) to drop.
    std::vector<std::string> mask_columns;
};

LoggedDataset read_logged_csv(std::istream& in, const IngestOptions& options = {});
LoggedDataset read_logged_csv(const std::string& path, const IngestOptions& options = {});
void write_logged_csv(std::ostream& out, const LoggedDataset& data);
void write_logged_csv(const std::string& path, const LoggedDataset& data);

struct ReplayRow {
    std::vector<Action> candidates;
    Action chosen = 0;
    double reward = 0.0;
    Context context;
};

class ReplayCorpus {
public:
    ReplayCorpus() = default;
    ReplayCorpus(std::size_t num_actions, std::size_t dim) : num_actions_(num_actions), dim_(dim) {}

    void add(ReplayRow row);
    std::size_t size() const { return rows_.size(); }
    std::size_t num_actions() const { return num_actions_; }
    std::size_t dim() const { return dim_; }
    const ReplayRow& row(std::size_t i) const { return rows_[i]; }
    const std::vector<ReplayRow>& rows() const { return rows_; }

    // Shuffles under `seed` and splits off the first `fraction` as logged data
    // (propensity 1/|candidates|); the rest stays as the replay stream.
    std::pair<LoggedDataset, ReplayCorpus> split_logged(double fraction, std::uint64_t seed) const;

private:
    std::size_t num_actions_ = 0;
    std::size_t dim_ = 0;
    std::vector<ReplayRow> rows_;
};

ReplayCorpus read_replay_csv(std::istream& in, const IngestOptions& options = {});
ReplayCorpus read_replay_csv(const std::string& path, const IngestOptions& options = {});
void write_replay_csv(std::ostream& out, const ReplayCorpus& corpus);
void write_replay_csv(const std::string& path, const ReplayCorpus& corpus);

struct ReplayCorpusParams {
    std::size_t num_actions = 10;
    std::size_t dim = 6;
    std::size_t rows = 100000;
    std::size_t candidates_per_row = 0;  // 0: all actions
    bool contextual = true;              // click rates depend on context
};

// Click probability sigmoid(x'w_a + c_a) (or c_a alone when not contextual),
// uniform logging over each row's candidates.
ReplayCorpus make_synthetic_corpus(const ReplayCorpusParams& params, Rng& rng);

struct ReplayEvent {
    std::size_t row = 0;
    Context context;
    Action action = 0;
    double reward = 0.0;
};

class ReplayCursor {
public:
    explicit ReplayCursor(const ReplayCorpus& corpus) : corpus_(&corpus) {}
    bool exhausted() const { return next_ >= corpus_->size(); }
    std::size_t position() const { return next_; }
    // Next row; emits the event when the oracle's choice among the row's
    // candidates equals the logged action. Does not update the oracle.
    std::optional<ReplayEvent> step(const BanditOracle& oracle, Rng& rng);

private:
    const ReplayCorpus* corpus_;
    std::size_t next_ = 0;
};

struct ReplayTrace {
    std::vector<ReplayEvent> events;
    std::vector<std::size_t> virtual_plays;  // per accepted event
    std::size_t rows_read = 0;
    double total_reward() const;
};

// Interleaves virtual plays with the rejection-sampled stream; stops after
// `max_events` accepted events or when the corpus is exhausted.
ReplayTrace run_replay(BanditOracle& oracle, OfflineEvaluator& evaluator, ContextGenerator& contexts,
                       const ReplayCorpus& corpus, RunStreams& streams, std::size_t max_events,
                       std::size_t max_virtual_per_round = 10'000'000);

}  // namespace warmbandit
