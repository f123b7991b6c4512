// Offline evaluators. Each one turns logged data into synthetic outcomes for
// (x, a) queries and returns nothing once it has no more to give.
#pragma once

#include "warmbandit/core.hpp"
#include "warmbandit/forest.hpp"
#include "warmbandit/oracles.hpp"

#include <functional>
#include <map>
#include <memory>

namespace warmbandit {

class NullEvaluator final : public OfflineEvaluator {
public:
    std::optional<double> get_outcome(const Context&, Action, Rng&) override { return std::nullopt; }
};

// Sticky per-action stop flags.
class StopFlags {
public:
    explicit StopFlags(std::size_t k = 0) : flags_(k, 0) {}
    bool stopped(Action a) const { return flags_.at(a) != 0; }
    void stop(Action a) { flags_.at(a) = 1; }
    std::size_t size() const { return flags_.size(); }

private:
    std::vector<char> flags_;
};

class ExactMatchingEvaluator final : public OfflineEvaluator {
public:
    explicit ExactMatchingEvaluator(LoggedDataset data);

    std::optional<double> get_outcome(const Context& x, Action a, Rng& rng) override;
    const LoggedDataset& data() const { return data_; }
    const StopFlags& flags() const { return flags_; }

private:
    LoggedDataset data_;
    StopFlags flags_;
};

// p(0..K-2 | x) for a query context.
using PropensityModel = std::function<std::vector<double>(const Context&)>;

// Finite pivot set Q. Either an explicit list or a regular grid over
// [0,1]^{K-1}; both stratify to the nearest pivot with lexicographic ties.
class PivotSet {
public:
    static PivotSet grid(std::size_t dim, double spacing = 0.1);
    static PivotSet explicit_list(std::vector<std::vector<double>> pivots);

    std::size_t dim() const { return dim_; }
    // Index of the nearest pivot.
    std::size_t stratify(std::span<const double> p) const;
    std::vector<double> pivot(std::size_t index) const;
    std::size_t size() const;

private:
    std::size_t dim_ = 0;
    double spacing_ = 0.0;
    std::size_t steps_ = 0;  // grid points per coordinate minus one
    std::vector<std::vector<double>> explicit_;
};

// Nearest pivot by Euclidean distance; ties go to the lexicographically
// smallest pivot. Linear scan reference used by PivotSet::explicit_list.
std::vector<double> psm_stratify(std::span<const double> p, const std::vector<std::vector<double>>& pivots);

// p(a|x) = count(a, x) / count(x) over bitwise-equal contexts.
class FrequencyPropensity {
public:
    explicit FrequencyPropensity(const LoggedDataset& data);
    // K-1 leading entries; nullopt for a context never seen in the log.
    std::optional<std::vector<double>> operator()(const Context& x) const;

private:
    std::size_t k_;
    std::unordered_map<std::string, std::vector<std::uint64_t>> counts_;
};

class PSMEvaluator final : public OfflineEvaluator {
public:
    // Records must carry propensity vectors; `model` supplies p for queries.
    PSMEvaluator(LoggedDataset data, PropensityModel model, PivotSet pivots);
    // Frequency-estimated propensities for both records and queries.
    static PSMEvaluator with_frequency_estimator(LoggedDataset data, PivotSet pivots);

    std::optional<double> get_outcome(const Context& x, Action a, Rng& rng) override;
    const StopFlags& flags() const { return flags_; }
    const LoggedDataset& data() const { return data_; }
    std::size_t stratum_of_slot(std::size_t slot) const { return slot_stratum_[slot]; }

private:
    struct Empty {};
    PSMEvaluator(Empty, LoggedDataset data, PivotSet pivots);
    void build_index(const std::function<std::optional<std::vector<double>>(std::size_t)>& propensity_of_slot);

    LoggedDataset data_;
    std::function<std::optional<std::vector<double>>(const Context&)> model_;
    PivotSet pivots_;
    StopFlags flags_;
    BucketIndex index_;  // bucket = stratum * K + action
    std::vector<std::size_t> slot_stratum_;
};

class IPSWEvaluator final : public OfflineEvaluator {
public:
    explicit IPSWEvaluator(const LoggedDataset& data);

    std::optional<double> get_outcome(const Context& x, Action a, Rng& rng) override;
    // Weighted mean; nullopt for actions with no records.
    std::optional<double> mean(Action a) const { return mean_[a]; }
    double initial_budget(Action a) const { return initial_budget_[a]; }
    double budget(Action a) const { return budget_[a]; }

private:
    std::vector<std::optional<double>> mean_;
    std::vector<double> initial_budget_;
    std::vector<double> budget_;
};

// Ridge regression on the log, sharing the online confidence matrix V with
// a LinUCB oracle. Emits phi' theta_hat while the offline confidence width at
// phi is narrower than the online one after adding phi.
class LinearRegressionEvaluator final : public OfflineEvaluator {
public:
    LinearRegressionEvaluator(const LoggedDataset& data, std::shared_ptr<const FeatureMap> features,
                              std::shared_ptr<RidgeState> online);

    std::optional<double> get_outcome(const Context& x, Action a, Rng& rng) override;
    const Eigen::MatrixXd& v_hat() const { return v_hat_; }
    const Eigen::VectorXd& theta_hat() const { return theta_hat_; }
    // Offline and online widths phi' V_hat^{-1} phi and phi' (V + phi phi')^{-1} phi.
    double offline_width(const Eigen::VectorXd& phi) const;
    double online_width(const Eigen::VectorXd& phi) const;

private:
    std::shared_ptr<const FeatureMap> features_;
    std::shared_ptr<RidgeState> online_;
    Eigen::MatrixXd v_hat_;
    Eigen::LLT<Eigen::MatrixXd> v_hat_llt_;
    Eigen::VectorXd theta_hat_;
};

// Matching on forest: a uniformly chosen tree's leaf plays the role of the
// exact-match cell. Each logged record is returned at most once.
class MatchingOnForestEvaluator final : public OfflineEvaluator {
public:
    // Trains a forest on the log (record slots become training indices).
    MatchingOnForestEvaluator(LoggedDataset data, const ForestParams& params, Rng& rng);
    // Uses a given forest; every record is routed down every tree.
    MatchingOnForestEvaluator(LoggedDataset data, MultiActionForest forest);

    std::optional<double> get_outcome(const Context& x, Action a, Rng& rng) override;
    // Live record ids in x's leaf of tree b with action a.
    std::vector<RecordId> leaf_members(std::size_t b, const Context& x, Action a) const;
    const MultiActionForest& forest() const { return forest_; }
    const LoggedDataset& data() const { return data_; }

private:
    void build_index();
    std::size_t bucket(std::size_t b, const Context& x, Action a) const;

    LoggedDataset data_;
    MultiActionForest forest_;
    std::vector<BucketIndex> index_;  // per tree, bucket = leaf * K + action
};

// Raw per-action logged outcomes, contexts ignored; each used once.
class HistoricalAverageEvaluator final : public OfflineEvaluator {
public:
    explicit HistoricalAverageEvaluator(LoggedDataset data);

    std::optional<double> get_outcome(const Context& x, Action a, Rng& rng) override;
    std::size_t remaining(Action a) const { return index_.members(a).size(); }

private:
    LoggedDataset data_;
    StopFlags flags_;
    BucketIndex index_;  // bucket = action
};

TrainingData training_data_from(const LoggedDataset& data);

}  // namespace warmbandit
