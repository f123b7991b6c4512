// Online bandit oracles: A/B testing, UCB, Thompson sampling (Gaussian and
// Bernoulli), LinUCB and the epsilon-decreasing multi-action forest.
//
// Ties are broken towards the lowest action index everywhere.
#pragma once

#include "warmbandit/core.hpp"
#include "warmbandit/forest.hpp"

#include <Eigen/Dense>

#include <functional>
#include <memory>

namespace warmbandit {

struct MeanCountState {
    std::vector<double> mean;
    std::vector<std::uint64_t> count;

    explicit MeanCountState(std::size_t k = 0) : mean(k, 0.0), count(k, 0) {}
    void update(Action a, double y);
    std::uint64_t total() const;
    std::string digest() const;
};

// Plays every candidate with equal probability; keeps running means for
// estimating effects after the fact.
class ABOracle final : public BanditOracle {
public:
    explicit ABOracle(std::size_t k);

    std::size_t num_actions() const override { return state_.mean.size(); }
    Action play_among(const Context& x, std::span<const Action> candidates, Rng& rng) const override;
    void update(const Context& x, Action a, double y) override;
    std::string digest() const override { return state_.digest(); }
    const MeanCountState& state() const { return state_; }

private:
    MeanCountState state_;
};

// mean_a + beta * sqrt(2 ln(sum n) / n_a); unplayed arms first.
class UCBOracle final : public BanditOracle {
public:
    explicit UCBOracle(std::size_t k, double beta = 1.0);

    std::size_t num_actions() const override { return state_.mean.size(); }
    Action play_among(const Context& x, std::span<const Action> candidates, Rng& rng) const override;
    void update(const Context& x, Action a, double y) override;
    std::string digest() const override { return state_.digest(); }

    const MeanCountState& state() const { return state_; }
    MeanCountState& mutable_state() { return state_; }
    double beta() const { return beta_; }
    // Index of arm a under the current statistics (infinite when unplayed).
    double index(Action a) const;

private:
    MeanCountState state_;
    double beta_;
};

// Samples N(mean_a, beta^2/(n_a+1)) per arm.
class TSGaussOracle final : public BanditOracle {
public:
    explicit TSGaussOracle(std::size_t k, double beta = 1.0);

    std::size_t num_actions() const override { return state_.mean.size(); }
    Action play_among(const Context& x, std::span<const Action> candidates, Rng& rng) const override;
    void update(const Context& x, Action a, double y) override;
    std::string digest() const override { return state_.digest(); }
    const MeanCountState& state() const { return state_; }
    MeanCountState& mutable_state() { return state_; }

private:
    MeanCountState state_;
    double beta_;
};

// Samples Beta(s_a, f_a) per arm; rewards must be 0 or 1.
class TSBernOracle final : public BanditOracle {
public:
    explicit TSBernOracle(std::size_t k, double prior_success = 1.0, double prior_failure = 1.0);

    std::size_t num_actions() const override { return success_.size(); }
    Action play_among(const Context& x, std::span<const Action> candidates, Rng& rng) const override;
    void update(const Context& x, Action a, double y) override;
    std::string digest() const override;

    std::vector<double>& successes() { return success_; }
    std::vector<double>& failures() { return failure_; }

private:
    std::vector<double> success_;
    std::vector<double> failure_;
};

double sample_beta(double a, double b, Rng& rng);

// phi(x, a) for the linear oracles.
class FeatureMap {
public:
    virtual ~FeatureMap() = default;
    virtual std::size_t dim() const = 0;
    virtual Eigen::VectorXd operator()(const Context& x, Action a) const = 0;
};

// K blocks of (x, 1); block a holds the features of action a.
class BlockOneHotFeatureMap final : public FeatureMap {
public:
    BlockOneHotFeatureMap(std::size_t k, std::size_t d) : k_(k), d_(d) {}
    std::size_t dim() const override { return k_ * (d_ + 1); }
    Eigen::VectorXd operator()(const Context& x, Action a) const override;

private:
    std::size_t k_;
    std::size_t d_;
};

// Ridge statistics; V is shared with the linear-regression evaluator.
struct RidgeState {
    Eigen::MatrixXd V;
    Eigen::VectorXd b;
    std::uint64_t t = 1;
    std::uint64_t version = 0;  // bumped on every change of V or b

    explicit RidgeState(std::size_t dim = 0)
        : V(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim))),
          b(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim))) {}
    void add_outer(const Eigen::VectorXd& phi);
};

using BetaSchedule = std::function<double(std::uint64_t t)>;
// sqrt(2 d' (1 + 2 ln max(t, 2))).
BetaSchedule default_linucb_beta(std::size_t feature_dim);
BetaSchedule constant_beta(double beta);

class LinUCBOracle final : public BanditOracle {
public:
    LinUCBOracle(std::size_t k, std::shared_ptr<const FeatureMap> features, BetaSchedule beta = {});

    std::size_t num_actions() const override { return k_; }
    Action play_among(const Context& x, std::span<const Action> candidates, Rng& rng) const override;
    void update(const Context& x, Action a, double y) override;
    std::string digest() const override;

    // Upper confidence score of (x, a) under the current state.
    double score(const Context& x, Action a) const;
    const std::shared_ptr<RidgeState>& ridge() const { return ridge_; }
    const FeatureMap& features() const { return *features_; }
    std::shared_ptr<const FeatureMap> feature_map() const { return features_; }
    Eigen::VectorXd theta() const;
    Eigen::MatrixXd inverse() const;

private:
    void refresh() const;

    std::size_t k_;
    std::shared_ptr<const FeatureMap> features_;
    BetaSchedule beta_;
    std::shared_ptr<RidgeState> ridge_;
    // Factorisation cache keyed on ridge_->version; not part of the state.
    mutable Eigen::LLT<Eigen::MatrixXd> llt_;
    mutable Eigen::VectorXd theta_;
    mutable std::uint64_t cached_version_ = static_cast<std::uint64_t>(-1);
};

struct ExplorationSchedule {
    enum class Kind { theorem, power, constant };
    Kind kind = Kind::theorem;
    // theorem: t^{-(1-beta)/2} with beta from (alpha, d, pi_prime)
    double alpha = 0.2;
    std::size_t d = 1;
    double pi_prime = 1.0;
    // power: min(1, scale * t^{-exponent}); constant: value
    double scale = 1.0;
    double exponent = 0.5;
    double value = 0.1;

    double operator()(std::uint64_t t) const;
};

struct FstParams {
    ForestParams forest;
    std::size_t retrain_every = 50;
    ExplorationSchedule epsilon;
    RewardRange range;
    std::uint64_t seed = 0;  // substreams for each retrain are derived from this
};

class FstOracle final : public BanditOracle {
public:
    FstOracle(std::size_t k, std::size_t d, FstParams params);

    std::size_t num_actions() const override { return k_; }
    Action play_among(const Context& x, std::span<const Action> candidates, Rng& rng) const override;
    void update(const Context& x, Action a, double y) override;
    std::string digest() const override;

    std::uint64_t round() const { return t_; }
    std::size_t data_size() const { return data_.size(); }
    std::size_t retrain_count() const { return retrains_; }
    const std::optional<MultiActionForest>& forest() const { return forest_; }
    // Replaces the forest; used to inject fixtures.
    void set_forest(MultiActionForest forest) { forest_ = std::move(forest); }
    double epsilon() const { return params_.epsilon(t_); }

private:
    std::size_t k_;
    FstParams params_;
    TrainingData data_;
    std::optional<MultiActionForest> forest_;
    std::uint64_t t_ = 1;
    std::size_t retrains_ = 0;
};

}  // namespace warmbandit
