// Multi-action regression forest.
//
// Each tree is grown on a uniform subsample of size ceil(n^subsample_exponent).
// In honest (double-sample) mode the subsample is halved: the first half places
// splits, the second half fills the leaves. Splits are axis aligned, chosen to
// maximise pooled-outcome variance reduction over the split-placement half, and
// are legal only if
//   * each child keeps at least alpha * |node| split-placement samples, and
//   * each child keeps at least m estimation samples of every action.
// A node with fewer than 2*m*K estimation samples is a leaf.
//
// A leaf stores, per action, the outcome sum and count of its estimation
// samples; the tree's estimate for (x, a) is sum/count in the leaf holding x.
#pragma once

#include "warmbandit/core.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace warmbandit {

// Row-major training table.
struct TrainingData {
    std::size_t dim = 0;
    std::vector<double> x;
    std::vector<Action> a;
    std::vector<double> y;

    explicit TrainingData(std::size_t d = 0) : dim(d) {}
    std::size_t size() const { return a.size(); }
    std::span<const double> row(std::size_t i) const { return {x.data() + i * dim, dim}; }
    void push(std::span<const double> context, Action action, double outcome);
};

struct ScheduleConstants {
    double A = 0.0;
    double beta = 0.0;
    double exponent = 0.0;  // (1 - beta) / 2
};

// A = (pi'/d) ln(1/(1-alpha)) / ln(1/alpha), beta = 1 - 2A/(2+3A).
ScheduleConstants schedule_constants(double alpha, std::size_t d, double pi_prime);
// t^{-(1-beta)/2}.
double epsilon_schedule(std::uint64_t t, double alpha, std::size_t d, double pi_prime);

struct ForestParams {
    std::size_t num_trees = 100;
    double alpha = 0.2;
    std::size_t min_per_action = 5;
    // Defaults to the exploration schedule's beta for (alpha, d, pi_prime).
    std::optional<double> subsample_exponent;
    double pi_prime = 1.0;
    bool honest = true;
    // Features scanned per node; 0 means ceil(sqrt(d)).
    std::size_t features_per_node = 0;

    void validate() const;
};

struct TreeNode {
    // Internal node fields.
    int feature = -1;
    double threshold = 0.0;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    std::uint32_t depth = 0;
    // Split-placement sample sizes (audit data).
    std::uint32_t placement_size = 0;
    std::uint32_t left_placement = 0;
    std::uint32_t right_placement = 0;
    // Leaf fields.
    std::vector<double> sum;
    std::vector<std::uint32_t> count;
    std::vector<std::uint32_t> members;  // indices into the training data
    bool forced = false;                 // leaf violates the per-action minimum (no legal split)

    bool is_leaf() const { return feature < 0; }
};

class Tree {
public:
    std::vector<TreeNode> nodes;
    std::vector<std::uint32_t> placement_sample;
    std::vector<std::uint32_t> estimation_sample;

    std::uint32_t leaf_of(std::span<const double> x) const;
    std::optional<double> leaf_estimate(std::span<const double> x, Action a) const;
    // Deterministic text form: one line per node in preorder.
    std::string dump() const;
};

class MultiActionForest {
public:
    MultiActionForest() = default;
    MultiActionForest(std::size_t num_actions, std::size_t dim, RewardRange range, ForestParams params,
                      std::vector<Tree> trees, std::vector<double> action_sum,
                      std::vector<std::uint64_t> action_count);

    std::size_t num_actions() const { return num_actions_; }
    std::size_t dim() const { return dim_; }
    std::size_t num_trees() const { return trees_.size(); }
    const Tree& tree(std::size_t b) const { return trees_[b]; }
    const ForestParams& params() const { return params_; }

    // Average of the present per-tree estimates; falls back to the action's
    // global training mean, then to the reward-range midpoint.
    double predict(std::span<const double> x, Action a) const;
    std::string dump() const;

private:
    std::size_t num_actions_ = 0;
    std::size_t dim_ = 0;
    RewardRange range_;
    ForestParams params_;
    std::vector<Tree> trees_;
    std::vector<double> action_sum_;
    std::vector<std::uint64_t> action_count_;
};

MultiActionForest train_forest(const TrainingData& data, std::size_t num_actions, const ForestParams& params,
                               RewardRange range, Rng& rng);

}  // namespace warmbandit
