// Small builders shared by the unit tests.
#pragma once

#include "warmbandit/core.hpp"
#include "warmbandit/forest.hpp"

namespace fixtures {

using namespace warmbandit;

inline LoggedRecord rec(RecordId id, Action a, Context x, double y, std::optional<double> p = std::nullopt) {
    LoggedRecord r;
    r.id = id;
    r.action = a;
    r.context = std::move(x);
    r.outcome = y;
    r.propensity_chosen = p;
    return r;
}

inline TreeNode leaf(std::vector<double> sum, std::vector<std::uint32_t> count, std::uint32_t depth = 0) {
    TreeNode n;
    n.sum = std::move(sum);
    n.count = std::move(count);
    n.depth = depth;
    return n;
}

// Stump on x0: left (x0 <= threshold) and right leaves.
inline Tree stump(double threshold, TreeNode left, TreeNode right) {
    TreeNode root;
    root.feature = 0;
    root.threshold = threshold;
    root.left = 1;
    root.right = 2;
    left.depth = right.depth = 1;
    Tree t;
    t.nodes = {root, std::move(left), std::move(right)};
    return t;
}

inline Tree single_leaf(TreeNode l) {
    Tree t;
    t.nodes = {std::move(l)};
    return t;
}

inline MultiActionForest forest_of(std::size_t k, std::size_t d, std::vector<Tree> trees,
                                   std::vector<double> action_sum = {}, std::vector<std::uint64_t> action_count = {}) {
    if (action_sum.empty()) action_sum.assign(k, 0.0);
    if (action_count.empty()) action_count.assign(k, 0);
    return MultiActionForest(k, d, {}, {}, std::move(trees), std::move(action_sum), std::move(action_count));
}

}  // namespace fixtures
