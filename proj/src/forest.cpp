#include "warmbandit/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace warmbandit {

void TrainingData::push(std::span<const double> context, Action action, double outcome) {
    if (context.size() != dim) throw DataError("training context dimension mismatch");
    x.insert(x.end(), context.begin(), context.end());
    a.push_back(action);
    y.push_back(outcome);
}

ScheduleConstants schedule_constants(double alpha, std::size_t d, double pi_prime) {
    if (!(alpha > 0.0 && alpha <= 0.5)) throw ParameterError("alpha must lie in (0, 0.5]");
    if (d < 1) throw ParameterError("d must be at least 1");
    if (!(pi_prime > 0.0 && pi_prime <= 1.0)) throw ParameterError("pi_prime must lie in (0, 1]");
    ScheduleConstants c;
    c.A = (pi_prime / static_cast<double>(d)) * std::log(1.0 / (1.0 - alpha)) / std::log(1.0 / alpha);
    c.beta = 1.0 - 2.0 * c.A / (2.0 + 3.0 * c.A);
    c.exponent = 0.5 * (1.0 - c.beta);
    return c;
}

double epsilon_schedule(std::uint64_t t, double alpha, std::size_t d, double pi_prime) {
    if (t < 1) throw ParameterError("epsilon schedule needs t >= 1");
    const auto c = schedule_constants(alpha, d, pi_prime);
    return std::pow(static_cast<double>(t), -c.exponent);
}

void ForestParams::validate() const {
    if (!(alpha > 0.0 && alpha <= 0.5)) throw ParameterError("forest alpha must lie in (0, 0.5]");
    if (min_per_action < 1) throw ParameterError("forest min_per_action must be >= 1");
    if (num_trees < 1) throw ParameterError("forest needs at least one tree");
    if (subsample_exponent && !(*subsample_exponent > 0.0 && *subsample_exponent <= 1.0))
        throw ParameterError("subsample exponent must lie in (0, 1]");
}

// ---------------------------------------------------------------------------
// Tree

std::uint32_t Tree::leaf_of(std::span<const double> x) const {
    std::uint32_t n = 0;
    while (!nodes[n].is_leaf()) {
        const auto& node = nodes[n];
        n = x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right;
    }
    return n;
}

std::optional<double> Tree::leaf_estimate(std::span<const double> x, Action a) const {
    const auto& leaf = nodes[leaf_of(x)];
    if (a >= leaf.count.size() || leaf.count[a] == 0) return std::nullopt;
    return leaf.sum[a] / leaf.count[a];
}

std::string Tree::dump() const {
    std::ostringstream out;
    std::vector<std::uint32_t> stack{0};
    while (!stack.empty()) {
        const auto n = stack.back();
        stack.pop_back();
        const auto& node = nodes[n];
        out << node.depth << ' ';
        if (node.is_leaf()) {
            out << "leaf - -";
            for (auto c : node.count) out << ' ' << c;
        } else {
            out << "split " << node.feature << ' ' << format_double(node.threshold);
            stack.push_back(node.right);
            stack.push_back(node.left);
        }
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Forest

MultiActionForest::MultiActionForest(std::size_t num_actions, std::size_t dim, RewardRange range,
                                     ForestParams params, std::vector<Tree> trees,
                                     std::vector<double> action_sum, std::vector<std::uint64_t> action_count)
    : num_actions_(num_actions),
      dim_(dim),
      range_(range),
      params_(params),
      trees_(std::move(trees)),
      action_sum_(std::move(action_sum)),
      action_count_(std::move(action_count)) {}

double MultiActionForest::predict(std::span<const double> x, Action a) const {
    double total = 0.0;
    std::size_t present = 0;
    for (const auto& tree : trees_) {
        if (auto est = tree.leaf_estimate(x, a)) {
            total += *est;
            ++present;
        }
    }
    if (present > 0) return total / static_cast<double>(present);
    if (a < action_count_.size() && action_count_[a] > 0)
        return action_sum_[a] / static_cast<double>(action_count_[a]);
    return range_.midpoint();
}

std::string MultiActionForest::dump() const {
    std::ostringstream out;
    for (std::size_t b = 0; b < trees_.size(); ++b) out << "tree " << b << '\n' << trees_[b].dump();
    return out.str();
}

namespace {

struct SplitChoice {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
    std::uint32_t left_placement = 0;
};

class TreeGrower {
public:
    TreeGrower(const TrainingData& data, std::size_t k, const ForestParams& params, std::size_t mtry, Rng& rng)
        : data_(data), k_(k), params_(params), mtry_(mtry), rng_(rng) {}

    Tree grow(std::vector<std::uint32_t> placement, std::vector<std::uint32_t> estimation) {
        Tree tree;
        tree.placement_sample = placement;
        tree.estimation_sample = estimation;
        struct Pending {
            std::uint32_t node;
            std::vector<std::uint32_t> j, i;
        };
        tree.nodes.emplace_back();
        std::vector<Pending> stack;
        stack.push_back({0, std::move(placement), std::move(estimation)});
        while (!stack.empty()) {
            Pending p = std::move(stack.back());
            stack.pop_back();
            tree.nodes[p.node].placement_size = static_cast<std::uint32_t>(p.j.size());
            auto split = find_split(p.j, p.i);
            if (split.feature < 0) {
                make_leaf(tree.nodes[p.node], p.i);
                continue;
            }
            std::vector<std::uint32_t> jl, jr, il, ir;
            partition(p.j, split, jl, jr);
            partition(p.i, split, il, ir);
            const auto depth = tree.nodes[p.node].depth;
            const auto left = static_cast<std::uint32_t>(tree.nodes.size());
            tree.nodes.emplace_back();
            tree.nodes.emplace_back();
            auto& node = tree.nodes[p.node];
            node.feature = split.feature;
            node.threshold = split.threshold;
            node.left = left;
            node.right = left + 1;
            node.left_placement = static_cast<std::uint32_t>(jl.size());
            node.right_placement = static_cast<std::uint32_t>(jr.size());
            tree.nodes[left].depth = depth + 1;
            tree.nodes[left + 1].depth = depth + 1;
            stack.push_back({left + 1, std::move(jr), std::move(ir)});
            stack.push_back({left, std::move(jl), std::move(il)});
        }
        return tree;
    }

private:
    double value(std::uint32_t row, std::size_t f) const { return data_.x[row * data_.dim + f]; }

    void partition(const std::vector<std::uint32_t>& rows, const SplitChoice& s, std::vector<std::uint32_t>& l,
                   std::vector<std::uint32_t>& r) const {
        for (auto row : rows) (value(row, static_cast<std::size_t>(s.feature)) <= s.threshold ? l : r).push_back(row);
    }

    void make_leaf(TreeNode& node, const std::vector<std::uint32_t>& est) const {
        node.feature = -1;
        node.sum.assign(k_, 0.0);
        node.count.assign(k_, 0);
        node.members = est;
        for (auto row : est) {
            node.sum[data_.a[row]] += data_.y[row];
            ++node.count[data_.a[row]];
        }
        node.forced = std::any_of(node.count.begin(), node.count.end(),
                                  [&](std::uint32_t c) { return c < params_.min_per_action; });
    }

    SplitChoice find_split(const std::vector<std::uint32_t>& j, const std::vector<std::uint32_t>& i) {
        SplitChoice best;
        const std::size_t m = params_.min_per_action;
        if (i.size() < 2 * m * k_ || j.size() < 2) return best;

        // Random subset of features (partial Fisher-Yates).
        std::vector<std::size_t> features(data_.dim);
        std::iota(features.begin(), features.end(), 0);
        const std::size_t take = std::min(mtry_, data_.dim);
        for (std::size_t q = 0; q < take; ++q) {
            std::uniform_int_distribution<std::size_t> pick(q, data_.dim - 1);
            std::swap(features[q], features[pick(rng_)]);
        }

        std::vector<std::uint32_t> est_total(k_, 0);
        for (auto row : i) ++est_total[data_.a[row]];

        double total_sum = 0.0;
        for (auto row : j) total_sum += data_.y[row];
        const double n = static_cast<double>(j.size());
        const double base = total_sum * total_sum / n;
        const double min_side = params_.alpha * n;

        std::vector<std::uint32_t> js, is;
        std::vector<std::uint32_t> est_left(k_);
        for (std::size_t q = 0; q < take; ++q) {
            const std::size_t f = features[q];
            js = j;
            is = i;
            auto by_f = [&](std::uint32_t r1, std::uint32_t r2) { return value(r1, f) < value(r2, f); };
            std::sort(js.begin(), js.end(), by_f);
            std::sort(is.begin(), is.end(), by_f);
            std::fill(est_left.begin(), est_left.end(), 0);
            std::size_t ip = 0;
            double left_sum = 0.0;
            for (std::size_t p = 1; p < js.size(); ++p) {
                left_sum += data_.y[js[p - 1]];
                const double lo = value(js[p - 1], f);
                const double hi = value(js[p], f);
                if (!(lo < hi)) continue;
                const double nl = static_cast<double>(p);
                const double nr = n - nl;
                if (nl < min_side || nr < min_side) continue;
                double tau = 0.5 * (lo + hi);
                if (!(tau < hi)) tau = lo;
                while (ip < is.size() && value(is[ip], f) <= tau) {
                    ++est_left[data_.a[is[ip]]];
                    ++ip;
                }
                bool legal = true;
                for (std::size_t a = 0; a < k_ && legal; ++a)
                    legal = est_left[a] >= m && est_total[a] - est_left[a] >= m;
                if (!legal) continue;
                const double right_sum = total_sum - left_sum;
                const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr - base;
                if (gain > best.gain + 1e-12) {
                    best.feature = static_cast<int>(f);
                    best.threshold = tau;
                    best.gain = gain;
                    best.left_placement = static_cast<std::uint32_t>(p);
                }
            }
        }
        return best;
    }

    const TrainingData& data_;
    std::size_t k_;
    const ForestParams& params_;
    std::size_t mtry_;
    Rng& rng_;
};

}  // namespace

MultiActionForest train_forest(const TrainingData& data, std::size_t num_actions, const ForestParams& params,
                               RewardRange range, Rng& rng) {
    params.validate();
    if (data.size() == 0) throw ContractError("train_forest needs at least one sample");
    if (num_actions == 0) throw ParameterError("train_forest needs K >= 1");
    const std::size_t n = data.size();
    const double exponent = params.subsample_exponent
                                ? *params.subsample_exponent
                                : schedule_constants(params.alpha, std::max<std::size_t>(data.dim, 1), params.pi_prime).beta;
    std::size_t s = static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(n), exponent) - 1e-9));
    s = std::clamp<std::size_t>(s, 1, n);
    const std::size_t mtry = params.features_per_node > 0
                                 ? params.features_per_node
                                 : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(data.dim))));

    std::vector<double> action_sum(num_actions, 0.0);
    std::vector<std::uint64_t> action_count(num_actions, 0);
    for (std::size_t r = 0; r < n; ++r) {
        if (data.a[r] >= num_actions) throw DataError("training action out of range");
        action_sum[data.a[r]] += data.y[r];
        ++action_count[data.a[r]];
    }

    std::vector<Tree> trees;
    trees.reserve(params.num_trees);
    std::vector<std::uint32_t> perm(n);
    for (std::size_t b = 0; b < params.num_trees; ++b) {
        std::iota(perm.begin(), perm.end(), 0u);
        for (std::size_t q = 0; q < s; ++q) {
            std::uniform_int_distribution<std::size_t> pick(q, n - 1);
            std::swap(perm[q], perm[pick(rng)]);
        }
        std::vector<std::uint32_t> placement, estimation;
        if (params.honest) {
            placement.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(s / 2));
            estimation.assign(perm.begin() + static_cast<std::ptrdiff_t>(s / 2), perm.begin() + static_cast<std::ptrdiff_t>(s));
        } else {
            placement.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(s));
            estimation = placement;
        }
        TreeGrower grower(data, num_actions, params, mtry, rng);
        trees.push_back(grower.grow(std::move(placement), std::move(estimation)));
    }
    return MultiActionForest(num_actions, data.dim, range, params, std::move(trees), std::move(action_sum),
                             std::move(action_count));
}

}  // namespace warmbandit
