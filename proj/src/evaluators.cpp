#include "warmbandit/evaluators.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace warmbandit {

namespace {

std::size_t pick_uniform(std::span<const std::size_t> slots, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, slots.size() - 1);
    return slots[pick(rng)];
}

std::string context_key(const Context& x) {
    std::string key(x.size() * sizeof(double), '\0');
    if (!x.empty()) std::memcpy(key.data(), x.data(), key.size());
    return key;
}

}  // namespace

TrainingData training_data_from(const LoggedDataset& data) {
    TrainingData out(data.dim());
    for (std::size_t s = 0; s < data.total_size(); ++s) {
        const auto& r = data.at_slot(s);
        out.push(r.context, r.action, r.outcome);
    }
    return out;
}

// ---------------------------------------------------------------------------

ExactMatchingEvaluator::ExactMatchingEvaluator(LoggedDataset data)
    : data_(std::move(data)), flags_(data_.num_actions()) {}

std::optional<double> ExactMatchingEvaluator::get_outcome(const Context& x, Action a, Rng& rng) {
    if (a >= data_.num_actions()) throw ContractError("evaluator action out of range");
    if (flags_.stopped(a)) return std::nullopt;
    const auto slots = data_.exact_slots(x, a);
    if (slots.empty()) {
        flags_.stop(a);
        return std::nullopt;
    }
    return data_.sample_and_remove_slot(slots, rng).outcome;
}

// ---------------------------------------------------------------------------
// Propensity score matching

std::vector<double> psm_stratify(std::span<const double> p, const std::vector<std::vector<double>>& pivots) {
    if (pivots.empty()) throw ParameterError("pivot set is empty");
    const std::vector<double>* best = nullptr;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& q : pivots) {
        if (q.size() != p.size()) throw ContractError("pivot dimension mismatch");
        double d = 0.0;
        for (std::size_t j = 0; j < q.size(); ++j) d += (p[j] - q[j]) * (p[j] - q[j]);
        if (d < best_d || (d == best_d && q < *best)) {
            best = &q;
            best_d = d;
        }
    }
    return *best;
}

PivotSet PivotSet::grid(std::size_t dim, double spacing) {
    if (!(spacing > 0.0 && spacing <= 1.0)) throw ParameterError("pivot spacing must lie in (0,1]");
    PivotSet s;
    s.dim_ = dim;
    s.spacing_ = spacing;
    s.steps_ = static_cast<std::size_t>(std::floor(1.0 / spacing + 1e-9));
    return s;
}

PivotSet PivotSet::explicit_list(std::vector<std::vector<double>> pivots) {
    if (pivots.empty()) throw ParameterError("pivot set is empty");
    PivotSet s;
    s.dim_ = pivots.front().size();
    for (const auto& q : pivots) {
        if (q.size() != s.dim_) throw ParameterError("pivots must share one dimension");
        for (double v : q)
            if (!std::isfinite(v)) throw ParameterError("pivots must be finite");
    }
    s.explicit_ = std::move(pivots);
    return s;
}

std::size_t PivotSet::size() const {
    if (!explicit_.empty()) return explicit_.size();
    std::size_t n = 1;
    for (std::size_t j = 0; j < dim_; ++j) n *= steps_ + 1;
    return n;
}

std::vector<double> PivotSet::pivot(std::size_t index) const {
    if (!explicit_.empty()) return explicit_.at(index);
    std::vector<double> q(dim_);
    for (std::size_t j = dim_; j-- > 0;) {
        q[j] = static_cast<double>(index % (steps_ + 1)) * spacing_;
        index /= steps_ + 1;
    }
    return q;
}

std::size_t PivotSet::stratify(std::span<const double> p) const {
    if (p.size() != dim_) throw ContractError("propensity vector dimension mismatch");
    if (!explicit_.empty()) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < explicit_.size(); ++i) {
            double d = 0.0;
            for (std::size_t j = 0; j < dim_; ++j) d += (p[j] - explicit_[i][j]) * (p[j] - explicit_[i][j]);
            if (d < best_d || (d == best_d && explicit_[i] < explicit_[best])) {
                best = i;
                best_d = d;
            }
        }
        return best;
    }
    // The squared distance separates over coordinates, so the nearest grid
    // point is the per-coordinate nearest; ties take the lower value.
    std::size_t index = 0;
    for (std::size_t j = 0; j < dim_; ++j) {
        const double v = std::clamp(p[j], 0.0, 1.0);
        auto lo = static_cast<std::size_t>(std::floor(v / spacing_));
        lo = std::min(lo, steps_);
        std::size_t choice = lo;
        if (lo < steps_) {
            const double dl = std::abs(p[j] - static_cast<double>(lo) * spacing_);
            const double dh = std::abs(p[j] - static_cast<double>(lo + 1) * spacing_);
            if (dh < dl) choice = lo + 1;
        }
        if (lo > 0) {
            const double dl = std::abs(p[j] - static_cast<double>(choice) * spacing_);
            const double dm = std::abs(p[j] - static_cast<double>(lo - 1) * spacing_);
            if (dm <= dl) choice = lo - 1;
        }
        index = index * (steps_ + 1) + choice;
    }
    return index;
}

FrequencyPropensity::FrequencyPropensity(const LoggedDataset& data) : k_(data.num_actions()) {
    for (std::size_t s = 0; s < data.total_size(); ++s) {
        if (!data.slot_alive(s)) continue;
        const auto& r = data.at_slot(s);
        auto& c = counts_[context_key(r.context)];
        if (c.empty()) c.assign(k_, 0);
        ++c[r.action];
    }
}

std::optional<std::vector<double>> FrequencyPropensity::operator()(const Context& x) const {
    auto it = counts_.find(context_key(x));
    if (it == counts_.end()) return std::nullopt;
    std::uint64_t total = 0;
    for (auto c : it->second) total += c;
    std::vector<double> p(k_ - 1);
    for (std::size_t a = 0; a + 1 < k_; ++a) p[a] = static_cast<double>(it->second[a]) / static_cast<double>(total);
    return p;
}

PSMEvaluator::PSMEvaluator(Empty, LoggedDataset data, PivotSet pivots)
    : data_(std::move(data)), pivots_(std::move(pivots)), flags_(data_.num_actions()) {
    if (pivots_.dim() + 1 != data_.num_actions())
        throw ParameterError("pivot dimension must be K-1");
}

PSMEvaluator::PSMEvaluator(LoggedDataset data, PropensityModel model, PivotSet pivots)
    : PSMEvaluator(Empty{}, std::move(data), std::move(pivots)) {
    if (!model) throw ParameterError("PSM needs a propensity model");
    model_ = [m = std::move(model)](const Context& x) -> std::optional<std::vector<double>> { return m(x); };
    build_index([this](std::size_t slot) { return data_.at_slot(slot).propensity_vector; });
}

PSMEvaluator PSMEvaluator::with_frequency_estimator(LoggedDataset data, PivotSet pivots) {
    PSMEvaluator out(Empty{}, std::move(data), std::move(pivots));
    auto estimator = std::make_shared<FrequencyPropensity>(out.data_);
    out.model_ = [estimator](const Context& x) { return (*estimator)(x); };
    out.build_index([&out](std::size_t slot) { return out.model_(out.data_.at_slot(slot).context); });
    return out;
}

void PSMEvaluator::build_index(
    const std::function<std::optional<std::vector<double>>(std::size_t)>& propensity_of_slot) {
    const std::size_t k = data_.num_actions();
    slot_stratum_.assign(data_.total_size(), 0);
    for (std::size_t s = 0; s < data_.total_size(); ++s) {
        if (!data_.slot_alive(s)) continue;
        const auto p = propensity_of_slot(s);
        if (!p) throw DataError("PSM record " + std::to_string(data_.at_slot(s).id) + " has no propensity vector");
        const std::size_t stratum = pivots_.stratify(*p);
        slot_stratum_[s] = stratum;
        index_.insert(s, stratum * k + data_.at_slot(s).action);
    }
}

std::optional<double> PSMEvaluator::get_outcome(const Context& x, Action a, Rng& rng) {
    const std::size_t k = data_.num_actions();
    if (a >= k) throw ContractError("evaluator action out of range");
    if (flags_.stopped(a)) return std::nullopt;
    const auto p = model_(x);
    if (!p) {
        flags_.stop(a);
        return std::nullopt;
    }
    const auto members = index_.members(pivots_.stratify(*p) * k + a);
    if (members.empty()) {
        flags_.stop(a);
        return std::nullopt;
    }
    const std::size_t slot = pick_uniform(members, rng);
    index_.erase(slot);
    const double y = data_.at_slot(slot).outcome;
    data_.remove(data_.at_slot(slot).id);
    return y;
}

// ---------------------------------------------------------------------------

IPSWEvaluator::IPSWEvaluator(const LoggedDataset& data)
    : mean_(data.num_actions()), initial_budget_(data.num_actions(), 0.0), budget_(data.num_actions(), 0.0) {
    const std::size_t k = data.num_actions();
    std::vector<double> sw(k, 0.0), swy(k, 0.0), sw2(k, 0.0);
    for (std::size_t s = 0; s < data.total_size(); ++s) {
        if (!data.slot_alive(s)) continue;
        const auto& r = data.at_slot(s);
        if (!r.propensity_chosen || !(*r.propensity_chosen > 0.0))
            throw DataError("IPSW record " + std::to_string(r.id) + " needs a positive propensity");
        const double w = 1.0 / *r.propensity_chosen;
        sw[r.action] += w;
        swy[r.action] += w * r.outcome;
        sw2[r.action] += w * w;
    }
    for (std::size_t a = 0; a < k; ++a) {
        if (sw[a] > 0.0) {
            mean_[a] = swy[a] / sw[a];
            initial_budget_[a] = sw[a] * sw[a] / sw2[a];
        }
        budget_[a] = initial_budget_[a];
    }
}

std::optional<double> IPSWEvaluator::get_outcome(const Context&, Action a, Rng&) {
    if (a >= budget_.size()) throw ContractError("evaluator action out of range");
    if (budget_[a] >= 1.0) {
        budget_[a] -= 1.0;
        return mean_[a];
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------

LinearRegressionEvaluator::LinearRegressionEvaluator(const LoggedDataset& data,
                                                     std::shared_ptr<const FeatureMap> features,
                                                     std::shared_ptr<RidgeState> online)
    : features_(std::move(features)), online_(std::move(online)) {
    if (!features_ || !online_) throw ParameterError("LR evaluator needs a feature map and the online ridge state");
    const auto n = static_cast<Eigen::Index>(features_->dim());
    if (online_->V.rows() != n) throw ParameterError("online ridge state dimension mismatch");
    v_hat_ = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    for (std::size_t s = 0; s < data.total_size(); ++s) {
        if (!data.slot_alive(s)) continue;
        const auto& r = data.at_slot(s);
        const Eigen::VectorXd phi = (*features_)(r.context, r.action);
        v_hat_.noalias() += phi * phi.transpose();
        b += r.outcome * phi;
    }
    v_hat_llt_.compute(v_hat_);
    theta_hat_ = v_hat_llt_.solve(b);
    if (v_hat_llt_.info() != Eigen::Success || !theta_hat_.allFinite())
        throw InternalError("offline ridge solve failed");
}

double LinearRegressionEvaluator::offline_width(const Eigen::VectorXd& phi) const {
    return phi.dot(v_hat_llt_.solve(phi));
}

double LinearRegressionEvaluator::online_width(const Eigen::VectorXd& phi) const {
    Eigen::MatrixXd m = online_->V;
    m.noalias() += phi * phi.transpose();
    return phi.dot(m.llt().solve(phi));
}

std::optional<double> LinearRegressionEvaluator::get_outcome(const Context& x, Action a, Rng&) {
    const Eigen::VectorXd phi = (*features_)(x, a);
    if (online_width(phi) > offline_width(phi)) {
        online_->add_outer(phi);
        return phi.dot(theta_hat_);
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------

MatchingOnForestEvaluator::MatchingOnForestEvaluator(LoggedDataset data, const ForestParams& params, Rng& rng)
    : data_(std::move(data)) {
    forest_ = train_forest(training_data_from(data_), data_.num_actions(), params, data_.reward_range(), rng);
    build_index();
}

MatchingOnForestEvaluator::MatchingOnForestEvaluator(LoggedDataset data, MultiActionForest forest)
    : data_(std::move(data)), forest_(std::move(forest)) {
    if (forest_.num_actions() != data_.num_actions() || forest_.dim() != data_.dim())
        throw ParameterError("forest does not match the logged data shape");
    build_index();
}

std::size_t MatchingOnForestEvaluator::bucket(std::size_t b, const Context& x, Action a) const {
    return static_cast<std::size_t>(forest_.tree(b).leaf_of(x)) * data_.num_actions() + a;
}

void MatchingOnForestEvaluator::build_index() {
    if (forest_.num_trees() == 0) throw ParameterError("matching on forest needs at least one tree");
    index_.assign(forest_.num_trees(), BucketIndex{});
    for (std::size_t s = 0; s < data_.total_size(); ++s) {
        if (!data_.slot_alive(s)) continue;
        const auto& r = data_.at_slot(s);
        for (std::size_t b = 0; b < forest_.num_trees(); ++b) index_[b].insert(s, bucket(b, r.context, r.action));
    }
}

std::vector<RecordId> MatchingOnForestEvaluator::leaf_members(std::size_t b, const Context& x, Action a) const {
    std::vector<RecordId> ids;
    for (std::size_t s : index_.at(b).members(bucket(b, x, a))) ids.push_back(data_.at_slot(s).id);
    return ids;
}

std::optional<double> MatchingOnForestEvaluator::get_outcome(const Context& x, Action a, Rng& rng) {
    if (a >= data_.num_actions()) throw ContractError("evaluator action out of range");
    if (x.size() != data_.dim()) throw ContractError("evaluator context dimension mismatch");
    std::uniform_int_distribution<std::size_t> pick_tree(0, forest_.num_trees() - 1);
    const std::size_t b = pick_tree(rng);
    const auto members = index_[b].members(bucket(b, x, a));
    if (members.empty()) return std::nullopt;
    const std::size_t slot = pick_uniform(members, rng);
    for (auto& idx : index_) idx.erase(slot);
    const double y = data_.at_slot(slot).outcome;
    data_.remove(data_.at_slot(slot).id);
    return y;
}

// ---------------------------------------------------------------------------

HistoricalAverageEvaluator::HistoricalAverageEvaluator(LoggedDataset data)
    : data_(std::move(data)), flags_(data_.num_actions()) {
    for (std::size_t s = 0; s < data_.total_size(); ++s)
        if (data_.slot_alive(s)) index_.insert(s, data_.at_slot(s).action);
}

std::optional<double> HistoricalAverageEvaluator::get_outcome(const Context&, Action a, Rng& rng) {
    if (a >= data_.num_actions()) throw ContractError("evaluator action out of range");
    if (flags_.stopped(a)) return std::nullopt;
    const auto members = index_.members(a);
    if (members.empty()) {
        flags_.stop(a);
        return std::nullopt;
    }
    const std::size_t slot = pick_uniform(members, rng);
    index_.erase(slot);
    const double y = data_.at_slot(slot).outcome;
    data_.remove(data_.at_slot(slot).id);
    return y;
}

}  // namespace warmbandit
