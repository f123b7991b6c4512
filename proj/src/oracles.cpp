#include "warmbandit/oracles.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace warmbandit {

namespace {

void check_candidates(std::span<const Action> candidates, std::size_t k) {
    if (candidates.empty()) throw ContractError("play needs a non-empty candidate set");
    for (Action a : candidates)
        if (a >= k) throw ContractError("candidate action out of range");
}

Action uniform_pick(std::span<const Action> candidates, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    return candidates[pick(rng)];
}

// Highest score among candidates; ties resolve to the lowest action index.
template <typename Score>
Action best_of(std::span<const Action> candidates, Score&& score) {
    Action best = candidates[0];
    double best_score = score(best);
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const Action a = candidates[i];
        const double s = score(a);
        if (s > best_score || (s == best_score && a < best)) {
            best = a;
            best_score = s;
        }
    }
    return best;
}

std::string vector_digest(const std::vector<double>& v) {
    std::string out;
    for (double x : v) {
        out += format_double(x);
        out += ',';
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void MeanCountState::update(Action a, double y) {
    if (a >= mean.size()) throw ContractError("update action out of range");
    const double n = static_cast<double>(count[a]);
    mean[a] = (n * mean[a] + y) / (n + 1.0);
    ++count[a];
}

std::uint64_t MeanCountState::total() const {
    std::uint64_t n = 0;
    for (auto c : count) n += c;
    return n;
}

std::string MeanCountState::digest() const {
    std::string out = vector_digest(mean);
    out += '|';
    for (auto c : count) out += std::to_string(c) + ',';
    return out;
}

ABOracle::ABOracle(std::size_t k) : state_(k) {
    if (k == 0) throw ParameterError("oracle needs K >= 1");
}

Action ABOracle::play_among(const Context&, std::span<const Action> candidates, Rng& rng) const {
    check_candidates(candidates, num_actions());
    return uniform_pick(candidates, rng);
}

void ABOracle::update(const Context&, Action a, double y) { state_.update(a, y); }

UCBOracle::UCBOracle(std::size_t k, double beta) : state_(k), beta_(beta) {
    if (k == 0) throw ParameterError("oracle needs K >= 1");
}

double UCBOracle::index(Action a) const {
    if (state_.count[a] == 0) return std::numeric_limits<double>::infinity();
    const double n = static_cast<double>(state_.total());
    return state_.mean[a] + beta_ * std::sqrt(2.0 * std::log(n) / static_cast<double>(state_.count[a]));
}

Action UCBOracle::play_among(const Context&, std::span<const Action> candidates, Rng&) const {
    check_candidates(candidates, num_actions());
    // Cold start: lowest-indexed unplayed candidate.
    Action cold = std::numeric_limits<Action>::max();
    for (Action a : candidates)
        if (state_.count[a] == 0 && a < cold) cold = a;
    if (cold != std::numeric_limits<Action>::max()) return cold;
    return best_of(candidates, [&](Action a) { return index(a); });
}

void UCBOracle::update(const Context&, Action a, double y) { state_.update(a, y); }

TSGaussOracle::TSGaussOracle(std::size_t k, double beta) : state_(k), beta_(beta) {
    if (k == 0) throw ParameterError("oracle needs K >= 1");
    if (!(beta > 0.0)) throw ParameterError("Thompson sampling spread must be positive");
}

Action TSGaussOracle::play_among(const Context&, std::span<const Action> candidates, Rng& rng) const {
    check_candidates(candidates, num_actions());
    std::vector<double> draws(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const Action a = candidates[i];
        const double sd = beta_ / std::sqrt(static_cast<double>(state_.count[a]) + 1.0);
        std::normal_distribution<double> normal(state_.mean[a], sd);
        draws[i] = normal(rng);
    }
    std::size_t i = 0;
    return best_of(candidates, [&](Action) { return draws[i++]; });
}

void TSGaussOracle::update(const Context&, Action a, double y) { state_.update(a, y); }

double sample_beta(double a, double b, Rng& rng) {
    std::gamma_distribution<double> ga(a, 1.0);
    std::gamma_distribution<double> gb(b, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    return x / (x + y);
}

TSBernOracle::TSBernOracle(std::size_t k, double prior_success, double prior_failure)
    : success_(k, prior_success), failure_(k, prior_failure) {
    if (k == 0) throw ParameterError("oracle needs K >= 1");
    if (!(prior_success > 0.0 && prior_failure > 0.0)) throw ParameterError("Beta prior must be positive");
}

Action TSBernOracle::play_among(const Context&, std::span<const Action> candidates, Rng& rng) const {
    check_candidates(candidates, num_actions());
    std::vector<double> draws(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i)
        draws[i] = sample_beta(success_[candidates[i]], failure_[candidates[i]], rng);
    std::size_t i = 0;
    return best_of(candidates, [&](Action) { return draws[i++]; });
}

void TSBernOracle::update(const Context&, Action a, double y) {
    if (a >= success_.size()) throw ContractError("update action out of range");
    if (y == 1.0)
        success_[a] += 1.0;
    else if (y == 0.0)
        failure_[a] += 1.0;
    else
        throw DataError("Bernoulli Thompson sampling needs rewards in {0,1}");
}

std::string TSBernOracle::digest() const { return vector_digest(success_) + "|" + vector_digest(failure_); }

// ---------------------------------------------------------------------------
// LinUCB

Eigen::VectorXd BlockOneHotFeatureMap::operator()(const Context& x, Action a) const {
    if (x.size() != d_) throw ContractError("feature map context dimension mismatch");
    if (a >= k_) throw ContractError("feature map action out of range");
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
    const auto base = static_cast<Eigen::Index>(a * (d_ + 1));
    for (std::size_t j = 0; j < d_; ++j) phi[base + static_cast<Eigen::Index>(j)] = x[j];
    phi[base + static_cast<Eigen::Index>(d_)] = 1.0;
    return phi;
}

void RidgeState::add_outer(const Eigen::VectorXd& phi) {
    V.noalias() += phi * phi.transpose();
    ++version;
}

BetaSchedule default_linucb_beta(std::size_t feature_dim) {
    const double dd = static_cast<double>(feature_dim);
    return [dd](std::uint64_t t) {
        const double tt = static_cast<double>(std::max<std::uint64_t>(t, 2));
        return std::sqrt(2.0 * dd * (1.0 + 2.0 * std::log(tt)));
    };
}

BetaSchedule constant_beta(double beta) {
    return [beta](std::uint64_t) { return beta; };
}

LinUCBOracle::LinUCBOracle(std::size_t k, std::shared_ptr<const FeatureMap> features, BetaSchedule beta)
    : k_(k), features_(std::move(features)), beta_(std::move(beta)) {
    if (k == 0) throw ParameterError("oracle needs K >= 1");
    if (!features_) throw ParameterError("LinUCB needs a feature map");
    if (!beta_) beta_ = default_linucb_beta(features_->dim());
    ridge_ = std::make_shared<RidgeState>(features_->dim());
}

void LinUCBOracle::refresh() const {
    if (cached_version_ == ridge_->version) return;
    llt_.compute(ridge_->V);
    theta_ = llt_.solve(ridge_->b);
    if (llt_.info() != Eigen::Success || !theta_.allFinite())
        throw InternalError("LinUCB linear solve failed (V not positive definite)");
    cached_version_ = ridge_->version;
}

Eigen::VectorXd LinUCBOracle::theta() const {
    refresh();
    return theta_;
}

Eigen::MatrixXd LinUCBOracle::inverse() const {
    refresh();
    const auto n = ridge_->V.rows();
    return llt_.solve(Eigen::MatrixXd::Identity(n, n));
}

double LinUCBOracle::score(const Context& x, Action a) const {
    refresh();
    const Eigen::VectorXd phi = (*features_)(x, a);
    const double width = phi.dot(llt_.solve(phi));
    const double s = theta_.dot(phi) + beta_(ridge_->t) * std::sqrt(std::max(width, 0.0));
    if (!std::isfinite(s)) throw InternalError("LinUCB score is not finite");
    return s;
}

Action LinUCBOracle::play_among(const Context& x, std::span<const Action> candidates, Rng&) const {
    check_candidates(candidates, k_);
    return best_of(candidates, [&](Action a) { return score(x, a); });
}

void LinUCBOracle::update(const Context& x, Action a, double y) {
    const Eigen::VectorXd phi = (*features_)(x, a);
    ridge_->V.noalias() += phi * phi.transpose();
    ridge_->b += y * phi;
    ++ridge_->t;
    ++ridge_->version;
}

std::string LinUCBOracle::digest() const {
    std::ostringstream out;
    for (Eigen::Index i = 0; i < ridge_->V.size(); ++i) out << format_double(ridge_->V.data()[i]) << ',';
    out << '|';
    for (Eigen::Index i = 0; i < ridge_->b.size(); ++i) out << format_double(ridge_->b[i]) << ',';
    out << '|' << ridge_->t;
    return out.str();
}

// ---------------------------------------------------------------------------
// Forest oracle

double ExplorationSchedule::operator()(std::uint64_t t) const {
    switch (kind) {
        case Kind::theorem:
            return epsilon_schedule(t, alpha, d, pi_prime);
        case Kind::power:
            return std::min(1.0, scale * std::pow(static_cast<double>(std::max<std::uint64_t>(t, 1)), -exponent));
        case Kind::constant:
            return value;
    }
    return 1.0;
}

FstOracle::FstOracle(std::size_t k, std::size_t d, FstParams params) : k_(k), params_(std::move(params)), data_(d) {
    if (k == 0) throw ParameterError("oracle needs K >= 1");
    if (params_.retrain_every < 1) throw ParameterError("retrain interval must be >= 1");
    params_.forest.validate();
}

Action FstOracle::play_among(const Context& x, std::span<const Action> candidates, Rng& rng) const {
    check_candidates(candidates, k_);
    if (!forest_) return uniform_pick(candidates, rng);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < params_.epsilon(t_)) return uniform_pick(candidates, rng);
    return best_of(candidates, [&](Action a) { return forest_->predict(x, a); });
}

void FstOracle::update(const Context& x, Action a, double y) {
    if (a >= k_) throw ContractError("update action out of range");
    data_.push(x, a, y);
    ++t_;
    if (data_.size() % params_.retrain_every == 0) {
        Rng rng = make_stream(params_.seed, retrains_);
        forest_ = train_forest(data_, k_, params_.forest, params_.range, rng);
        ++retrains_;
    }
}

std::string FstOracle::digest() const {
    std::ostringstream out;
    out << t_ << '|' << retrains_ << '|' << data_.size() << '|';
    for (std::size_t i = 0; i < data_.size(); ++i) {
        out << data_.a[i] << ':' << format_double(data_.y[i]) << ';';
    }
    if (forest_) out << '|' << forest_->dump();
    return out.str();
}

}  // namespace warmbandit
