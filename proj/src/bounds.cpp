#include "warmbandit/bounds.hpp"

#include <algorithm>
#include <cmath>

namespace warmbandit {

namespace {

void require_unit_range(const RewardRange& r) {
    if (!r.is_unit()) throw BoundError("bound requires rewards in [0,1]");
}

void check_gaps(const std::vector<double>& gaps) {
    if (gaps.empty()) throw BoundError("no actions");
    bool has_optimal = false;
    for (double g : gaps) {
        if (!(g >= 0.0) || !std::isfinite(g)) throw BoundError("gaps must be finite and nonnegative");
        has_optimal = has_optimal || g == 0.0;
    }
    if (!has_optimal) throw BoundError("no action has a zero gap");
}

bool suboptimal(double gap) { return gap > 0.0; }

void check_matching(const MatchingBoundInputs& in) {
    require_unit_range(in.range);
    check_gaps(in.gaps);
    if (in.cell_probability.empty()) throw BoundError("no cells");
    if (in.cell_counts.size() != in.cell_probability.size()) throw BoundError("cell counts and probabilities differ");
    for (std::size_t c = 0; c < in.cell_probability.size(); ++c) {
        if (!(in.cell_probability[c] > 0.0)) throw BoundError("cell probabilities must be positive");
        if (in.cell_counts[c].size() != in.gaps.size()) throw BoundError("cell counts need one entry per action");
        for (double n : in.cell_counts[c])
            if (!(n >= 0.0)) throw BoundError("counts must be nonnegative");
    }
    if (in.T < 1) throw BoundError("T must be >= 1");
}

// min over c~ of N(c~, a) P[c] / P[c~].
double min_scaled_count(const MatchingBoundInputs& in, std::size_t c, Action a) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t ct = 0; ct < in.cell_probability.size(); ++ct)
        m = std::min(m, in.cell_counts[ct][a] * in.cell_probability[c] / in.cell_probability[ct]);
    return m;
}

double matching_outer(const MatchingBoundInputs& in, double A) {
    const double T = static_cast<double>(in.T);
    double total = 0.0;
    for (Action a = 0; a < in.gaps.size(); ++a) {
        const double g = in.gaps[a];
        if (!suboptimal(g)) continue;
        double inner = 0.0;
        for (std::size_t c = 0; c < in.cell_probability.size(); ++c) {
            const double need = 8.0 * std::log(T + A) / (g * g) * in.cell_probability[c];
            inner += std::max(0.0, need - min_scaled_count(in, c, a));
        }
        total += g * (1.0 + kPiSquaredOverThree + inner);
    }
    return total;
}

double total_count(const MatchingBoundInputs& in) {
    double n = 0.0;
    for (const auto& row : in.cell_counts)
        for (double v : row) n += v;
    return n;
}

}  // namespace

double bound_ucb_em(const MatchingBoundInputs& in) {
    check_matching(in);
    const double T = static_cast<double>(in.T);
    const double N = total_count(in);
    double surplus = 0.0;
    for (Action a = 0; a < in.gaps.size(); ++a) {
        const double g = in.gaps[a];
        if (!suboptimal(g)) continue;
        const double per = 8.0 * std::log(T + N) / (g * g) + 1.0 + kPiSquaredOverThree;
        for (std::size_t c = 0; c < in.cell_probability.size(); ++c)
            surplus += std::max(0.0, in.cell_counts[c][a] - per * in.cell_probability[c]);
    }
    return matching_outer(in, N - surplus);
}

double bound_ucb_psm(const MatchingBoundInputs& in) {
    check_matching(in);
    const double T = static_cast<double>(in.T);
    const double N = total_count(in);
    double surplus = 0.0;
    for (Action a = 0; a < in.gaps.size(); ++a) {
        const double g = in.gaps[a];
        if (!suboptimal(g)) continue;
        const double per = 8.0 * std::log(T + N) / (g * g) + 1.0 + kPiSquaredOverThree;
        for (std::size_t c = 0; c < in.cell_probability.size(); ++c)
            surplus += std::max(0.0, min_scaled_count(in, c, a) - per * in.cell_probability[c]);
    }
    return matching_outer(in, N - surplus);
}

double bound_ucb_ipsw(const IPSWBoundInputs& in) {
    require_unit_range(in.range);
    check_gaps(in.gaps);
    if (in.effective_counts.size() != in.gaps.size()) throw BoundError("need one effective count per action");
    if (in.T < 1) throw BoundError("T must be >= 1");
    double ceil_sum = 0.0;
    for (double n : in.effective_counts) {
        if (!(n >= 0.0)) throw BoundError("effective counts must be nonnegative");
        ceil_sum += std::ceil(n);
    }
    const double log_term = std::log(static_cast<double>(in.T) + ceil_sum);
    double total = 0.0;
    for (Action a = 0; a < in.gaps.size(); ++a) {
        const double g = in.gaps[a];
        if (!suboptimal(g)) continue;
        total += g * (1.0 + kPiSquaredOverThree +
                      std::max(0.0, 8.0 / (g * g) * log_term - std::floor(in.effective_counts[a])));
    }
    return total;
}

BiasedBound bound_biased(const BiasedBoundInputs& in) {
    require_unit_range(in.range);
    check_gaps(in.gaps);
    const std::size_t k = in.gaps.size();
    if (in.counts.size() != k || in.bias.size() != k) throw BoundError("need one count and bias per action");
    if (in.T < 1) throw BoundError("T must be >= 1");
    const auto best = static_cast<std::size_t>(std::find(in.gaps.begin(), in.gaps.end(), 0.0) - in.gaps.begin());
    const double T = static_cast<double>(in.T);
    BiasedBound out;
    out.reduces_regret = true;
    for (Action a = 0; a < k; ++a) {
        const double g = in.gaps[a];
        if (!suboptimal(g)) continue;
        if (!(in.counts[a] >= 0.0)) throw BoundError("counts must be nonnegative");
        const double excess = std::max(0.0, in.bias[a] - in.bias[best]);
        out.value += g * (16.0 / (g * g) * std::log(in.counts[a] + T) - 2.0 * in.counts[a] * (1.0 - excess / g) +
                          (1.0 + kPiSquaredOverThree));
        out.reduces_regret = out.reduces_regret && (in.bias[a] - in.bias[best] < g);
    }
    return out;
}

double bound_linucb(const LinearBoundInputs& in, LinearBoundMode mode) {
    if (in.T < 1) throw BoundError("T must be >= 1");
    if (!(in.feature_dim > 0.0)) throw BoundError("feature dimension must be positive");
    if (!(in.L > 0.0)) throw BoundError("L must be positive");
    const double T = static_cast<double>(in.T);
    const double d = in.feature_dim;
    if (mode == LinearBoundMode::problem_dependent) {
        if (!(in.delta_min > 0.0)) throw BoundError("minimum gap must be positive");
        const double lambda = std::max(in.lambda_min, 1.0);
        return 8.0 * d * d * (1.0 + 2.0 * std::log(T)) / in.delta_min * std::log(1.0 + T * in.L * in.L / lambda) + 1.0;
    }
    const double N = static_cast<double>(in.N);
    const double beta = in.beta_T > 0.0 ? in.beta_T : 2.0 * d * (1.0 + 2.0 * std::log(T));
    const double tr = in.trace_v0 > 0.0 ? in.trace_v0 : d;
    const double L2 = in.L * in.L;
    const double first = std::sqrt(8.0 * (N + T) * beta * std::log((tr + (N + T) * L2) / in.det_v0));
    const double second =
        std::sqrt(8.0 * beta) * std::min(1.0, in.min_feature_norm) * (2.0 / L2) * (std::sqrt(1.0 + N * L2) - 1.0);
    return first - second;
}

ForestConstants forest_constants(double alpha, std::size_t d, double pi_prime, double omega) {
    ForestConstants out;
    out.schedule = schedule_constants(alpha, d, pi_prime);
    out.regret_exponent = (1.0 + out.schedule.beta + omega) / 2.0;
    return out;
}

}  // namespace warmbandit
