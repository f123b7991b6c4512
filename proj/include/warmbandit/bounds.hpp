// Closed-form regret upper bounds. Inputs use 0-based actions; gaps are
// E[y|a*] - E[y|a] with exactly-zero gaps marking optimal actions.
#pragma once

#include "warmbandit/core.hpp"
#include "warmbandit/forest.hpp"

#include <numbers>

namespace warmbandit {

struct BoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr double kPiSquaredOverThree = std::numbers::pi * std::numbers::pi / 3.0;

// Exact matching over C discrete contexts (also PSM over C strata).
struct MatchingBoundInputs {
    std::uint64_t T = 0;
    std::vector<double> gaps;                      // K
    std::vector<double> cell_probability;          // C, online probability of each context/stratum
    std::vector<std::vector<double>> cell_counts;  // C x K logged counts
    RewardRange range;
};

double bound_ucb_em(const MatchingBoundInputs& in);
double bound_ucb_psm(const MatchingBoundInputs& in);

struct IPSWBoundInputs {
    std::uint64_t T = 0;
    std::vector<double> gaps;              // K
    std::vector<double> effective_counts;  // K, N_a
    RewardRange range;
};

double bound_ucb_ipsw(const IPSWBoundInputs& in);

struct BiasedBoundInputs {
    std::uint64_t T = 0;
    std::vector<double> gaps;    // K
    std::vector<double> counts;  // K, outcomes emitted per action
    std::vector<double> bias;    // K, delta_a (0 where no outcomes)
    RewardRange range;
};

struct BiasedBound {
    double value = 0.0;
    // delta_a - delta_{a*} < gap_a for every suboptimal a.
    bool reduces_regret = false;
};

BiasedBound bound_biased(const BiasedBoundInputs& in);

enum class LinearBoundMode { problem_dependent, problem_independent };

struct LinearBoundInputs {
    std::uint64_t T = 0;
    std::uint64_t N = 0;           // offline outcomes
    double feature_dim = 0.0;      // d'
    double L = 1.0;                // max feature norm
    double delta_min = 0.0;        // problem-dependent only
    double lambda_min = 1.0;       // smallest eigenvalue of V_N (floored at 1 by V0 = I)
    double beta_T = 0.0;           // problem-independent; 0 means 2 d' (1 + 2 ln T)
    double trace_v0 = 0.0;         // problem-independent; 0 means d'
    double det_v0 = 1.0;
    double min_feature_norm = 1.0; // ||x||_min
};

double bound_linucb(const LinearBoundInputs& in, LinearBoundMode mode);

// Constants of the forest exploration schedule plus the regret exponent
// (1 + beta + omega) / 2.
struct ForestConstants {
    ScheduleConstants schedule;
    double regret_exponent = 0.0;
};

ForestConstants forest_constants(double alpha, std::size_t d, double pi_prime, double omega = 0.0);

}  // namespace warmbandit
