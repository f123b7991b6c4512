// Regret curves and pointwise statistics over replications.
#pragma once

#include "warmbandit/framework.hpp"

#include <iosfwd>

namespace warmbandit {

struct UnsupportedMetric : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Prefix sums of instantaneous regret; throws UnsupportedMetric when a round
// has no regret.
std::vector<double> cumulative_regret(const RunTrace& trace);
std::vector<double> cumulative_reward(const RunTrace& trace);

struct Bands {
    std::vector<double> mean;
    std::vector<double> p20;
    std::vector<double> p80;
};

// Nearest-rank percentile of an ascending sequence: the ceil(q n)-th element.
double nearest_rank(const std::vector<double>& sorted, double q);

Bands aggregate(const std::vector<std::vector<double>>& curves);

struct MeanSE {
    double mean = 0.0;
    double standard_error = 0.0;
    std::size_t n = 0;
};

MeanSE mean_se(const std::vector<double>& values);

void write_bands_csv(std::ostream& out, const Bands& bands);
Bands read_bands_csv(std::istream& in);

// t,action,reward,virtual_plays,regret,cumulative_regret
void write_trace_csv(std::ostream& out, const RunTrace& trace);
// Cumulative regret column of a trace CSV.
std::vector<double> read_trace_regret_csv(std::istream& in);

}  // namespace warmbandit
