#include "warmbandit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace warmbandit {

std::vector<double> cumulative_regret(const RunTrace& trace) {
    std::vector<double> out;
    out.reserve(trace.rounds.size());
    double s = 0.0;
    for (const auto& r : trace.rounds) {
        if (!r.regret) throw UnsupportedMetric("round " + std::to_string(r.t) + " has no regret");
        s += *r.regret;
        out.push_back(s);
    }
    return out;
}

std::vector<double> cumulative_reward(const RunTrace& trace) {
    std::vector<double> out;
    out.reserve(trace.rounds.size());
    double s = 0.0;
    for (const auto& r : trace.rounds) {
        s += r.reward;
        out.push_back(s);
    }
    return out;
}

double nearest_rank(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw ParameterError("percentile of an empty sample");
    const auto n = static_cast<double>(sorted.size());
    auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-12));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

Bands aggregate(const std::vector<std::vector<double>>& curves) {
    if (curves.empty()) throw ParameterError("aggregate needs at least one curve");
    const std::size_t T = curves.front().size();
    for (const auto& c : curves)
        if (c.size() != T) throw ParameterError("curves differ in length");
    Bands b;
    b.mean.resize(T);
    b.p20.resize(T);
    b.p80.resize(T);
    std::vector<double> column(curves.size());
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t r = 0; r < curves.size(); ++r) column[r] = curves[r][t];
        std::sort(column.begin(), column.end());
        // summing sorted values keeps the mean independent of trace order
        double s = 0.0;
        for (double v : column) s += v;
        b.mean[t] = s / static_cast<double>(column.size());
        b.p20[t] = nearest_rank(column, 0.2);
        b.p80[t] = nearest_rank(column, 0.8);
    }
    return b;
}

MeanSE mean_se(const std::vector<double>& values) {
    MeanSE out;
    out.n = values.size();
    if (values.empty()) return out;
    double s = 0.0;
    for (double v : values) s += v;
    out.mean = s / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - out.mean) * (v - out.mean);
        out.standard_error = std::sqrt(ss / static_cast<double>(values.size() - 1) / static_cast<double>(values.size()));
    }
    return out;
}

void write_bands_csv(std::ostream& out, const Bands& bands) {
    out << "t,mean,p20,p80\n";
    for (std::size_t t = 0; t < bands.mean.size(); ++t)
        out << t + 1 << ',' << format_double(bands.mean[t]) << ',' << format_double(bands.p20[t]) << ','
            << format_double(bands.p80[t]) << '\n';
}

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double to_double(const std::string& s, std::size_t line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("line " + std::to_string(line) + ": bad number '" + s + "'");
    }
}

}  // namespace

Bands read_bands_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "t,mean,p20,p80") throw DataError("line 1: expected t,mean,p20,p80 header");
    Bands b;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != 4) throw DataError("line " + std::to_string(n) + ": expected 4 columns");
        b.mean.push_back(to_double(cells[1], n));
        b.p20.push_back(to_double(cells[2], n));
        b.p80.push_back(to_double(cells[3], n));
    }
    return b;
}

void write_trace_csv(std::ostream& out, const RunTrace& trace) {
    out << "t,action,reward,virtual_plays,regret,cumulative_regret\n";
    for (const auto& r : trace.rounds) {
        out << r.t << ',' << r.action << ',' << format_double(r.reward) << ',' << r.virtual_plays << ',';
        if (r.regret) out << format_double(*r.regret);
        out << ',';
        if (r.cumulative_regret) out << format_double(*r.cumulative_regret);
        out << '\n';
    }
}

std::vector<double> read_trace_regret_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "t,action,reward,virtual_plays,regret,cumulative_regret")
        throw DataError("line 1: unexpected trace header");
    std::vector<double> out;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != 6) throw DataError("line " + std::to_string(n) + ": expected 6 columns");
        if (cells[5].empty()) throw UnsupportedMetric("line " + std::to_string(n) + ": no regret");
        out.push_back(to_double(cells[5], n));
    }
    return out;
}

}  // namespace warmbandit
