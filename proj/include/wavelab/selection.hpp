#pragma once

// Asset selection: DTW similarity filter followed by pairwise Granger tests
// with Benjamini-Hochberg adjustment.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wavelab/data.hpp"

namespace wavelab::selection {

// Unconstrained DTW with match/insert/delete moves and |a_i - b_j| cost.
double dtw_distance(std::span<const double> a, std::span<const double> b);

// Linear-interpolation quantile of an unsorted sample, q in [0, 1].
double quantile(std::vector<double> values, double q);

struct DtwConfig {
    std::size_t lookback = 0;  // bars from the end of the training period; 0 = all of it
    double threshold_quantile = 0.5;
};

struct DtwFilterResult {
    std::map<std::string, double> distances;  // candidates only
    std::vector<std::string> kept;            // reference first, then candidates in input order
    double threshold = 0.0;
    bool degenerate = false;  // no candidate passed the strict threshold
};

// Keeps candidates whose distance to the reference is strictly below the
// quantile threshold of the candidate distances. The reference is always kept.
DtwFilterResult dtw_filter(const std::vector<std::pair<std::string, std::vector<double>>>& candidates,
                           const std::string& reference_symbol, std::span<const double> reference,
                           const DtwConfig& cfg = {});

struct GrangerResult {
    double p_value = 1.0;
    double f_statistic = 0.0;
    bool degenerate = false;
};

// Linear Granger F test of "x causes y" with lags 1..max_lag.
// Requires x.size() == y.size() > 3 * max_lag + 10.
GrangerResult granger_pvalue(std::span<const double> x, std::span<const double> y, std::size_t max_lag = 4);

// Benjamini-Hochberg step-up adjustment, returned in input order.
std::vector<double> bh_fdr_adjust(std::span<const double> pvals);

struct PValueMatrix {
    std::vector<std::string> symbols;
    std::vector<double> raw;       // n x n, entry (i, j) tests "i causes j"
    std::vector<double> adjusted;  // BH over all off-diagonal entries
    std::vector<int> degenerate;  // 1 where the pairwise test was degenerate

    std::size_t n() const { return symbols.size(); }
    double raw_at(std::size_t i, std::size_t j) const { return raw[i * n() + j]; }
    double adjusted_at(std::size_t i, std::size_t j) const { return adjusted[i * n() + j]; }
    std::size_t index_of(const std::string& s) const;
};

PValueMatrix granger_matrix(const std::vector<std::pair<std::string, std::vector<double>>>& series,
                            std::size_t max_lag = 4, std::size_t threads = 1);

// Keeps s != target when either direction's adjusted p-value is below alpha.
// Target first, others in matrix order.
std::vector<std::string> select_assets(const PValueMatrix& matrix, const std::string& target, double alpha = 0.05);

struct SelectionConfig {
    DtwConfig dtw;
    std::size_t max_lag = 4;
    double alpha = 0.05;
    double train_frac = 0.7;  // selection statistics use this leading share of the panel only
};

struct SelectionReport {
    std::string target;
    DtwFilterResult dtw;
    PValueMatrix granger;
    std::vector<std::string> granger_kept;
    std::vector<std::string> final_set;
    std::vector<std::string> warnings;
};

SelectionReport run_selection(const data::ReturnPanel& panel, const SelectionConfig& cfg = {},
                              std::size_t threads = 1);

nlohmann::json to_json(const SelectionReport& report);

}  // namespace wavelab::selection
