#pragma once

// Multi-seed aggregation, hyperparameter sweeps, ablation tables and report
// rendering on top of train::train.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wavelab/config.hpp"
#include "wavelab/train.hpp"

namespace wavelab::experiment {

struct MetricStat {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation (n - 1)
    std::size_t n = 0;
};

// Throws std::invalid_argument for fewer than two values.
MetricStat mean_std(std::span<const double> values);

struct SeedSummary {
    std::string name;
    std::string config_hash;
    std::vector<std::uint64_t> seeds;
    std::map<std::uint64_t, std::string> failures;  // seed -> error, excluded from the metrics
    std::map<std::string, MetricStat> metrics;
    std::size_t parameter_count = 0;
    std::vector<train::RunResult> runs;

    const MetricStat& metric(const std::string& key) const;
    nlohmann::json to_json() const;
};

// Metric keys: val_roi, val_sharpe, test_roi.<mode>, test_sharpe.<mode>, test_mdd.<mode>, test_trades.<mode>.
SeedSummary summarize(const std::string& name, const std::string& config_hash,
                      const std::vector<train::RunResult>& runs,
                      const std::map<std::uint64_t, std::string>& failures = {});

struct JobOptions {
    std::optional<std::filesystem::path> out_dir;
    std::size_t threads = 1;
    bool keep_grad_trace = false;
};

SeedSummary multi_seed(const config::ExperimentConfig& cfg, const train::PreparedData& data,
                       const JobOptions& options = {});

inline constexpr const char* kSweepParameters[] = {"lambda_roi", "lambda_spec", "frozen_beta", "k", "alpha", "tau"};

// Returns a copy of cfg with one sweepable hyperparameter set.
config::ExperimentConfig with_parameter(const config::ExperimentConfig& cfg, const std::string& parameter,
                                        double value);

struct SweepTable {
    std::string parameter;
    std::vector<double> values;
    std::vector<SeedSummary> cells;
    std::size_t best_by_validation = 0;  // index into values, by mean validation ROI

    nlohmann::json to_json() const;
    std::string to_csv() const;
};

SweepTable sweep(const config::ExperimentConfig& cfg, const train::PreparedData& data, const std::string& parameter,
                 const std::vector<double>& values, const JobOptions& options = {});

struct Variant {
    std::string name;
    config::ExperimentConfig config;
};

// full, frontend_none, frozen_haar, low_only, high_only, concat, no_sharpe
std::vector<Variant> ablation_variants(const config::ExperimentConfig& base);

struct AblationTable {
    std::vector<SeedSummary> rows;
    nlohmann::json to_json() const;
    std::string to_csv() const;
};

AblationTable ablate(const config::ExperimentConfig& cfg, const train::PreparedData& data,
                     const std::vector<std::string>& variants = {}, const JobOptions& options = {});

// Markdown table of mean +- std per summary for the long_short mode.
std::string markdown_table(std::span<const SeedSummary> summaries);

}  // namespace wavelab::experiment
