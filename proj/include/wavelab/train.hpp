#pragma once

// Training loop: Adam on contiguous-time batches, two-phase schedule,
// validation-ROI checkpoint selection and frozen-scale test evaluation.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wavelab/config.hpp"
#include "wavelab/data.hpp"
#include "wavelab/model.hpp"
#include "wavelab/trading.hpp"

namespace wavelab::train {

// Windowed data and split shared read-only by every run of an experiment.
struct PreparedData {
    std::shared_ptr<const data::WindowDataset> dataset;
    data::SplitRanges split;
    std::vector<std::string> symbols;
    nlohmann::json selection;  // null when selection was skipped
};

data::ReturnPanel load_panel(const config::ExperimentConfig& cfg, std::size_t threads = 1,
                             nlohmann::json* selection_report = nullptr);
PreparedData prepare(const config::ExperimentConfig& cfg, std::size_t threads = 1);

// Loss or gradient went non-finite.
class TrainingAbort : public std::runtime_error {
public:
    TrainingAbort(const std::string& what, nlohmann::json diagnostics)
        : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}
    const nlohmann::json& diagnostics() const { return diagnostics_; }

private:
    nlohmann::json diagnostics_;
};

class Adam {
public:
    Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
    // Updates every trainable parameter whose name passes `filter` (all when empty).
    void step(ad::ParameterStore& params, const std::function<bool(const std::string&)>& filter = {});
    std::size_t steps() const { return t_; }

private:
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

// L2 norm over trainable gradients.
double grad_norm(const ad::ParameterStore& params);
// Scales trainable gradients so the norm is at most max_norm; returns the pre-clip norm.
double clip_grad_norm(ad::ParameterStore& params, double max_norm);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0, trade = 0.0, penalty = 0.0, sharpe = 0.0, wavelet = 0.0;
    double grad_norm_mean = 0.0, grad_norm_min = 0.0, grad_norm_max = 0.0;
    double val_roi = 0.0;
    double val_sharpe = 0.0;
    double s_val = 0.0;
    bool eligible = false;
    nlohmann::json to_json() const;
};

struct RunResult {
    std::uint64_t seed = 0;
    std::size_t selected_epoch = 0;
    std::string checkpoint_id;
    double val_roi = 0.0;
    double s_val = 0.0;
    std::map<std::string, trading::BacktestReport> test;  // keyed by mode name
    std::vector<EpochRecord> epochs;
    std::vector<double> grad_norm_trace;  // pre-clip, one per optimizer step
    nlohmann::json ledger;
    std::size_t test_reads_before_evaluation = 0;
    std::size_t parameter_count = 0;
    std::string log_path;

    nlohmann::json to_json(bool with_trace = false) const;
};

RunResult run_result_from_json(const nlohmann::json& j);

struct RunOptions {
    std::optional<std::filesystem::path> out_dir;  // log, checkpoint, RunResult, equity CSVs
    std::ostream* log = nullptr;                   // JSON-lines sink when out_dir is unset
    bool keep_grad_trace = false;
};

RunResult train(const config::ExperimentConfig& cfg, const PreparedData& data, std::uint64_t seed,
                const RunOptions& options = {});

// Evaluates a model under a frozen validation scale on the test segment.
std::map<std::string, trading::BacktestReport> evaluate_test(model::PolicyModel& model, const PreparedData& data,
                                                             data::LabelReader& reader, double s_val,
                                                             const config::PositionConfig& position,
                                                             std::size_t chunk, const std::string& scale_source);

}  // namespace wavelab::train
