#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wavelab/tensor.hpp"

namespace wavelab::data {

struct Bar {
    std::string symbol;
    std::int64_t timestamp = 0;  // epoch seconds
    double open = 0.0;
    double high = 0.0;
    double low = 0.0;
    double close = 0.0;
    double volume = 0.0;
};

// symbol -> bars sorted by timestamp
using BarSeries = std::map<std::string, std::vector<Bar>>;

inline constexpr const char* kCsvHeader = "symbol,timestamp,open,high,low,close,volume";

// Reads the bar CSV. An empty symbol list keeps every symbol in the file.
// Throws std::runtime_error (malformed row, duplicate stamp) or
// std::domain_error (non-positive open/close); messages carry the line number.
BarSeries parse_csv(std::istream& in, const std::vector<std::string>& symbols = {});
BarSeries ingest_csv(const std::filesystem::path& path, const std::vector<std::string>& symbols = {});
void write_csv(std::ostream& out, const BarSeries& bars);

struct ReturnPanel {
    std::vector<std::string> symbols;
    std::vector<std::int64_t> timestamps;
    std::vector<double> simple;  // T x d row-major
    std::vector<double> log;     // T x d row-major
    std::size_t target_index = 0;

    std::size_t steps() const { return timestamps.size(); }
    std::size_t width() const { return symbols.size(); }
    double simple_at(std::size_t t, std::size_t j) const { return simple[t * width() + j]; }
    double log_at(std::size_t t, std::size_t j) const { return log[t * width() + j]; }
    std::vector<double> log_column(std::size_t j) const;
    std::size_t index_of(const std::string& symbol) const;
};

// r = close/open - 1 and l = ln(1 + r), aligned on the intersection of stamps.
// symbols fixes column order (empty: every series in key order).
ReturnPanel compute_returns(const BarSeries& bars, const std::string& target,
                            const std::vector<std::string>& symbols = {});

// Restricts a panel to the given symbols (in that order), keeping the target.
ReturnPanel select_columns(const ReturnPanel& panel, const std::vector<std::string>& symbols);

// |ln(1+r) - r|
double small_return_gap(double r);

struct Range {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
    bool contains(std::size_t i) const { return i >= begin && i < end; }
};

struct SplitSpec {
    double train_frac = 0.7;
    double val_frac = 0.1;
    double test_frac = 0.2;
};

struct SplitRanges {
    Range train;
    Range val;
    Range test;
};

// Floor-based cut points on label indices; the test segment takes the rest.
SplitRanges temporal_split(std::size_t n_labels, const SplitSpec& spec);

// Window i covers panel rows [i, i + L_w) and is labelled by row i + L_w.
class WindowDataset {
public:
    WindowDataset(ReturnPanel panel, std::size_t window_length);

    std::size_t size() const { return panel_.steps() - window_length_; }
    std::size_t window_length() const { return window_length_; }
    std::size_t channels() const { return panel_.width(); }
    const ReturnPanel& panel() const { return panel_; }

    Tensor window(std::size_t i) const;  // (L_w, d), oldest row first
    std::int64_t anchor_timestamp(std::size_t i) const { return panel_.timestamps[i + window_length_]; }
    std::int64_t newest_feature_timestamp(std::size_t i) const {
        return panel_.timestamps[i + window_length_ - 1];
    }

    // Unlogged label access; training code goes through LabelReader.
    double raw_log_label(std::size_t i) const;
    double raw_simple_label(std::size_t i) const;

private:
    ReturnPanel panel_;
    std::size_t window_length_;
};

enum class Phase { Fit, Evaluation };
enum class Segment { Train, Val, Test };

// Counts label reads by phase and split segment.
class AccessLedger {
public:
    void record(Phase phase, Segment segment, std::size_t count = 1);
    std::size_t reads(Phase phase, Segment segment) const;
    nlohmann::json to_json() const;

private:
    std::array<std::array<std::size_t, 3>, 2> counts_{};
};

// Label accessor bound to one split; every read lands in the ledger.
class LabelReader {
public:
    LabelReader(const WindowDataset& dataset, SplitRanges split);

    double log_label(std::size_t i);
    double simple_label(std::size_t i);
    Segment segment_of(std::size_t i) const;

    void begin_evaluation() { phase_ = Phase::Evaluation; }
    Phase phase() const { return phase_; }
    const AccessLedger& ledger() const { return ledger_; }
    const SplitRanges& split() const { return split_; }
    const WindowDataset& dataset() const { return *dataset_; }

private:
    const WindowDataset* dataset_;
    SplitRanges split_;
    Phase phase_ = Phase::Fit;
    AccessLedger ledger_;
};

nlohmann::json to_json(const ReturnPanel& panel);
ReturnPanel panel_from_json(const nlohmann::json& j);

}  // namespace wavelab::data
