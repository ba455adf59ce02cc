#pragma once

// Logit -> position mapping under a validation-calibrated risk budget, and
// backtest metrics on the resulting positions.

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace wavelab::trading {

enum class Mode { LongShort, LongOnly, ShortOnly };

const char* to_string(Mode m);
Mode mode_from_string(const std::string& s);
inline constexpr Mode kAllModes[] = {Mode::LongShort, Mode::LongOnly, Mode::ShortOnly};

class CalibrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RuinError : public std::runtime_error {
public:
    RuinError(const std::string& what, std::size_t index) : std::runtime_error(what), index_(index) {}
    std::size_t index() const { return index_; }

private:
    std::size_t index_;
};

struct PositionRule {
    double s_val = 0.0;  // 0 until calibrated
    double tau = 0.01;
    double budget = 1.0;  // L_budget
    Mode mode = Mode::LongShort;
    std::string scale_source;  // which segment s_val was estimated on

    void validate() const;
    double lower() const { return mode == Mode::LongOnly ? 0.0 : -budget; }
    double upper() const { return mode == Mode::ShortOnly ? 0.0 : budget; }
};

// tanh(p / 2) = 2 sigmoid(p) - 1
double logit_to_signal(double p);
std::vector<double> logits_to_signals(std::span<const double> logits);

// mean |w|; throws CalibrationError when the signal is flat.
double calibrate_scale(std::span<const double> signals);

// w_hat = L * w / s_val; zero inside the dead zone |w / s_val| < tau, else clamped to the mode bounds.
double make_position(double signal, const PositionRule& rule);
std::vector<double> make_positions(std::span<const double> signals, const PositionRule& rule);

// R_t = 1 + position_t * r_t where position_t was decided before bar t. Throws RuinError when R_t <= 0.
std::vector<double> gross_returns(std::span<const double> positions, std::span<const double> market_returns);

double roi(std::span<const double> gross);

struct SharpeValue {
    double value = 0.0;
    bool degenerate = false;  // zero variance; value is +-inf, or 0 for an all-zero series
};
SharpeValue sharpe_raw(std::span<const double> strategy_returns);

double max_drawdown(std::span<const double> gross);
std::vector<double> equity_curve(std::span<const double> gross);

struct BacktestReport {
    Mode mode = Mode::LongShort;
    double s_val = 0.0;
    std::string scale_source;
    std::vector<double> positions;
    std::vector<double> market_returns;
    std::vector<double> strategy_returns;
    std::vector<double> equity;
    std::vector<std::int64_t> timestamps;
    double roi = 0.0;
    SharpeValue sharpe;
    double mdd = 0.0;
    std::size_t trades = 0;

    nlohmann::json summary() const;
    nlohmann::json to_json() const;
    void write_equity_csv(std::ostream& out) const;
};

BacktestReport backtest(std::span<const double> signals, std::span<const double> market_returns,
                        std::span<const std::int64_t> timestamps, const PositionRule& rule);

}  // namespace wavelab::trading
