#include "wavelab/trading.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace wavelab::trading {

const char* to_string(Mode m) {
    switch (m) {
        case Mode::LongShort: return "long_short";
        case Mode::LongOnly: return "long_only";
        case Mode::ShortOnly: return "short_only";
    }
    return "?";
}

Mode mode_from_string(const std::string& s) {
    if (s == "long_short") return Mode::LongShort;
    if (s == "long_only") return Mode::LongOnly;
    if (s == "short_only") return Mode::ShortOnly;
    throw std::invalid_argument("position.mode: expected long_short|long_only|short_only, got '" + s + "'");
}

void PositionRule::validate() const {
    if (!(s_val > 0.0)) throw std::invalid_argument("position rule: s_val must be calibrated (> 0)");
    if (!(tau >= 0.0)) throw std::invalid_argument("position rule: tau must be >= 0");
    if (!(budget > 0.0)) throw std::invalid_argument("position rule: budget must be > 0");
}

double logit_to_signal(double p) { return std::tanh(0.5 * p); }

std::vector<double> logits_to_signals(std::span<const double> logits) {
    std::vector<double> w(logits.size());
    std::transform(logits.begin(), logits.end(), w.begin(), logit_to_signal);
    return w;
}

double calibrate_scale(std::span<const double> signals) {
    if (signals.empty()) throw CalibrationError("calibrate_scale: empty validation signal");
    double acc = 0.0;
    for (double w : signals) acc += std::abs(w);
    const double s = acc / static_cast<double>(signals.size());
    if (!(s >= 1e-12)) throw CalibrationError("calibrate_scale: degenerate flat signal (mean |w| < 1e-12)");
    return s;
}

double make_position(double signal, const PositionRule& rule) {
    const double unit = signal / rule.s_val;
    if (std::abs(unit) < rule.tau) return 0.0;
    return std::clamp(rule.budget * unit, rule.lower(), rule.upper());
}

std::vector<double> make_positions(std::span<const double> signals, const PositionRule& rule) {
    rule.validate();
    std::vector<double> out(signals.size());
    for (std::size_t i = 0; i < signals.size(); ++i) out[i] = make_position(signals[i], rule);
    return out;
}

std::vector<double> gross_returns(std::span<const double> positions, std::span<const double> market_returns) {
    if (positions.size() != market_returns.size()) {
        throw std::invalid_argument("gross_returns: " + std::to_string(positions.size()) + " positions vs " +
                                    std::to_string(market_returns.size()) + " returns");
    }
    std::vector<double> g(positions.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = 1.0 + positions[i] * market_returns[i];
        if (!(g[i] > 0.0)) throw RuinError("strategy ruin at step " + std::to_string(i), i);
    }
    return g;
}

double roi(std::span<const double> gross) {
    double acc = 0.0;
    for (double g : gross) acc += std::log(g);
    return std::expm1(acc);
}

SharpeValue sharpe_raw(std::span<const double> strategy_returns) {
    const std::size_t n = strategy_returns.size();
    if (n < 2) throw std::invalid_argument("sharpe_raw: need at least 2 returns");
    double mu = 0.0;
    for (double v : strategy_returns) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : strategy_returns) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    if (var > 0.0) return {mu / std::sqrt(var), false};
    const double inf = std::numeric_limits<double>::infinity();
    return {mu > 0.0 ? inf : (mu < 0.0 ? -inf : 0.0), true};
}

std::vector<double> equity_curve(std::span<const double> gross) {
    std::vector<double> w(gross.size());
    double acc = 1.0;
    for (std::size_t i = 0; i < gross.size(); ++i) {
        acc *= gross[i];
        w[i] = acc;
    }
    return w;
}

double max_drawdown(std::span<const double> gross) {
    double equity = 1.0, peak = 1.0, mdd = 0.0;
    for (double g : gross) {
        equity *= g;
        peak = std::max(peak, equity);
        mdd = std::max(mdd, 1.0 - equity / peak);
    }
    return mdd;
}

BacktestReport backtest(std::span<const double> signals, std::span<const double> market_returns,
                        std::span<const std::int64_t> timestamps, const PositionRule& rule) {
    if (!timestamps.empty() && timestamps.size() != signals.size()) {
        throw std::invalid_argument("backtest: timestamp count does not match signals");
    }
    BacktestReport rep;
    rep.mode = rule.mode;
    rep.s_val = rule.s_val;
    rep.scale_source = rule.scale_source;
    rep.positions = make_positions(signals, rule);
    rep.market_returns.assign(market_returns.begin(), market_returns.end());
    rep.timestamps.assign(timestamps.begin(), timestamps.end());
    const auto gross = gross_returns(rep.positions, market_returns);
    rep.strategy_returns.resize(gross.size());
    for (std::size_t i = 0; i < gross.size(); ++i) rep.strategy_returns[i] = gross[i] - 1.0;
    rep.equity = equity_curve(gross);
    rep.roi = roi(gross);
    if (gross.size() >= 2) rep.sharpe = sharpe_raw(rep.strategy_returns);
    rep.mdd = max_drawdown(gross);
    rep.trades = static_cast<std::size_t>(
        std::count_if(rep.positions.begin(), rep.positions.end(), [](double p) { return p != 0.0; }));
    return rep;
}

namespace {

nlohmann::json finite_or_sentinel(double v) {
    if (std::isfinite(v)) return v;
    return v > 0 ? "+inf" : "-inf";
}

}  // namespace

nlohmann::json BacktestReport::summary() const {
    return {{"mode", to_string(mode)},
            {"s_val", s_val},
            {"scale_source", scale_source},
            {"steps", positions.size()},
            {"roi", roi},
            {"sharpe", finite_or_sentinel(sharpe.value)},
            {"sharpe_degenerate", sharpe.degenerate},
            {"mdd", mdd},
            {"trades", trades}};
}

nlohmann::json BacktestReport::to_json() const {
    nlohmann::json j = summary();
    j["positions"] = positions;
    j["strategy_returns"] = strategy_returns;
    j["equity"] = equity;
    return j;
}

void BacktestReport::write_equity_csv(std::ostream& out) const {
    out << "timestamp,equity,position,market_return\n";
    out.precision(17);
    for (std::size_t i = 0; i < equity.size(); ++i) {
        out << (timestamps.empty() ? static_cast<std::int64_t>(i) : timestamps[i]) << ',' << equity[i] << ','
            << positions[i] << ',' << market_returns[i] << '\n';
    }
}

}  // namespace wavelab::trading
