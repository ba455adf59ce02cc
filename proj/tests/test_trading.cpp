#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "wavelab/trading.hpp"

using namespace wavelab::trading;

namespace {

double mean_abs(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s / static_cast<double>(v.size());
}

// Max over all pairs s <= t of 1 - W_t / W_s, with W_{-1} = 1 prepended.
double brute_mdd(const std::vector<double>& gross) {
    std::vector<double> w{1.0};
    for (double g : gross) w.push_back(w.back() * g);
    double best = 0.0;
    for (std::size_t t = 0; t < w.size(); ++t) {
        for (std::size_t s = 0; s <= t; ++s) best = std::max(best, 1.0 - w[t] / w[s]);
    }
    return best;
}

PositionRule rule(double s_val, double tau = 0.01, double L = 1.0, Mode m = Mode::LongShort) {
    return PositionRule{s_val, tau, L, m, "val"};
}

}  // namespace

TEST(Signal, Examples) {
    EXPECT_EQ(logit_to_signal(0.0), 0.0);
    EXPECT_NEAR(logit_to_signal(2.0), 0.76159, 1e-5);
    EXPECT_EQ(logit_to_signal(2.0), std::tanh(1.0));
    for (double p = -20.0; p <= 20.0; p += 0.05) {
        EXPECT_NEAR(2.0 / (1.0 + std::exp(-p)) - 1.0, logit_to_signal(p), 1e-12) << p;
    }
    auto w = logits_to_signals(std::vector<double>{-2.0, 0.0, 2.0});
    EXPECT_EQ(w[0], -w[2]);
}

TEST(Calibrate, Examples) {
    EXPECT_NEAR(calibrate_scale(std::vector<double>{0.2, 0.4}), 0.3, 1e-15);
    EXPECT_EQ(calibrate_scale(std::vector<double>{-0.25, 0.25, 0.25}), 0.25);
    EXPECT_THROW(calibrate_scale(std::vector<double>{0.0, 0.0}), CalibrationError);
    EXPECT_THROW(calibrate_scale(std::vector<double>{}), CalibrationError);
}

TEST(Positions, WorkedExample) {
    const std::vector<double> w{0.2, 0.4};
    auto pos = make_positions(w, rule(calibrate_scale(w)));
    EXPECT_NEAR(pos[0], 0.6667, 1e-4);
    EXPECT_NEAR(pos[0], 2.0 / 3.0, 1e-15);
    EXPECT_EQ(pos[1], 1.0);
}

TEST(Positions, DeadZoneAndModes) {
    EXPECT_EQ(make_position(0.005, rule(1.0)), 0.0);
    EXPECT_EQ(make_position(0.0100001, rule(1.0)), 0.0100001);
    EXPECT_EQ(make_position(-0.8, rule(1.0, 0.01, 1.0, Mode::LongOnly)), 0.0);
    EXPECT_EQ(make_position(0.8, rule(1.0, 0.01, 1.0, Mode::ShortOnly)), 0.0);
    EXPECT_EQ(make_position(-0.8, rule(1.0, 0.01, 1.0, Mode::ShortOnly)), -0.8);
    EXPECT_EQ(make_position(5.0, rule(1.0, 0.0, 2.0)), 2.0);
    EXPECT_THROW(make_positions(std::vector<double>{0.1}, rule(0.0)), std::invalid_argument);
    EXPECT_THROW(make_positions(std::vector<double>{0.1}, rule(1.0, -0.1)), std::invalid_argument);
    EXPECT_THROW(make_positions(std::vector<double>{0.1}, rule(1.0, 0.0, 0.0)), std::invalid_argument);
    EXPECT_THROW(mode_from_string("both"), std::invalid_argument);
    for (Mode m : kAllModes) EXPECT_EQ(mode_from_string(to_string(m)), m);
}

TEST(Positions, BudgetIsExactWhenClampIsInactive) {
    // The clamp at +-L stays inactive only when every |w| equals mean |w|.
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> mag(0.01, 0.99), budget(0.1, 3.0);
    std::bernoulli_distribution coin(0.5);
    for (int trial = 0; trial < 200; ++trial) {
        const double c = mag(rng), L = budget(rng);
        std::vector<double> w(1 + trial % 37);
        for (double& x : w) x = coin(rng) ? c : -c;
        auto r = rule(calibrate_scale(w), 0.0, L);
        auto pos = make_positions(w, r);
        for (std::size_t i = 0; i < w.size(); ++i) EXPECT_LE(std::abs(L * w[i] / r.s_val), L * (1 + 1e-12));
        EXPECT_NEAR(mean_abs(pos), L, 1e-10);
    }
}

TEST(Positions, BudgetIsAnUpperBoundUnderClampAndDeadZone) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> w(50);
        for (double& x : w) x = logit_to_signal(g(rng));
        const double L = 0.5 + 0.01 * trial;
        for (double tau : {0.0, 0.01, 0.3}) {
            for (Mode m : kAllModes) {
                auto pos = make_positions(w, rule(calibrate_scale(w), tau, L, m));
                EXPECT_LE(mean_abs(pos), L + 1e-12);
                for (double p : pos) {
                    if (m == Mode::LongOnly) EXPECT_GE(p, 0.0);
                    if (m == Mode::ShortOnly) EXPECT_LE(p, 0.0);
                    EXPECT_LE(std::abs(p), L);
                }
            }
        }
    }
}

TEST(Returns, Examples) {
    auto g = gross_returns(std::vector<double>{0.0, 1.0, -1.0}, std::vector<double>{0.05, 0.01, 0.02});
    EXPECT_EQ(g[0], 1.0);
    EXPECT_EQ(g[1], 1.01);
    EXPECT_EQ(g[2], 0.98);
    EXPECT_THROW(gross_returns(std::vector<double>{1.0}, std::vector<double>{0.1, 0.2}), std::invalid_argument);
    try {
        gross_returns(std::vector<double>{1.0, -2.0}, std::vector<double>{0.1, 0.6});
        FAIL();
    } catch (const RuinError& e) {
        EXPECT_EQ(e.index(), 1u);
    }
}

TEST(Roi, Examples) {
    EXPECT_NEAR(roi(std::vector<double>{1.01, 0.99}), -0.0001, 1e-15);
    EXPECT_EQ(roi(std::vector<double>{}), 0.0);
    EXPECT_NEAR(roi(std::vector<double>{1.1}), 0.1, 1e-15);
    EXPECT_EQ(roi(std::vector<double>{1.0, 1.0, 1.0}), 0.0);
}

TEST(Roi, ConcatenationDecomposes) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.9, 1.1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a(1 + trial % 13), b(1 + trial % 7);
        for (double& x : a) x = u(rng);
        for (double& x : b) x = u(rng);
        std::vector<double> ab = a;
        ab.insert(ab.end(), b.begin(), b.end());
        EXPECT_NEAR(roi(ab), (1.0 + roi(a)) * (1.0 + roi(b)) - 1.0, 1e-13);
    }
}

TEST(Sharpe, Examples) {
    EXPECT_EQ(sharpe_raw(std::vector<double>{0.01, -0.01}).value, 0.0);
    EXPECT_NEAR(sharpe_raw(std::vector<double>{0.01, 0.03}).value, 2.0, 1e-12);
    auto c = sharpe_raw(std::vector<double>{0.02, 0.02, 0.02});
    EXPECT_TRUE(c.degenerate);
    EXPECT_EQ(c.value, std::numeric_limits<double>::infinity());
    EXPECT_EQ(sharpe_raw(std::vector<double>{-0.02, -0.02}).value, -std::numeric_limits<double>::infinity());
    auto z = sharpe_raw(std::vector<double>{0.0, 0.0});
    EXPECT_TRUE(z.degenerate);
    EXPECT_EQ(z.value, 0.0);
    EXPECT_THROW(sharpe_raw(std::vector<double>{0.1}), std::invalid_argument);
}

TEST(Drawdown, Examples) {
    // Equity [1, 1.2, 0.9, 1.1] from a starting value of 1.
    EXPECT_NEAR(max_drawdown(std::vector<double>{1.0, 1.2, 0.75, 1.1 / 0.9}), 0.25, 1e-15);
    EXPECT_EQ(max_drawdown(std::vector<double>{1.01, 1.02, 1.5}), 0.0);
    EXPECT_EQ(max_drawdown(std::vector<double>{1.3}), 0.0);
    EXPECT_NEAR(max_drawdown(std::vector<double>{0.8}), 0.2, 1e-15);
    auto eq = equity_curve(std::vector<double>{1.0, 1.2, 0.75});
    EXPECT_NEAR(eq[2], 0.9, 1e-15);
}

TEST(Drawdown, MatchesBruteForce) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.8, 1.2);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> g(1 + trial % 40);
        for (double& x : g) x = u(rng);
        const double m = max_drawdown(g);
        EXPECT_NEAR(m, brute_mdd(g), 1e-14);
        EXPECT_GE(m, 0.0);
        EXPECT_LE(m, 1.0);
    }
}

TEST(Backtest, ReportIsConsistent) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> val(100), test(60), r(60);
    std::vector<std::int64_t> ts(60);
    for (double& x : val) x = logit_to_signal(g(rng));
    for (double& x : test) x = logit_to_signal(g(rng));
    for (std::size_t i = 0; i < 60; ++i) r[i] = 0.01 * g(rng), ts[i] = 3600 * static_cast<std::int64_t>(i);
    const double s_val = calibrate_scale(val);
    auto rep = backtest(test, r, ts, rule(s_val));
    // Test data never re-estimates the scale.
    EXPECT_EQ(rep.s_val, s_val);
    EXPECT_NE(rep.s_val, calibrate_scale(test));
    EXPECT_EQ(rep.scale_source, "val");
    double log_sum = 0.0;
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < 60; ++i) {
        EXPECT_EQ(rep.strategy_returns[i], rep.positions[i] * r[i] + 1.0 - 1.0);
        log_sum += std::log1p(rep.positions[i] * r[i]);
        nonzero += rep.positions[i] != 0.0;
    }
    EXPECT_NEAR(rep.roi, std::expm1(log_sum), 1e-14);
    EXPECT_NEAR(rep.equity.back(), 1.0 + rep.roi, 1e-13);
    EXPECT_EQ(rep.trades, nonzero);
    EXPECT_GE(rep.mdd, 0.0);
    EXPECT_LE(rep.mdd, 1.0);

    auto j = rep.to_json();
    EXPECT_EQ(j["mode"], "long_short");
    EXPECT_EQ(j["scale_source"], "val");
    EXPECT_EQ(j["positions"].size(), 60u);

    std::ostringstream csv;
    rep.write_equity_csv(csv);
    std::istringstream in(csv.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "timestamp,equity,position,market_return");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 60u);

    EXPECT_THROW(backtest(test, r, std::vector<std::int64_t>(3), rule(s_val)), std::invalid_argument);
}

TEST(Backtest, FlatPositionsEarnNothing) {
    auto rep = backtest(std::vector<double>{0.001, -0.001, 0.0}, std::vector<double>{0.05, -0.03, 0.02}, {},
                        rule(1.0));
    EXPECT_EQ(rep.roi, 0.0);
    EXPECT_EQ(rep.trades, 0u);
    EXPECT_EQ(rep.mdd, 0.0);
    EXPECT_EQ(rep.summary()["sharpe"], 0.0);
    auto up = backtest(std::vector<double>{1.0, 1.0}, std::vector<double>{0.01, 0.01}, {}, rule(1.0, 0.0));
    EXPECT_EQ(up.summary()["sharpe"], "+inf");
}
