#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "wavelab/selection.hpp"

using namespace wavelab;
using namespace wavelab::selection;

namespace {

// Minimum over every monotone warping path, enumerated explicitly.
double dtw_enumerate(const std::vector<double>& a, const std::vector<double>& b) {
    double best = std::numeric_limits<double>::infinity();
    std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double acc) {
        acc += std::abs(a[i] - b[j]);
        if (i + 1 == a.size() && j + 1 == b.size()) {
            best = std::min(best, acc);
            return;
        }
        if (i + 1 < a.size() && j + 1 < b.size()) walk(i + 1, j + 1, acc);
        if (i + 1 < a.size()) walk(i + 1, j, acc);
        if (j + 1 < b.size()) walk(i, j + 1, acc);
    };
    walk(0, 0, 0.0);
    return best;
}

std::vector<std::vector<double>> all_series(std::size_t max_len, int alphabet) {
    std::vector<std::vector<double>> out;
    std::vector<std::vector<double>> frontier{{}};
    for (std::size_t len = 1; len <= max_len; ++len) {
        std::vector<std::vector<double>> next;
        for (const auto& s : frontier) {
            for (int c = 0; c < alphabet; ++c) {
                auto t = s;
                t.push_back(c);
                next.push_back(t);
            }
        }
        out.insert(out.end(), next.begin(), next.end());
        frontier = std::move(next);
    }
    return out;
}

// OLS residual sum of squares via normal equations and Gauss-Jordan.
double rss_normal_equations(const std::vector<std::vector<double>>& X, const std::vector<double>& y) {
    const std::size_t k = X[0].size();
    std::vector<std::vector<double>> A(k, std::vector<double>(k + 1, 0.0));
    for (std::size_t r = 0; r < X.size(); ++r) {
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < k; ++j) A[i][j] += X[r][i] * X[r][j];
            A[i][k] += X[r][i] * y[r];
        }
    }
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < k; ++r)
            if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
        std::swap(A[c], A[piv]);
        for (std::size_t r = 0; r < k; ++r) {
            if (r == c) continue;
            const double f = A[r][c] / A[c][c];
            for (std::size_t j = c; j <= k; ++j) A[r][j] -= f * A[c][j];
        }
    }
    double rss = 0.0;
    for (std::size_t r = 0; r < X.size(); ++r) {
        double fit = 0.0;
        for (std::size_t i = 0; i < k; ++i) fit += X[r][i] * A[i][k] / A[i][i];
        rss += (y[r] - fit) * (y[r] - fit);
    }
    return rss;
}

// Regularized incomplete beta by Lentz continued fraction.
double betacf(double a, double b, double x) {
    const double tiny = 1e-300;
    double c = 1.0, d = 1.0 - (a + b) * x / (a + 1.0);
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m < 10000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + aa * d;
        c = 1.0 + aa / c;
        d = 1.0 / (std::abs(d) < tiny ? tiny : d);
        c = std::abs(c) < tiny ? tiny : c;
        h *= d * c;
        aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + aa * d;
        c = 1.0 + aa / c;
        d = 1.0 / (std::abs(d) < tiny ? tiny : d);
        c = std::abs(c) < tiny ? tiny : c;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    return h;
}

double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double lbt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(lbt) * betacf(a, b, x) / a;
    return 1.0 - std::exp(lbt) * betacf(b, a, 1.0 - x) / b;
}

// Upper tail of F(d1, d2) at f.
double f_survival(double f, double d1, double d2) { return incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)); }

struct OracleGranger {
    double f;
    double p;
};

OracleGranger granger_oracle(const std::vector<double>& x, const std::vector<double>& y, std::size_t p) {
    std::vector<std::vector<double>> Xr, Xu;
    std::vector<double> target;
    for (std::size_t t = p; t < y.size(); ++t) {
        std::vector<double> r{1.0}, u{1.0};
        for (std::size_t k = 1; k <= p; ++k) r.push_back(y[t - k]);
        u = r;
        for (std::size_t k = 1; k <= p; ++k) u.push_back(x[t - k]);
        Xr.push_back(r);
        Xu.push_back(u);
        target.push_back(y[t]);
    }
    const double rr = rss_normal_equations(Xr, target), ru = rss_normal_equations(Xu, target);
    const double n = static_cast<double>(target.size());
    const double d1 = static_cast<double>(p), d2 = n - 2.0 * static_cast<double>(p) - 1.0;
    const double f = ((rr - ru) / d1) / (ru / d2);
    return {f, f_survival(f, d1, d2)};
}

std::vector<double> white_noise(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    std::vector<double> v(n);
    for (double& x : v) x = g(rng);
    return v;
}

}  // namespace

TEST(Dtw, Examples) {
    const std::vector<double> a{0.3, -1.0, 2.0};
    EXPECT_EQ(dtw_distance(a, a), 0.0);
    EXPECT_EQ(dtw_distance(std::vector<double>{0, 0, 0}, std::vector<double>{1, 1, 1}), 3.0);
    EXPECT_THROW(dtw_distance(std::vector<double>{}, a), std::invalid_argument);
}

TEST(Dtw, MatchesPathEnumerationOnSmallAlphabet) {
    const auto series = all_series(4, 3);
    for (std::size_t i = 0; i < series.size(); i += 3) {
        for (std::size_t j = 0; j < series.size(); j += 2) {
            ASSERT_EQ(dtw_distance(series[i], series[j]), dtw_enumerate(series[i], series[j]));
        }
    }
}

TEST(Dtw, SymmetricAndBelowDiagonalPath) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        auto a = white_noise(12, rng), b = white_noise(12, rng);
        EXPECT_DOUBLE_EQ(dtw_distance(a, b), dtw_distance(b, a));
        double diag = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) diag += std::abs(a[i] - b[i]);
        EXPECT_LE(dtw_distance(a, b), diag + 1e-12);
    }
}

TEST(DtwFilter, MedianThresholdIsStrict) {
    // Reference 0; candidates constant at 1/3, 2/3, 1, 4/3 give distances 1..4 over 3 bars.
    std::vector<double> ref(3, 0.0);
    std::vector<std::pair<std::string, std::vector<double>>> c;
    for (int k = 1; k <= 4; ++k) c.emplace_back("C" + std::to_string(k), std::vector<double>(3, k / 3.0));
    auto r = dtw_filter(c, "REF", ref);
    EXPECT_NEAR(r.threshold, 2.5, 1e-12);
    EXPECT_EQ(r.kept, (std::vector<std::string>{"REF", "C1", "C2"}));
    EXPECT_FALSE(r.degenerate);

    DtwConfig all;
    all.threshold_quantile = 1.0;
    auto r1 = dtw_filter(c, "REF", ref, all);
    EXPECT_EQ(r1.kept.size(), 4u);
}

TEST(DtwFilter, TiesKeepOnlyReference) {
    std::vector<double> ref(3, 0.0);
    std::vector<std::pair<std::string, std::vector<double>>> c{{"A", {1, 1, 1}}, {"B", {1, 1, 1}}};
    auto r = dtw_filter(c, "REF", ref);
    EXPECT_TRUE(r.degenerate);
    EXPECT_EQ(r.kept, std::vector<std::string>{"REF"});
    EXPECT_THROW(dtw_filter({}, "REF", ref), std::invalid_argument);
}

TEST(Quantile, LinearInterpolation) {
    EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 1.0), 4.0);
    EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.0), 1.0);
}

TEST(Bh, HandExample) {
    auto q = bh_fdr_adjust(std::vector<double>{0.01, 0.02, 0.04, 0.5});
    EXPECT_NEAR(q[0], 0.04, 1e-10);
    EXPECT_NEAR(q[1], 0.04, 1e-10);
    EXPECT_NEAR(q[2], 0.16 / 3.0, 1e-10);
    EXPECT_NEAR(q[3], 0.5, 1e-10);
}

TEST(Bh, TrivialCases) {
    auto eq = bh_fdr_adjust(std::vector<double>{0.3, 0.3, 0.3});
    for (double v : eq) EXPECT_DOUBLE_EQ(v, 0.3);
    EXPECT_EQ(bh_fdr_adjust(std::vector<double>{0.07}), std::vector<double>{0.07});
}

TEST(Bh, PropertiesOnRandomInputs) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> p(1 + trial % 17);
        for (double& v : p) v = u(rng) * u(rng);
        auto q = bh_fdr_adjust(p);
        for (std::size_t i = 0; i < p.size(); ++i) {
            EXPECT_GE(q[i], p[i]);
            EXPECT_LE(q[i], 1.0);
            for (std::size_t j = 0; j < p.size(); ++j) {
                if (p[i] <= p[j]) EXPECT_LE(q[i], q[j]);
            }
        }
        std::vector<std::size_t> perm(p.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = perm.size() - 1 - i;
        std::vector<double> pp(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) pp[i] = p[perm[i]];
        auto qq = bh_fdr_adjust(pp);
        for (std::size_t i = 0; i < p.size(); ++i) EXPECT_DOUBLE_EQ(qq[i], q[perm[i]]);
    }
}

TEST(Granger, MatchesNormalEquationOracle) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = white_noise(150, rng), e = white_noise(150, rng);
        std::vector<double> y(150);
        for (std::size_t t = 1; t < y.size(); ++t) y[t] = 0.3 * y[t - 1] + 0.2 * x[t - 1] + e[t];
        for (std::size_t lag : {1u, 2u, 4u}) {
            auto got = granger_pvalue(x, y, lag);
            auto want = granger_oracle(x, y, lag);
            EXPECT_FALSE(got.degenerate);
            EXPECT_NEAR(got.f_statistic, want.f, 1e-8 * std::max(1.0, want.f));
            EXPECT_NEAR(got.p_value, want.p, 1e-9);
        }
    }
}

TEST(Granger, DetectsPlantedLead) {
    std::mt19937_64 rng(12);
    auto x = white_noise(500, rng), e = white_noise(500, rng);
    std::vector<double> y(500, 0.0);
    for (std::size_t t = 1; t < y.size(); ++t) y[t] = 0.9 * x[t - 1] + 0.1 * e[t];
    EXPECT_LT(granger_pvalue(x, y, 2).p_value, 0.001);
}

TEST(Granger, ConstantSeriesIsDegenerate) {
    std::mt19937_64 rng(13);
    std::vector<double> x(100, 1.0);
    auto y = white_noise(100, rng);
    auto r = granger_pvalue(x, y, 2);
    EXPECT_TRUE(r.degenerate);
    EXPECT_EQ(r.p_value, 1.0);
    EXPECT_THROW(granger_pvalue(y, y, 40), std::invalid_argument);
}

TEST(Granger, NullFalsePositiveRate) {
    std::mt19937_64 rng(14);
    int hits = 0;
    for (int trial = 0; trial < 200; ++trial) {
        auto x = white_noise(500, rng), y = white_noise(500, rng);
        if (granger_pvalue(x, y, 4).p_value < 0.05) ++hits;
    }
    const double rate = hits / 200.0;
    EXPECT_GE(rate, 0.01);
    EXPECT_LE(rate, 0.10);
}

TEST(Matrix, DiagonalBhAndSelection) {
    std::mt19937_64 rng(15);
    auto a = white_noise(400, rng), b = white_noise(400, rng), c = white_noise(400, rng);
    std::vector<double> t(400, 0.0);
    for (std::size_t i = 1; i < t.size(); ++i) t[i] = 0.8 * a[i - 1] + 0.3 * c[i];
    std::vector<std::pair<std::string, std::vector<double>>> series{{"T", t}, {"A", a}, {"B", b}};
    auto m = granger_matrix(series, 2, 2);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(m.raw_at(i, i), 1.0);
        EXPECT_EQ(m.adjusted_at(i, i), 1.0);
        for (std::size_t j = 0; j < 3; ++j) EXPECT_GE(m.adjusted_at(i, j), m.raw_at(i, j));
    }
    std::vector<double> off;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            if (i != j) off.push_back(m.raw_at(i, j));
    auto adj = bh_fdr_adjust(off);
    std::size_t k = 0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            if (i != j) EXPECT_EQ(m.adjusted_at(i, j), adj[k++]);
    auto kept = select_assets(m, "T");
    EXPECT_EQ(kept.front(), "T");
    EXPECT_NE(std::find(kept.begin(), kept.end(), "A"), kept.end());
}

TEST(Matrix, SelectionBoundaryAndMonotonicity) {
    PValueMatrix m;
    m.symbols = {"T", "A", "B"};
    m.raw = m.adjusted = {1.0, 0.05, 0.2, 0.04, 1.0, 0.01, 0.5, 0.3, 1.0};
    EXPECT_EQ(select_assets(m, "T"), (std::vector<std::string>{"T", "A"}));
    m.adjusted[3] = 0.05;
    EXPECT_EQ(select_assets(m, "T"), std::vector<std::string>{"T"});
    std::size_t prev = 0;
    for (double alpha : {0.01, 0.05, 0.1, 0.25, 0.6}) {
        const auto s = select_assets(m, "T", alpha).size();
        EXPECT_GE(s, prev);
        prev = s;
    }
}

TEST(Pipeline, TrainingPrefixOnlyAndTargetKept) {
    std::mt19937_64 rng(16);
    data::ReturnPanel p;
    p.symbols = {"T", "A", "B"};
    const std::size_t n = 300;
    p.target_index = 0;
    auto a = white_noise(n, rng), b = white_noise(n, rng), e = white_noise(n, rng);
    for (std::size_t t = 0; t < n; ++t) {
        p.timestamps.push_back(static_cast<std::int64_t>(t));
        const double tv = t > 0 ? 0.01 * (0.9 * a[t - 1] + 0.2 * e[t]) : 0.0;
        for (double v : {tv, 0.01 * a[t], 0.05 * b[t]}) {
            p.log.push_back(v);
            p.simple.push_back(std::expm1(v));
        }
    }
    auto rep = run_selection(p);
    EXPECT_EQ(rep.final_set.front(), "T");
    EXPECT_EQ(rep.target, "T");
    for (const auto& s : rep.final_set) {
        EXPECT_NE(std::find(rep.dtw.kept.begin(), rep.dtw.kept.end(), s), rep.dtw.kept.end());
    }
    // Tampering with the held-out tail must not move any statistic.
    auto q = p;
    for (std::size_t t = 250; t < n; ++t) q.log[t * 3 + 2] = 5.0;
    auto rep2 = run_selection(q);
    EXPECT_EQ(to_json(rep), to_json(rep2));
}
