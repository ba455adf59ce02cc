#include "wavelab/selection.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/fisher_f.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "wavelab/parallel.hpp"

namespace wavelab::selection {

double dtw_distance(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("dtw_distance: empty series");
    const std::size_t m = b.size();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
    prev[0] = 0.0;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = inf;
        for (std::size_t j = 1; j <= m; ++j) {
            const double cost = std::abs(a[i - 1] - b[j - 1]);
            cur[j] = cost + std::min({prev[j - 1], prev[j], cur[j - 1]});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("quantile: empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q outside [0,1]");
    std::sort(values.begin(), values.end());
    const double h = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

DtwFilterResult dtw_filter(const std::vector<std::pair<std::string, std::vector<double>>>& candidates,
                           const std::string& reference_symbol, std::span<const double> reference,
                           const DtwConfig& cfg) {
    if (candidates.empty()) throw std::invalid_argument("dtw_filter: universe needs at least 2 series");
    if (!(cfg.threshold_quantile > 0.0 && cfg.threshold_quantile <= 1.0)) {
        throw std::invalid_argument("dtw_filter: threshold_quantile must be in (0,1]");
    }
    if (cfg.lookback == 1) throw std::invalid_argument("dtw_filter: lookback must be >= 2");
    auto tail = [&](std::span<const double> s) {
        if (cfg.lookback == 0 || cfg.lookback >= s.size()) return s;
        return s.subspan(s.size() - cfg.lookback);
    };

    DtwFilterResult res;
    std::vector<double> dist;
    for (const auto& [sym, series] : candidates) {
        const double d = dtw_distance(tail(series), tail(reference));
        res.distances[sym] = d;
        dist.push_back(d);
    }
    res.threshold = quantile(dist, cfg.threshold_quantile);
    res.kept.push_back(reference_symbol);
    for (const auto& [sym, _] : candidates) {
        if (res.distances[sym] < res.threshold) res.kept.push_back(sym);
    }
    res.degenerate = res.kept.size() == 1;
    return res;
}

namespace {

// Residual sum of squares of an OLS fit; rank-deficient designs report false.
bool ols_rss(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double& rss) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < X.cols()) return false;
    const Eigen::VectorXd beta = qr.solve(y);
    rss = (y - X * beta).squaredNorm();
    return true;
}

}  // namespace

GrangerResult granger_pvalue(std::span<const double> x, std::span<const double> y, std::size_t max_lag) {
    if (max_lag == 0) throw std::invalid_argument("granger_pvalue: max_lag must be positive");
    if (x.size() != y.size()) throw std::invalid_argument("granger_pvalue: series lengths differ");
    if (y.size() <= 3 * max_lag + 10) {
        throw std::invalid_argument("granger_pvalue: series length " + std::to_string(y.size()) +
                                    " too short for lag " + std::to_string(max_lag));
    }
    const std::size_t p = max_lag;
    const auto rows = static_cast<Eigen::Index>(y.size() - p);
    Eigen::MatrixXd Xr(rows, static_cast<Eigen::Index>(1 + p));
    Eigen::MatrixXd Xu(rows, static_cast<Eigen::Index>(1 + 2 * p));
    Eigen::VectorXd target(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const std::size_t t = static_cast<std::size_t>(r) + p;
        target(r) = y[t];
        Xr(r, 0) = 1.0;
        Xu(r, 0) = 1.0;
        for (std::size_t k = 1; k <= p; ++k) {
            Xr(r, static_cast<Eigen::Index>(k)) = y[t - k];
            Xu(r, static_cast<Eigen::Index>(k)) = y[t - k];
            Xu(r, static_cast<Eigen::Index>(p + k)) = x[t - k];
        }
    }
    GrangerResult res;
    double rss_r = 0.0, rss_u = 0.0;
    if (!ols_rss(Xr, target, rss_r) || !ols_rss(Xu, target, rss_u) || !(rss_u > 0.0)) {
        res.degenerate = true;
        return res;
    }
    const double df_num = static_cast<double>(p);
    const double df_den = static_cast<double>(rows) - 2.0 * static_cast<double>(p) - 1.0;
    res.f_statistic = std::max(0.0, (rss_r - rss_u) / df_num) / (rss_u / df_den);
    boost::math::fisher_f dist(df_num, df_den);
    res.p_value = std::clamp(boost::math::cdf(boost::math::complement(dist, res.f_statistic)), 0.0, 1.0);
    return res;
}

std::vector<double> bh_fdr_adjust(std::span<const double> pvals) {
    const std::size_t m = pvals.size();
    std::vector<double> out(m);
    if (m == 0) return out;
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pvals[a] < pvals[b]; });
    double running = 1.0;
    for (std::size_t k = m; k-- > 0;) {
        const double q = pvals[order[k]] * (static_cast<double>(m) / static_cast<double>(k + 1));
        running = std::min(running, q);
        out[order[k]] = std::min(1.0, running);
    }
    return out;
}

std::size_t PValueMatrix::index_of(const std::string& s) const {
    auto it = std::find(symbols.begin(), symbols.end(), s);
    if (it == symbols.end()) throw std::out_of_range("symbol not in p-value matrix: " + s);
    return static_cast<std::size_t>(it - symbols.begin());
}

PValueMatrix granger_matrix(const std::vector<std::pair<std::string, std::vector<double>>>& series,
                            std::size_t max_lag, std::size_t threads) {
    PValueMatrix m;
    const std::size_t n = series.size();
    for (const auto& [sym, _] : series) m.symbols.push_back(sym);
    m.raw.assign(n * n, 1.0);
    m.degenerate.assign(n * n, 0);
    parallel_for(n * n, threads, [&](std::size_t k) {
        const std::size_t i = k / n, j = k % n;
        if (i == j) return;
        GrangerResult g = granger_pvalue(series[i].second, series[j].second, max_lag);
        m.raw[k] = g.p_value;
        m.degenerate[k] = g.degenerate ? 1 : 0;
    });
    std::vector<double> off;
    for (std::size_t k = 0; k < n * n; ++k)
        if (k / n != k % n) off.push_back(m.raw[k]);
    const auto adj = bh_fdr_adjust(off);
    m.adjusted.assign(n * n, 1.0);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < n * n; ++k)
        if (k / n != k % n) m.adjusted[k] = adj[pos++];
    return m;
}

std::vector<std::string> select_assets(const PValueMatrix& matrix, const std::string& target, double alpha) {
    const std::size_t t = matrix.index_of(target);
    std::vector<std::string> out{target};
    for (std::size_t s = 0; s < matrix.n(); ++s) {
        if (s == t) continue;
        if (matrix.adjusted_at(s, t) < alpha || matrix.adjusted_at(t, s) < alpha) out.push_back(matrix.symbols[s]);
    }
    return out;
}

SelectionReport run_selection(const data::ReturnPanel& panel, const SelectionConfig& cfg, std::size_t threads) {
    const auto train_rows = static_cast<std::size_t>(std::floor(cfg.train_frac * static_cast<double>(panel.steps())));
    if (train_rows < 2) throw std::invalid_argument("run_selection: training period too short");
    auto column = [&](std::size_t j) {
        auto col = panel.log_column(j);
        col.resize(train_rows);
        return col;
    };

    SelectionReport rep;
    rep.target = panel.symbols[panel.target_index];
    const auto reference = column(panel.target_index);
    std::vector<std::pair<std::string, std::vector<double>>> candidates;
    for (std::size_t j = 0; j < panel.width(); ++j)
        if (j != panel.target_index) candidates.emplace_back(panel.symbols[j], column(j));
    rep.dtw = dtw_filter(candidates, rep.target, reference, cfg.dtw);
    if (rep.dtw.degenerate) rep.warnings.push_back("dtw filter kept no candidate besides the target");

    std::vector<std::pair<std::string, std::vector<double>>> kept;
    for (const auto& sym : rep.dtw.kept) kept.emplace_back(sym, column(panel.index_of(sym)));
    if (kept.size() >= 2) {
        rep.granger = granger_matrix(kept, cfg.max_lag, threads);
        rep.granger_kept = select_assets(rep.granger, rep.target, cfg.alpha);
    } else {
        rep.granger.symbols = {rep.target};
        rep.granger.raw = rep.granger.adjusted = {1.0};
        rep.granger.degenerate = {0};
        rep.granger_kept = {rep.target};
    }
    rep.final_set = rep.granger_kept;
    return rep;
}

nlohmann::json to_json(const SelectionReport& r) {
    return {{"target", r.target},
            {"dtw",
             {{"distances", r.dtw.distances},
              {"threshold", r.dtw.threshold},
              {"kept", r.dtw.kept},
              {"degenerate", r.dtw.degenerate}}},
            {"granger",
             {{"symbols", r.granger.symbols}, {"raw", r.granger.raw}, {"adjusted", r.granger.adjusted}}},
            {"granger_kept", r.granger_kept},
            {"final", r.final_set},
            {"warnings", r.warnings}};
}

}  // namespace wavelab::selection
