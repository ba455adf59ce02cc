#include "wavelab/objective.hpp"

#include <cmath>
#include <stdexcept>

#include "wavelab/json_util.hpp"

namespace wavelab::objective {

using ad::Var;

const char* to_string(TradeLoss mode) {
    switch (mode) {
        case TradeLoss::SoftLabel: return "soft_label";
        case TradeLoss::SigmoidHard: return "sigmoid_hard";
        case TradeLoss::Tanh: return "tanh";
        case TradeLoss::Mse: return "mse";
        case TradeLoss::Mae: return "mae";
    }
    return "?";
}

TradeLoss trade_loss_from_string(const std::string& s) {
    if (s == "soft_label") return TradeLoss::SoftLabel;
    if (s == "sigmoid_hard") return TradeLoss::SigmoidHard;
    if (s == "tanh") return TradeLoss::Tanh;
    if (s == "mse") return TradeLoss::Mse;
    if (s == "mae") return TradeLoss::Mae;
    throw ConfigError("loss.mode: expected soft_label|sigmoid_hard|tanh|mse|mae, got '" + s + "'");
}

void LossConfig::validate() const {
    if (!(k > 0.0)) throw ConfigError("loss.k: must be positive");
    if (!(alpha > 0.0)) throw ConfigError("loss.alpha: must be positive");
    if (!(K > 0.0)) throw ConfigError("loss.K: must be positive");
    if (!(h_year > 0.0)) throw ConfigError("loss.h_year: must be positive");
    if (!(r_ann_max > 0.0)) throw ConfigError("loss.r_ann_max: must be positive");
    if (!(lambda_roi >= 0.0)) throw ConfigError("loss.lambda_roi: must be >= 0");
    if (!(lambda_spec >= 0.0)) throw ConfigError("loss.lambda_spec: must be >= 0");
    if (!(eps > 0.0)) throw ConfigError("loss.eps: must be positive");
}

nlohmann::json to_json(const LossConfig& c) {
    return {{"mode", to_string(c.mode)},       {"k", c.k},
            {"lambda_roi", c.lambda_roi},      {"r_ann_max", c.r_ann_max},
            {"h_year", c.h_year},              {"alpha", c.alpha},
            {"K", c.K},                        {"eps", c.eps},
            {"lambda_spec", c.lambda_spec},    {"penalty_enabled", c.penalty_enabled},
            {"sharpe_enabled", c.sharpe_enabled}, {"wavelet_enabled", c.wavelet_enabled}};
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
    using json_util::read;
    const std::string ctx = "loss";
    json_util::require_known_keys(j,
                                  {"mode", "k", "lambda_roi", "r_ann_max", "h_year", "alpha", "K", "eps",
                                   "lambda_spec", "penalty_enabled", "sharpe_enabled", "wavelet_enabled"},
                                  ctx);
    LossConfig c;
    if (j.contains("mode")) {
        std::string m;
        read(j, "mode", m, ctx);
        c.mode = trade_loss_from_string(m);
    }
    read(j, "k", c.k, ctx);
    read(j, "lambda_roi", c.lambda_roi, ctx);
    read(j, "r_ann_max", c.r_ann_max, ctx);
    read(j, "h_year", c.h_year, ctx);
    read(j, "alpha", c.alpha, ctx);
    read(j, "K", c.K, ctx);
    read(j, "eps", c.eps, ctx);
    read(j, "lambda_spec", c.lambda_spec, ctx);
    read(j, "penalty_enabled", c.penalty_enabled, ctx);
    read(j, "sharpe_enabled", c.sharpe_enabled, ctx);
    read(j, "wavelet_enabled", c.wavelet_enabled, ctx);
    c.validate();
    return c;
}

Tensor soft_targets(std::span<const double> log_returns, double k) {
    if (!(k > 0.0)) throw std::invalid_argument("soft_targets: k must be positive");
    Tensor y(Shape{log_returns.size()});
    for (std::size_t i = 0; i < log_returns.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-k * log_returns[i]));
    return y;
}

Var loss_soft_label(Var logits, Var targets) {
    return ad::mean(ad::sub(ad::softplus(logits), ad::mul(targets, logits)));
}

Var loss_sigmoid_hard(Var logits, std::span<const double> simple_returns, std::span<const double> log_returns) {
    const std::size_t n = logits.value().size();
    if (simple_returns.size() != n || log_returns.size() != n) {
        throw std::invalid_argument("loss_sigmoid_hard: batch length mismatch");
    }
    // -log sigmoid(p) = softplus(-p); -log(1 - sigmoid(p)) = softplus(p)
    Tensor sign(Shape{n}), weight(Shape{n});
    for (std::size_t i = 0; i < n; ++i) {
        sign[i] = simple_returns[i] >= 0.0 ? -1.0 : 1.0;
        weight[i] = std::abs(log_returns[i]);
    }
    ad::Tape& t = *logits.tape();
    Var per = ad::mul(ad::softplus(ad::mul(logits, t.constant(sign))), t.constant(weight));
    return ad::mean(per);
}

Var loss_tanh(Var logits, Var log_returns, bool* saturated) {
    Var expo = ad::sum(ad::mul(ad::tanh(logits), log_returns));
    if (saturated) *saturated = expo.item() >= kTanhExponentCap;
    return ad::scale(ad::exp(ad::min_const(expo, kTanhExponentCap)), -1.0);
}

Var loss_regression(Var logits, Var log_returns, TradeLoss mode) {
    Var diff = ad::sub(logits, log_returns);
    switch (mode) {
        case TradeLoss::Mse: return ad::mean(ad::square(diff));
        case TradeLoss::Mae: return ad::mean(ad::abs(diff));
        default: throw std::invalid_argument("loss_regression: mode must be mse or mae");
    }
}

double roi_threshold(double horizon, double r_ann_max, double h_year) {
    if (!(horizon > 0.0 && r_ann_max > 0.0 && h_year > 0.0)) {
        throw std::invalid_argument("roi_threshold: arguments must be positive");
    }
    return std::pow(1.0 + r_ann_max, horizon / h_year) - 1.0;
}

Var roi_penalty(Var positions, Var log_returns, double lambda_roi, double threshold) {
    if (lambda_roi < 0.0) throw std::invalid_argument("roi_penalty: lambda_roi must be >= 0");
    Var batch_log = ad::sum(ad::mul(positions, log_returns));
    Var excess = ad::add_scalar(ad::exp(batch_log), -1.0 - threshold);
    return ad::scale(ad::square(ad::hinge(excess)), lambda_roi);
}

Var sharpe_regularizer(Var strategy_returns, double alpha, double K, double eps) {
    if (strategy_returns.value().size() < 2) throw std::invalid_argument("sharpe_regularizer: need >= 2 returns");
    Var mu = ad::mean(strategy_returns);
    Var var = ad::variance(strategy_returns);
    Var sd = var.item() > 0.0 ? ad::sqrt(var) : strategy_returns.tape()->constant(Tensor::scalar(0.0));
    Var s = ad::div(mu, ad::add_scalar(sd, eps));
    return ad::exp(ad::scale(ad::min_const(s, sharpe_cap(K)), -alpha));
}

double sign_direction_score(std::span<const double> logits, std::span<const double> log_returns) {
    if (logits.size() != log_returns.size()) throw std::invalid_argument("sign_direction_score: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double s = logits[i] > 0.0 ? 1.0 : (logits[i] < 0.0 ? -1.0 : 0.0);
        acc += s * log_returns[i];
    }
    return -std::exp(acc);
}

nlohmann::json LossBreakdown::values() const {
    return {{"trade", trade.item()},     {"penalty", penalty.item()},          {"sharpe", sharpe.item()},
            {"wavelet", wavelet.item()}, {"total", total.item()},              {"batch_sharpe", batch_sharpe},
            {"batch_roi", batch_roi},    {"tanh_saturated", tanh_saturated}};
}

LossBreakdown total_loss(ad::Tape& tape, const LossInputs& in, const LossConfig& cfg) {
    const std::size_t n = in.logits.value().size();
    if (in.log_returns.size() != n || in.simple_returns.size() != n) {
        throw std::invalid_argument("total_loss: batch length mismatch");
    }
    LossBreakdown out;
    Var ell = tape.constant(Tensor(Shape{n}, std::vector<double>(in.log_returns.begin(), in.log_returns.end())));
    Var r = tape.constant(Tensor(Shape{n}, std::vector<double>(in.simple_returns.begin(), in.simple_returns.end())));
    Var zero = tape.constant(Tensor::scalar(0.0));

    switch (cfg.mode) {
        case TradeLoss::SoftLabel:
            out.trade = loss_soft_label(in.logits, tape.constant(soft_targets(in.log_returns, cfg.k)));
            break;
        case TradeLoss::SigmoidHard:
            out.trade = loss_sigmoid_hard(in.logits, in.simple_returns, in.log_returns);
            break;
        case TradeLoss::Tanh:
            out.trade = loss_tanh(in.logits, ell, &out.tanh_saturated);
            break;
        case TradeLoss::Mse:
        case TradeLoss::Mae:
            out.trade = loss_regression(in.logits, ell, cfg.mode);
            break;
    }

    Var positions = ad::tanh(ad::scale(in.logits, 0.5));
    Var step = ad::mul(positions, r);
    {
        double batch_log = 0.0;
        for (std::size_t i = 0; i < n; ++i) batch_log += positions.value()[i] * in.log_returns[i];
        out.batch_roi = std::expm1(batch_log);
        const auto& sv = step.value().data();
        double mu = 0.0, var = 0.0;
        for (double v : sv) mu += v;
        mu /= static_cast<double>(n);
        for (double v : sv) var += (v - mu) * (v - mu);
        var /= static_cast<double>(n);
        out.batch_sharpe = mu / (std::sqrt(var) + cfg.eps);
    }

    out.penalty = cfg.penalty_enabled
                      ? roi_penalty(positions, ell, cfg.lambda_roi,
                                    roi_threshold(static_cast<double>(n), cfg.r_ann_max, cfg.h_year))
                      : zero;
    out.sharpe = cfg.sharpe_enabled && n >= 2 ? sharpe_regularizer(step, cfg.alpha, cfg.K, cfg.eps) : zero;
    out.wavelet = cfg.wavelet_enabled && in.wavelet ? in.wavelet->total : zero;
    out.total = ad::add(ad::add(out.trade, out.penalty), ad::add(out.sharpe, out.wavelet));
    return out;
}

}  // namespace wavelab::objective
