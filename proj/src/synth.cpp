#include "wavelab/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "wavelab/json_util.hpp"

namespace wavelab::synth {

void SynthSpec::validate() const {
    if (instruments == 0) throw ConfigError("data.synth.instruments: must be positive");
    if (steps < 2) throw ConfigError("data.synth.steps: must be >= 2");
    if (!(period > 0.0)) throw ConfigError("data.synth.period: must be positive");
    if (!(amplitude >= 0.0)) throw ConfigError("data.synth.amplitude: must be >= 0");
    if (!(noise >= 0.0)) throw ConfigError("data.synth.noise: must be >= 0");
    if (bar_seconds <= 0) throw ConfigError("data.synth.bar_seconds: must be positive");
    if (!(start_price > 0.0)) throw ConfigError("data.synth.start_price: must be positive");
    if (target.empty()) throw ConfigError("data.synth.target: must be non-empty");
}

std::vector<std::string> SynthSpec::symbols() const {
    std::vector<std::string> out{target};
    for (std::size_t j = 1; j < instruments; ++j) out.push_back("AUX" + std::to_string(j));
    return out;
}

nlohmann::json to_json(const SynthSpec& s) {
    return {{"instruments", s.instruments},
            {"steps", s.steps},
            {"period", s.period},
            {"amplitude", s.amplitude},
            {"noise", s.noise},
            {"seed", s.seed},
            {"lead", s.lead},
            {"aux_noise", s.aux_noise},
            {"copy_target_noise", s.copy_target_noise},
            {"start_timestamp", s.start_timestamp},
            {"bar_seconds", s.bar_seconds},
            {"start_price", s.start_price},
            {"target", s.target}};
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    using json_util::read;
    const std::string ctx = "data.synth";
    json_util::require_known_keys(j,
                                  {"instruments", "steps", "period", "amplitude", "noise", "seed", "lead", "aux_noise",
                                   "copy_target_noise", "start_timestamp", "bar_seconds", "start_price", "target"},
                                  ctx);
    SynthSpec s;
    read(j, "instruments", s.instruments, ctx);
    read(j, "steps", s.steps, ctx);
    read(j, "period", s.period, ctx);
    read(j, "amplitude", s.amplitude, ctx);
    read(j, "noise", s.noise, ctx);
    read(j, "seed", s.seed, ctx);
    read(j, "lead", s.lead, ctx);
    read(j, "aux_noise", s.aux_noise, ctx);
    read(j, "copy_target_noise", s.copy_target_noise, ctx);
    read(j, "start_timestamp", s.start_timestamp, ctx);
    read(j, "bar_seconds", s.bar_seconds, ctx);
    read(j, "start_price", s.start_price, ctx);
    read(j, "target", s.target, ctx);
    s.validate();
    return s;
}

SynthPanel synthesize_panel(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 2.0 * std::numbers::pi);
    const double phase = unif(rng);
    const double aux_noise = spec.aux_noise < 0.0 ? spec.noise : spec.aux_noise;
    const std::size_t max_lead = spec.lead * (spec.instruments - 1);
    const std::size_t T = spec.steps;

    auto drift = [&](double t) { return spec.amplitude * std::sin(2.0 * std::numbers::pi * t / spec.period + phase); };

    // target noise is drawn for T + max_lead bars so leading copies can see ahead
    std::vector<double> eta(T + max_lead);
    for (double& e : eta) e = gauss(rng);

    SynthPanel out;
    const auto symbols = spec.symbols();
    out.log_returns.assign(spec.instruments, std::vector<double>(T));
    for (std::size_t t = 0; t < T; ++t) out.log_returns[0][t] = drift(static_cast<double>(t)) + spec.noise * eta[t];
    for (std::size_t j = 1; j < spec.instruments; ++j) {
        const std::size_t lead = spec.lead * j;
        for (std::size_t t = 0; t < T; ++t) {
            double v = drift(static_cast<double>(t + lead)) + aux_noise * gauss(rng);
            if (spec.copy_target_noise) v += spec.noise * eta[t + lead];
            out.log_returns[j][t] = v;
        }
    }

    std::uniform_real_distribution<double> wick(0.0, 0.002);
    std::uniform_real_distribution<double> vol(500.0, 1500.0);
    for (std::size_t j = 0; j < spec.instruments; ++j) {
        auto& series = out.bars[symbols[j]];
        series.reserve(T);
        double price = spec.start_price;
        for (std::size_t t = 0; t < T; ++t) {
            data::Bar b;
            b.symbol = symbols[j];
            b.timestamp = spec.start_timestamp + static_cast<std::int64_t>(t) * spec.bar_seconds;
            b.open = price;
            b.close = price * std::exp(out.log_returns[j][t]);
            b.high = std::max(b.open, b.close) * (1.0 + wick(rng));
            b.low = std::min(b.open, b.close) * (1.0 - wick(rng));
            b.volume = vol(rng);
            price = b.close;
            series.push_back(b);
        }
    }
    return out;
}

double sign_oracle_roi(std::span<const double> simple_returns) {
    double acc = 0.0;
    for (double r : simple_returns) acc += std::log1p(std::abs(r));
    return std::expm1(acc);
}

}  // namespace wavelab::synth
