#pragma once

// Planted-signal bar generator: the target's log return carries a sinusoidal
// drift under Gaussian noise, and auxiliary instruments see the same drift
// a few bars early.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wavelab/data.hpp"

namespace wavelab::synth {

struct SynthSpec {
    std::size_t instruments = 4;  // d, target included
    std::size_t steps = 4000;     // T bars
    double period = 24.0;
    double amplitude = 0.003;
    double noise = 0.006;
    std::uint64_t seed = 7;
    std::size_t lead = 2;         // auxiliary j leads the drift by lead * j bars
    double aux_noise = -1.0;      // < 0: same as noise
    bool copy_target_noise = false;  // auxiliaries copy the target's future noise too
    std::int64_t start_timestamp = 1600000000;
    std::int64_t bar_seconds = 3600;
    double start_price = 100.0;
    std::string target = "TGT";

    void validate() const;
    std::vector<std::string> symbols() const;
};

nlohmann::json to_json(const SynthSpec& s);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

struct SynthPanel {
    data::BarSeries bars;
    std::vector<std::vector<double>> log_returns;  // per symbol, in symbols() order
};

SynthPanel synthesize_panel(const SynthSpec& spec);

// ROI of the policy that holds sign(r_t) with full size on every bar: prod(1 + |r|) - 1.
double sign_oracle_roi(std::span<const double> simple_returns);

}  // namespace wavelab::synth
