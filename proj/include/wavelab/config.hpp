#pragma once

// Experiment configuration: data source, model, loss, position rule,
// optimizer and seed list. Parsed from JSON with unknown keys rejected.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wavelab/data.hpp"
#include "wavelab/model.hpp"
#include "wavelab/objective.hpp"
#include "wavelab/selection.hpp"
#include "wavelab/synth.hpp"
#include "wavelab/trading.hpp"

namespace wavelab::config {

struct DataConfig {
    std::string csv;  // empty: use the synthetic generator
    synth::SynthSpec synth;
    std::string target = "TGT";
    std::vector<std::string> symbols;  // empty: every symbol in the source
    bool select_assets = false;
    selection::SelectionConfig selection;
    data::SplitSpec split;
};

struct PositionConfig {
    double tau = 0.01;
    double budget = 1.0;
};

struct OptimConfig {
    double lr = 1e-3;
    std::size_t batch_size = 32;
    std::size_t epochs = 40;
    std::size_t phase1_epochs = 10;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 5.0;  // <= 0 disables clipping
    bool freeze_backbone_phase1 = false;
    std::size_t predict_chunk = 128;
};

struct ExperimentConfig {
    std::string name = "experiment";
    DataConfig data;
    model::ModelConfig model;
    objective::LossConfig loss;
    PositionConfig position;
    OptimConfig optim;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

    void validate() const;
};

// Named starting points: "desk" (the defaults above) and "full_scale" (full-scale
// model, 80/30 epochs, batch 256, lr 1e-5).
ExperimentConfig preset(const std::string& name);

nlohmann::json to_json(const ExperimentConfig& c);
// A "preset" key, if present, selects the base that the remaining keys override.
ExperimentConfig from_json(const nlohmann::json& j);
ExperimentConfig load(const std::string& path);

// Applies "a.b.c=value" to a config document; value parses as JSON, else as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Stable short hash of the canonical JSON form.
std::string config_hash(const ExperimentConfig& c);

}  // namespace wavelab::config
