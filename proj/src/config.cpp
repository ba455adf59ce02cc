#include "wavelab/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "wavelab/json_util.hpp"

namespace wavelab::config {

using json_util::read;
using nlohmann::json;

void ExperimentConfig::validate() const {
    model.validate();
    loss.validate();
    if (data.csv.empty()) data.synth.validate();
    if (data.target.empty()) throw ConfigError("data.target: must be non-empty");
    const auto& s = data.split;
    if (!(s.train_frac > 0 && s.val_frac > 0 && s.test_frac > 0) ||
        std::abs(s.train_frac + s.val_frac + s.test_frac - 1.0) > 1e-9) {
        throw ConfigError("data.split: fractions must be positive and sum to 1");
    }
    if (!(position.tau >= 0.0)) throw ConfigError("position.tau: must be >= 0");
    if (!(position.budget > 0.0)) throw ConfigError("position.budget: must be positive");
    if (!(optim.lr > 0.0)) throw ConfigError("optim.lr: must be positive");
    if (optim.batch_size < 2) throw ConfigError("optim.batch_size: must be >= 2");
    if (optim.epochs == 0) throw ConfigError("optim.epochs: must be positive");
    if (optim.phase1_epochs >= optim.epochs) throw ConfigError("optim.phase1_epochs: must be < optim.epochs");
    if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0)) throw ConfigError("optim.beta1: must be in [0, 1)");
    if (!(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) throw ConfigError("optim.beta2: must be in [0, 1)");
    if (optim.predict_chunk == 0) throw ConfigError("optim.predict_chunk: must be positive");
    if (seeds.empty()) throw ConfigError("seeds: must be non-empty");
}

ExperimentConfig preset(const std::string& name) {
    ExperimentConfig c;
    if (name == "desk") return c;
    if (name == "full_scale") {
        c.model = model::ModelConfig::full_scale(c.model.channels);
        c.optim.lr = 1e-5;
        c.optim.batch_size = 256;
        c.optim.epochs = 80;
        c.optim.phase1_epochs = 30;
        return c;
    }
    throw ConfigError("preset: expected desk|full_scale, got '" + name + "'");
}

json to_json(const ExperimentConfig& c) {
    const auto& d = c.data;
    json sel = {{"dtw", {{"lookback", d.selection.dtw.lookback},
                         {"threshold_quantile", d.selection.dtw.threshold_quantile}}},
                {"max_lag", d.selection.max_lag},
                {"alpha", d.selection.alpha},
                {"train_frac", d.selection.train_frac}};
    return {{"name", c.name},
            {"data",
             {{"csv", d.csv},
              {"synth", synth::to_json(d.synth)},
              {"target", d.target},
              {"symbols", d.symbols},
              {"select_assets", d.select_assets},
              {"selection", sel},
              {"split", {{"train", d.split.train_frac}, {"val", d.split.val_frac}, {"test", d.split.test_frac}}}}},
            {"model", model::to_json(c.model)},
            {"loss", objective::to_json(c.loss)},
            {"position", {{"tau", c.position.tau}, {"budget", c.position.budget}}},
            {"optim",
             {{"lr", c.optim.lr},
              {"batch_size", c.optim.batch_size},
              {"epochs", c.optim.epochs},
              {"phase1_epochs", c.optim.phase1_epochs},
              {"beta1", c.optim.beta1},
              {"beta2", c.optim.beta2},
              {"eps", c.optim.eps},
              {"clip_norm", c.optim.clip_norm},
              {"freeze_backbone_phase1", c.optim.freeze_backbone_phase1},
              {"predict_chunk", c.optim.predict_chunk}}},
            {"seeds", c.seeds}};
}

namespace {

void parse_data(const json& j, DataConfig& d) {
    const std::string ctx = "data";
    json_util::require_known_keys(j, {"csv", "synth", "target", "symbols", "select_assets", "selection", "split"}, ctx);
    read(j, "csv", d.csv, ctx);
    if (j.contains("synth")) d.synth = synth::synth_spec_from_json(j.at("synth"));
    read(j, "target", d.target, ctx);
    read(j, "symbols", d.symbols, ctx);
    read(j, "select_assets", d.select_assets, ctx);
    if (j.contains("selection")) {
        const auto& s = j.at("selection");
        const std::string sctx = "data.selection";
        json_util::require_known_keys(s, {"dtw", "max_lag", "alpha", "train_frac"}, sctx);
        if (s.contains("dtw")) {
            json_util::require_known_keys(s.at("dtw"), {"lookback", "threshold_quantile"}, sctx + ".dtw");
            read(s.at("dtw"), "lookback", d.selection.dtw.lookback, sctx + ".dtw");
            read(s.at("dtw"), "threshold_quantile", d.selection.dtw.threshold_quantile, sctx + ".dtw");
        }
        read(s, "max_lag", d.selection.max_lag, sctx);
        read(s, "alpha", d.selection.alpha, sctx);
        read(s, "train_frac", d.selection.train_frac, sctx);
    }
    if (j.contains("split")) {
        const auto& s = j.at("split");
        json_util::require_known_keys(s, {"train", "val", "test"}, "data.split");
        read(s, "train", d.split.train_frac, "data.split");
        read(s, "val", d.split.val_frac, "data.split");
        read(s, "test", d.split.test_frac, "data.split");
    }
}

}  // namespace

ExperimentConfig from_json(const json& j) {
    json_util::require_known_keys(j, {"preset", "name", "data", "model", "loss", "position", "optim", "seeds"},
                                  "config");
    std::string base = "desk";
    read(j, "preset", base, "config");
    ExperimentConfig c = preset(base);
    read(j, "name", c.name, "config");
    if (j.contains("data")) parse_data(j.at("data"), c.data);
    if (j.contains("model")) {
        json merged = model::to_json(c.model);
        json_util::require_object(j.at("model"), "model");
        merged.merge_patch(j.at("model"));
        // a null frozen_beta is removed by the patch, which restores the learned gate
        c.model = model::model_config_from_json(merged);
    }
    if (j.contains("loss")) {
        json merged = objective::to_json(c.loss);
        json_util::require_object(j.at("loss"), "loss");
        for (auto it = j.at("loss").begin(); it != j.at("loss").end(); ++it) merged[it.key()] = it.value();
        c.loss = objective::loss_config_from_json(merged);
    }
    if (j.contains("position")) {
        const auto& p = j.at("position");
        json_util::require_known_keys(p, {"tau", "budget"}, "position");
        read(p, "tau", c.position.tau, "position");
        read(p, "budget", c.position.budget, "position");
    }
    if (j.contains("optim")) {
        const auto& o = j.at("optim");
        const std::string ctx = "optim";
        json_util::require_known_keys(o,
                                      {"lr", "batch_size", "epochs", "phase1_epochs", "beta1", "beta2", "eps",
                                       "clip_norm", "freeze_backbone_phase1", "predict_chunk"},
                                      ctx);
        read(o, "lr", c.optim.lr, ctx);
        read(o, "batch_size", c.optim.batch_size, ctx);
        read(o, "epochs", c.optim.epochs, ctx);
        read(o, "phase1_epochs", c.optim.phase1_epochs, ctx);
        read(o, "beta1", c.optim.beta1, ctx);
        read(o, "beta2", c.optim.beta2, ctx);
        read(o, "eps", c.optim.eps, ctx);
        read(o, "clip_norm", c.optim.clip_norm, ctx);
        read(o, "freeze_backbone_phase1", c.optim.freeze_backbone_phase1, ctx);
        read(o, "predict_chunk", c.optim.predict_chunk, ctx);
    }
    read(j, "seeds", c.seeds, "config");
    c.validate();
    return c;
}

ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: invalid JSON in '" + path + "': " + e.what());
    }
    return from_json(j);
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "': expected key.path=value");
    }
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &doc;
    std::stringstream ss(path);
    std::string key;
    std::vector<std::string> keys;
    while (std::getline(ss, key, '.')) keys.push_back(key);
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
        if (!node->is_object()) throw ConfigError("override '" + path + "': '" + keys[i] + "' is not an object");
        node = &(*node)[keys[i]];
        if (node->is_null()) *node = json::object();
    }
    if (!node->is_object()) throw ConfigError("override '" + path + "': parent is not an object");
    (*node)[keys.back()] = value;
}

std::string config_hash(const ExperimentConfig& c) {
    const std::string text = to_json(c).dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace wavelab::config
