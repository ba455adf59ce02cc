#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wavelab/config.hpp"
#include "wavelab/experiment.hpp"
#include "wavelab/json_util.hpp"
#include "wavelab/parallel.hpp"
#include "wavelab/train.hpp"

using namespace wavelab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

config::ExperimentConfig tiny() {
    auto c = config::preset("desk");
    c.data.synth.instruments = 3;
    c.data.synth.steps = 400;
    c.model.window = 16;
    c.model.d_model = 8;
    c.model.d_ff = 16;
    c.model.n_layers = 1;
    c.model.n_heads = 2;
    c.model.t2v_dim = 2;
    c.model.filters.taps = 4;
    c.model.filters.n_fft = 16;
    c.optim.epochs = 2;
    c.optim.phase1_epochs = 1;
    c.optim.batch_size = 32;
    c.optim.lr = 1e-3;
    c.seeds = {1, 2};
    return c;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("wavelab_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Config, RoundTripAndHash) {
    auto c = tiny();
    auto back = config::from_json(config::to_json(c));
    EXPECT_EQ(config::to_json(back), config::to_json(c));
    EXPECT_EQ(config::config_hash(back), config::config_hash(c));
    back.loss.lambda_roi = 0.75;
    EXPECT_NE(config::config_hash(back), config::config_hash(c));
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
    EXPECT_THROW(config::from_json({{"modle", json::object()}}), ConfigError);
    EXPECT_THROW(config::from_json({{"optim", {{"lr", "fast"}}}}), ConfigError);
    EXPECT_THROW(config::from_json({{"loss", {{"mode", "hinge"}}}}), ConfigError);
    EXPECT_THROW(config::from_json({{"model", {{"d_model", 10}, {"n_heads", 3}}}}), ConfigError);
    EXPECT_ANY_THROW(config::from_json({{"data", {{"split", {{"train", 0.5}, {"val", 0.2}, {"test", 0.2}}}}}}));
    EXPECT_THROW(config::preset("huge"), ConfigError);
}

TEST(Config, PresetBaseIsOverridden) {
    auto c = config::from_json({{"preset", "full_scale"}, {"optim", {{"epochs", 12}, {"phase1_epochs", 2}}}});
    EXPECT_EQ(c.optim.epochs, 12u);
    EXPECT_EQ(c.optim.batch_size, 256u);
    EXPECT_EQ(c.model.d_model, 512u);
}

TEST(Config, ApplyOverride) {
    json doc = json::object();
    config::apply_override(doc, "optim.epochs=15");
    config::apply_override(doc, "loss.mode=tanh");
    config::apply_override(doc, "model.frozen_beta=0.2");
    EXPECT_EQ(doc["optim"]["epochs"], 15);
    EXPECT_EQ(doc["loss"]["mode"], "tanh");
    auto c = config::from_json(doc);
    EXPECT_EQ(c.optim.epochs, 15u);
    EXPECT_EQ(c.loss.mode, objective::TradeLoss::Tanh);
    EXPECT_EQ(c.model.frozen_beta, 0.2);
    EXPECT_ANY_THROW(config::apply_override(doc, "no_equals_sign"));
}

TEST(MeanStd, SampleStatistics) {
    auto s = experiment::mean_std(std::vector<double>{1.0, 2.0, 3.0, 4.0});
    EXPECT_DOUBLE_EQ(s.mean, 2.5);
    EXPECT_NEAR(s.std, std::sqrt(5.0 / 3.0), 1e-15);
    EXPECT_EQ(s.n, 4u);
    EXPECT_THROW(experiment::mean_std(std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Threads, EnvironmentCapsTheBudget) {
    ::setenv("WAVELAB_THREADS", "3", 1);
    EXPECT_EQ(thread_budget(), 3u);
    ::setenv("WAVELAB_THREADS", "0", 1);
    EXPECT_GE(thread_budget(), 1u);
    ::unsetenv("WAVELAB_THREADS");
    EXPECT_GE(thread_budget(), 1u);
}

TEST(Optim, AdamFirstStepMovesByLearningRate) {
    ad::ParameterStore store;
    auto& p = store.add("w", Tensor::vector({1.0, -2.0}));
    p.grad = Tensor::vector({0.5, -3.0});
    train::Adam adam(0.1, 0.9, 0.999, 1e-8);
    adam.step(store);
    EXPECT_NEAR(p.value[0], 0.9, 1e-7);
    EXPECT_NEAR(p.value[1], -1.9, 1e-7);
    EXPECT_EQ(adam.steps(), 1u);
    p.grad = Tensor::vector({3.0, 4.0});
    EXPECT_DOUBLE_EQ(train::clip_grad_norm(store, 1.0), 5.0);
    EXPECT_NEAR(train::grad_norm(store), 1.0, 1e-15);
}

TEST(Train, DeterministicLeakFreeAndSelectsEligibleEpoch) {
    auto cfg = tiny();
    auto data = train::prepare(cfg);
    auto a = train::train(cfg, data, 3);
    auto b = train::train(cfg, data, 3);
    EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
    EXPECT_EQ(a.test_reads_before_evaluation, 0u);
    ASSERT_EQ(a.epochs.size(), 2u);
    EXPECT_FALSE(a.epochs[0].eligible);
    EXPECT_TRUE(a.epochs[1].eligible);
    EXPECT_EQ(a.selected_epoch, 2u);
    EXPECT_GT(a.s_val, 0.0);
    for (const char* mode : {"long_short", "long_only", "short_only"}) {
        ASSERT_TRUE(a.test.count(mode)) << mode;
        EXPECT_EQ(a.test.at(mode).s_val, a.s_val);
        EXPECT_EQ(a.test.at(mode).positions.size(), data.split.test.size());
    }
    auto c = train::train(cfg, data, 4);
    EXPECT_NE(a.to_json().dump(), c.to_json().dump());
}

TEST(Train, ArtifactsOnDisk) {
    auto cfg = tiny();
    auto data = train::prepare(cfg);
    const auto dir = scratch("artifacts");
    train::RunOptions opt;
    opt.out_dir = dir;
    auto r = train::train(cfg, data, 1, opt);

    std::ifstream log(r.log_path);
    ASSERT_TRUE(log.good()) << r.log_path;
    std::string line;
    std::size_t rows = 0;
    while (std::getline(log, line)) {
        auto j = json::parse(line);
        EXPECT_TRUE(j.contains("epoch"));
        ++rows;
    }
    EXPECT_GT(rows, 0u);

    bool manifest = false, blob = false, equity = false, result = false;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (e.path().extension() == ".bin") blob = true;
        if (name.find("checkpoint") != std::string::npos && e.path().extension() == ".json") manifest = true;
        if (e.path().extension() == ".csv") {
            std::ifstream in(e.path());
            std::getline(in, line);
            equity = equity || line == "timestamp,equity,position,market_return";
        }
        if (name == "run_result.json") {
            std::ifstream in(e.path());
            auto back = train::run_result_from_json(json::parse(in));
            EXPECT_EQ(back.seed, r.seed);
            EXPECT_EQ(back.selected_epoch, r.selected_epoch);
            EXPECT_EQ(back.test.at("long_short").roi, r.test.at("long_short").roi);
            result = true;
        }
    }
    EXPECT_TRUE(manifest);
    EXPECT_TRUE(blob);
    EXPECT_TRUE(equity);
    EXPECT_TRUE(result);
}

TEST(Experiment, MultiSeedAndSweepShapes) {
    auto cfg = tiny();
    cfg.optim.epochs = 2;
    auto data = train::prepare(cfg);
    auto s = experiment::multi_seed(cfg, data);
    EXPECT_EQ(s.runs.size(), 2u);
    EXPECT_TRUE(s.failures.empty());
    EXPECT_EQ(s.metric("test_roi.long_short").n, 2u);
    EXPECT_THROW(s.metric("nope"), std::out_of_range);
    EXPECT_EQ(experiment::with_parameter(cfg, "lambda_roi", 2.0).loss.lambda_roi, 2.0);
    EXPECT_EQ(experiment::with_parameter(cfg, "frozen_beta", 0.3).model.frozen_beta, 0.3);
    EXPECT_ANY_THROW(experiment::with_parameter(cfg, "depth", 1.0));
    auto md = experiment::markdown_table(std::span<const experiment::SeedSummary>(&s, 1));
    EXPECT_NE(md.find("|"), std::string::npos);
}

TEST(Experiment, AblationVariantsDifferInOneKnob) {
    auto base = tiny();
    auto vars = experiment::ablation_variants(base);
    std::map<std::string, config::ExperimentConfig> by;
    for (auto& v : vars) by.emplace(v.name, v.config);
    ASSERT_TRUE(by.count("full") && by.count("no_sharpe") && by.count("concat") && by.count("frontend_none"));
    auto strip = [](config::ExperimentConfig c) {
        c.name = "x";
        c.loss.sharpe_enabled = true;
        return config::to_json(c);
    };
    EXPECT_EQ(strip(by.at("full")), strip(by.at("no_sharpe")));
    EXPECT_FALSE(by.at("no_sharpe").loss.sharpe_enabled);
    EXPECT_EQ(by.at("concat").model.fusion, model::Fusion::Concat);
    EXPECT_EQ(by.at("frontend_none").model.frontend, model::Frontend::None);
}

#ifdef WAVELAB_CLI_PATH
TEST(Cli, RejectsInvalidConfigAndRunsSynth) {
    const auto dir = scratch("cli");
    {
        std::ofstream bad(dir / "bad.json");
        bad << "{ not json";
    }
    const std::string cli = WAVELAB_CLI_PATH;
    const std::string quiet = " > " + (dir / "out.txt").string() + " 2>&1";
    EXPECT_NE(std::system((cli + " train --config " + (dir / "bad.json").string() + quiet).c_str()), 0);
    EXPECT_NE(std::system((cli + " train --set optim.bogus=1" + quiet).c_str()), 0);
    EXPECT_EQ(std::system((cli + " synth --set data.synth.steps=50 --out-dir " + dir.string() + quiet).c_str()), 0);
    bool csv = false;
    for (const auto& e : fs::directory_iterator(dir)) csv = csv || e.path().extension() == ".csv";
    EXPECT_TRUE(csv);
}
#endif
