#include "wavelab/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "wavelab/objective.hpp"
#include "wavelab/selection.hpp"
#include "wavelab/synth.hpp"

namespace wavelab::train {

using nlohmann::json;

data::ReturnPanel load_panel(const config::ExperimentConfig& cfg, std::size_t threads, json* selection_report) {
    data::BarSeries bars;
    std::string target = cfg.data.target;
    if (cfg.data.csv.empty()) {
        bars = synth::synthesize_panel(cfg.data.synth).bars;
        target = cfg.data.synth.target;
    } else {
        std::vector<std::string> wanted = cfg.data.symbols;
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), target) == wanted.end()) {
            wanted.insert(wanted.begin(), target);
        }
        bars = data::ingest_csv(cfg.data.csv, wanted);
    }
    std::vector<std::string> symbols = cfg.data.csv.empty() ? std::vector<std::string>{} : cfg.data.symbols;
    if (!symbols.empty() && std::find(symbols.begin(), symbols.end(), target) == symbols.end()) {
        symbols.insert(symbols.begin(), target);
    }
    data::ReturnPanel panel = data::compute_returns(bars, target, symbols);
    if (cfg.data.select_assets) {
        auto report = selection::run_selection(panel, cfg.data.selection, threads);
        if (selection_report) *selection_report = selection::to_json(report);
        panel = data::select_columns(panel, report.final_set);
    }
    return panel;
}

PreparedData prepare(const config::ExperimentConfig& cfg, std::size_t threads) {
    PreparedData out;
    data::ReturnPanel panel = load_panel(cfg, threads, &out.selection);
    out.symbols = panel.symbols;
    out.dataset = std::make_shared<const data::WindowDataset>(std::move(panel), cfg.model.window);
    out.split = data::temporal_split(out.dataset->size(), cfg.data.split);
    return out;
}

// ---------------------------------------------------------------- optimizer

void Adam::step(ad::ParameterStore& params, const std::function<bool(const std::string&)>& filter) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto& p : params.items()) {
        if (!p.trainable || (filter && !filter(p.name))) continue;
        if (p.grad.size() != p.value.size()) continue;
        auto& [m, v] = moments_[p.name];
        if (m.empty()) {
            m.assign(p.value.size(), 0.0);
            v.assign(p.value.size(), 0.0);
        }
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            m[i] = b1_ * m[i] + (1.0 - b1_) * g;
            v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
            p.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

double grad_norm(const ad::ParameterStore& params) {
    double acc = 0.0;
    for (const auto& p : params.items()) {
        if (!p.trainable) continue;
        for (double g : p.grad.data()) acc += g * g;
    }
    return std::sqrt(acc);
}

double clip_grad_norm(ad::ParameterStore& params, double max_norm) {
    const double norm = grad_norm(params);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& p : params.items()) {
            if (!p.trainable) continue;
            for (double& g : p.grad.data()) g *= s;
        }
    }
    return norm;
}

// ---------------------------------------------------------------- records

json EpochRecord::to_json() const {
    return {{"type", "epoch"},
            {"epoch", epoch},
            {"loss", loss},
            {"trade", trade},
            {"penalty", penalty},
            {"sharpe", sharpe},
            {"wavelet", wavelet},
            {"grad_norm_mean", grad_norm_mean},
            {"grad_norm_min", grad_norm_min},
            {"grad_norm_max", grad_norm_max},
            {"val_roi", val_roi},
            {"val_sharpe", val_sharpe},
            {"s_val", s_val},
            {"eligible", eligible}};
}

json RunResult::to_json(bool with_trace) const {
    json test_j = json::object();
    for (const auto& [mode, rep] : test) test_j[mode] = rep.summary();
    json epochs_j = json::array();
    for (const auto& e : epochs) epochs_j.push_back(e.to_json());
    json j = {{"seed", seed},
              {"selected_epoch", selected_epoch},
              {"checkpoint_id", checkpoint_id},
              {"val_roi", val_roi},
              {"s_val", s_val},
              {"test", test_j},
              {"epochs", epochs_j},
              {"ledger", ledger},
              {"test_reads_before_evaluation", test_reads_before_evaluation},
              {"parameter_count", parameter_count},
              {"log_path", log_path}};
    if (with_trace) j["grad_norm_trace"] = grad_norm_trace;
    return j;
}

RunResult run_result_from_json(const json& j) {
    RunResult r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.selected_epoch = j.at("selected_epoch").get<std::size_t>();
    r.checkpoint_id = j.value("checkpoint_id", "");
    r.val_roi = j.at("val_roi").get<double>();
    r.s_val = j.at("s_val").get<double>();
    for (auto it = j.at("test").begin(); it != j.at("test").end(); ++it) {
        trading::BacktestReport rep;
        const auto& s = it.value();
        rep.mode = trading::mode_from_string(s.at("mode").get<std::string>());
        rep.s_val = s.at("s_val").get<double>();
        rep.scale_source = s.value("scale_source", "");
        rep.roi = s.at("roi").get<double>();
        rep.mdd = s.at("mdd").get<double>();
        rep.trades = s.at("trades").get<std::size_t>();
        const auto& sh = s.at("sharpe");
        if (sh.is_string()) {
            rep.sharpe.value = sh.get<std::string>() == "+inf" ? INFINITY : -INFINITY;
        } else {
            rep.sharpe.value = sh.get<double>();
        }
        rep.sharpe.degenerate = s.value("sharpe_degenerate", false);
        r.test[it.key()] = rep;
    }
    if (j.contains("epochs")) {
        for (const auto& e : j.at("epochs")) {
            EpochRecord rec;
            rec.epoch = e.at("epoch").get<std::size_t>();
            rec.loss = e.value("loss", 0.0);
            rec.trade = e.value("trade", 0.0);
            rec.penalty = e.value("penalty", 0.0);
            rec.sharpe = e.value("sharpe", 0.0);
            rec.wavelet = e.value("wavelet", 0.0);
            rec.grad_norm_mean = e.value("grad_norm_mean", 0.0);
            rec.grad_norm_min = e.value("grad_norm_min", 0.0);
            rec.grad_norm_max = e.value("grad_norm_max", 0.0);
            rec.val_roi = e.value("val_roi", 0.0);
            rec.val_sharpe = e.value("val_sharpe", 0.0);
            rec.s_val = e.value("s_val", 0.0);
            rec.eligible = e.value("eligible", false);
            r.epochs.push_back(rec);
        }
    }
    r.ledger = j.value("ledger", json());
    r.test_reads_before_evaluation = j.value("test_reads_before_evaluation", std::size_t{0});
    r.parameter_count = j.value("parameter_count", std::size_t{0});
    r.log_path = j.value("log_path", "");
    if (j.contains("grad_norm_trace")) r.grad_norm_trace = j.at("grad_norm_trace").get<std::vector<double>>();
    return r;
}

// ---------------------------------------------------------------- evaluation

namespace {

std::vector<Tensor> windows_of(const data::WindowDataset& ds, data::Range range) {
    std::vector<Tensor> out;
    out.reserve(range.size());
    for (std::size_t i = range.begin; i < range.end; ++i) out.push_back(ds.window(i));
    return out;
}

struct ValidationScore {
    double roi = 0.0;
    double sharpe = 0.0;
    double s_val = 0.0;
};

// s_val is recalibrated on validation for every candidate checkpoint.
ValidationScore score_validation(model::PolicyModel& model, const std::vector<Tensor>& val_windows,
                                 const std::vector<double>& val_returns, const config::PositionConfig& position,
                                 std::size_t chunk) {
    const auto logits = model.predict(val_windows, chunk);
    const auto signals = trading::logits_to_signals(logits);
    ValidationScore s;
    s.s_val = trading::calibrate_scale(signals);
    trading::PositionRule rule{s.s_val, position.tau, position.budget, trading::Mode::LongShort, "validation"};
    const auto rep = trading::backtest(signals, val_returns, {}, rule);
    s.roi = rep.roi;
    s.sharpe = std::isfinite(rep.sharpe.value) ? rep.sharpe.value : 0.0;
    return s;
}

}  // namespace

std::map<std::string, trading::BacktestReport> evaluate_test(model::PolicyModel& model, const PreparedData& data,
                                                             data::LabelReader& reader, double s_val,
                                                             const config::PositionConfig& position,
                                                             std::size_t chunk, const std::string& scale_source) {
    if (reader.phase() != data::Phase::Evaluation) {
        throw std::logic_error("evaluate_test: reader is still in the fit phase");
    }
    const auto& ds = *data.dataset;
    const auto range = data.split.test;
    const auto logits = model.predict(windows_of(ds, range), chunk);
    const auto signals = trading::logits_to_signals(logits);
    std::vector<double> returns;
    std::vector<std::int64_t> stamps;
    for (std::size_t i = range.begin; i < range.end; ++i) {
        returns.push_back(reader.simple_label(i));
        stamps.push_back(ds.anchor_timestamp(i));
    }
    std::map<std::string, trading::BacktestReport> out;
    for (auto mode : trading::kAllModes) {
        trading::PositionRule rule{s_val, position.tau, position.budget, mode, scale_source};
        out[trading::to_string(mode)] = trading::backtest(signals, returns, stamps, rule);
    }
    return out;
}

// ---------------------------------------------------------------- training

RunResult train(const config::ExperimentConfig& cfg_in, const PreparedData& data, std::uint64_t seed,
                const RunOptions& options) {
    config::ExperimentConfig cfg = cfg_in;
    cfg.model.channels = data.dataset->channels();
    cfg.validate();
    const auto& ds = *data.dataset;
    const auto& split = data.split;

    std::ofstream log_file;
    std::ostream* log = options.log;
    RunResult result;
    result.seed = seed;
    if (options.out_dir) {
        std::filesystem::create_directories(*options.out_dir);
        result.log_path = (*options.out_dir / "train_log.jsonl").string();
        log_file.open(result.log_path);
        if (!log_file) throw std::runtime_error("cannot write " + result.log_path);
        log = &log_file;
    }
    auto emit = [&](const json& j) {
        if (log) *log << j.dump() << '\n';
    };

    model::PolicyModel model(cfg.model, seed);
    result.parameter_count = model.parameter_count();
    data::LabelReader reader(ds, split);
    Adam adam(cfg.optim.lr, cfg.optim.beta1, cfg.optim.beta2, cfg.optim.eps);

    // contiguous-time batches over the training segment; only their order is shuffled
    std::vector<data::Range> batches;
    for (std::size_t b = split.train.begin; b < split.train.end; b += cfg.optim.batch_size) {
        const data::Range r{b, std::min(b + cfg.optim.batch_size, split.train.end)};
        if (r.size() >= 2) batches.push_back(r);
    }
    if (batches.empty()) throw std::invalid_argument("train: training segment shorter than two samples");

    // training labels are read once, through the ledger
    std::vector<double> train_log(ds.size()), train_simple(ds.size());
    for (std::size_t i = split.train.begin; i < split.train.end; ++i) {
        train_log[i] = reader.log_label(i);
        train_simple[i] = reader.simple_label(i);
    }
    const auto val_windows = windows_of(ds, split.val);
    std::vector<double> val_returns;
    for (std::size_t i = split.val.begin; i < split.val.end; ++i) val_returns.push_back(reader.simple_label(i));

    std::mt19937_64 order_rng(seed * 0x9E3779B97F4A7C15ULL + 0x5851F42D4C957F2DULL);
    std::vector<double> best_params;
    double best_roi = -INFINITY;
    const bool wavelet_on = cfg.loss.wavelet_enabled && model.has_filters() &&
                            cfg.model.frontend == model::Frontend::Learnable;

    for (std::size_t epoch = 1; epoch <= cfg.optim.epochs; ++epoch) {
        const bool phase1 = epoch <= cfg.optim.phase1_epochs;
        std::vector<std::size_t> order(batches.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), order_rng);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.grad_norm_min = INFINITY;
        for (std::size_t bi = 0; bi < order.size(); ++bi) {
            const data::Range r = batches[order[bi]];
            std::vector<Tensor> windows = windows_of(ds, r);
            ad::Tape tape;
            ad::Var logits = model.forward(tape, windows);
            std::optional<wavelet::WaveletTerms> wterms;
            if (wavelet_on) wterms = model.wavelet_terms(tape, cfg.loss.lambda_spec);
            objective::LossInputs in{logits,
                                     std::span<const double>(train_log.data() + r.begin, r.size()),
                                     std::span<const double>(train_simple.data() + r.begin, r.size()),
                                     wterms ? &*wterms : nullptr};
            auto br = objective::total_loss(tape, in, cfg.loss);
            json row = br.values();
            row["type"] = "batch";
            row["epoch"] = epoch;
            row["batch"] = bi;
            row["start"] = r.begin;
            if (!std::isfinite(br.total.item())) {
                throw TrainingAbort("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                        std::to_string(bi),
                                    row);
            }
            tape.backward(br.total);
            model.params().zero_grad();
            tape.collect_param_grads();
            const double norm = grad_norm(model.params());
            row["grad_norm"] = norm;
            if (!std::isfinite(norm)) {
                throw TrainingAbort("non-finite gradient at epoch " + std::to_string(epoch) + " batch " +
                                        std::to_string(bi),
                                    row);
            }
            clip_grad_norm(model.params(), cfg.optim.clip_norm);
            if (phase1 && cfg.optim.freeze_backbone_phase1) {
                adam.step(model.params(), [](const std::string& n) { return n.rfind("frontend.", 0) == 0; });
            } else {
                adam.step(model.params());
            }
            emit(row);
            if (options.keep_grad_trace) result.grad_norm_trace.push_back(norm);

            rec.loss += br.total.item();
            rec.trade += br.trade.item();
            rec.penalty += br.penalty.item();
            rec.sharpe += br.sharpe.item();
            rec.wavelet += br.wavelet.item();
            rec.grad_norm_mean += norm;
            rec.grad_norm_min = std::min(rec.grad_norm_min, norm);
            rec.grad_norm_max = std::max(rec.grad_norm_max, norm);
        }
        const double nb = static_cast<double>(order.size());
        rec.loss /= nb;
        rec.trade /= nb;
        rec.penalty /= nb;
        rec.sharpe /= nb;
        rec.wavelet /= nb;
        rec.grad_norm_mean /= nb;

        const auto score =
            score_validation(model, val_windows, val_returns, cfg.position, cfg.optim.predict_chunk);
        rec.val_roi = score.roi;
        rec.val_sharpe = score.sharpe;
        rec.s_val = score.s_val;
        rec.eligible = !phase1;
        if (rec.eligible && score.roi > best_roi) {
            best_roi = score.roi;
            best_params = model.params().flatten();
            result.selected_epoch = epoch;
            result.val_roi = score.roi;
            result.s_val = score.s_val;
        }
        emit(rec.to_json());
        result.epochs.push_back(rec);
    }

    model.params().unflatten(best_params);
    result.checkpoint_id = "seed" + std::to_string(seed) + "-epoch" + std::to_string(result.selected_epoch);
    emit({{"type", "selection"},
          {"epoch", result.selected_epoch},
          {"val_roi", result.val_roi},
          {"s_val", result.s_val},
          {"checkpoint_id", result.checkpoint_id}});

    result.test_reads_before_evaluation = reader.ledger().reads(data::Phase::Fit, data::Segment::Test);
    reader.begin_evaluation();
    const std::string source = "validation@epoch" + std::to_string(result.selected_epoch);
    result.test = evaluate_test(model, data, reader, result.s_val, cfg.position, cfg.optim.predict_chunk, source);
    result.ledger = reader.ledger().to_json();

    if (options.out_dir) {
        const auto& dir = *options.out_dir;
        json extra = {{"checkpoint_id", result.checkpoint_id},
                      {"epoch", result.selected_epoch},
                      {"seed", seed},
                      {"s_val", result.s_val},
                      {"val_roi", result.val_roi},
                      {"symbols", data.symbols},
                      {"experiment", config::to_json(cfg)}};
        model::save_checkpoint(model, dir / "checkpoint", extra);
        for (const auto& [mode, rep] : result.test) {
            std::ofstream csv(dir / ("equity_" + mode + ".csv"));
            rep.write_equity_csv(csv);
        }
        std::ofstream(dir / "filters.json") << model.export_filters().dump(2) << '\n';
        std::ofstream(dir / "run_result.json") << result.to_json(options.keep_grad_trace).dump(2) << '\n';
    }
    return result;
}

}  // namespace wavelab::train
