// wavelab command line: ingest, select, synth, train, backtest, sweep, ablate, report.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wavelab/config.hpp"
#include "wavelab/data.hpp"
#include "wavelab/experiment.hpp"
#include "wavelab/json_util.hpp"
#include "wavelab/parallel.hpp"
#include "wavelab/selection.hpp"
#include "wavelab/synth.hpp"
#include "wavelab/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wavelab;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "wavelab_out";
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "experiment config (JSON)");
    cmd->add_option("--set", c.overrides, "override a config field, e.g. --set optim.epochs=5")->take_all();
    cmd->add_option("--seed", c.seed, "seed (single run) or first seed of the seed list");
    cmd->add_option("--out-dir", c.out_dir, "output directory");
}

config::ExperimentConfig load_config(const Common& c) {
    json doc = json::object();
    if (!c.config_path.empty()) {
        std::ifstream in(c.config_path);
        if (!in) throw ConfigError("config: cannot open '" + c.config_path + "'");
        try {
            doc = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("config: invalid JSON in '" + c.config_path + "': " + e.what());
        }
    }
    for (const auto& o : c.overrides) config::apply_override(doc, o);
    auto cfg = config::from_json(doc);
    if (c.seed) {
        const std::size_t n = cfg.seeds.size();
        cfg.seeds.clear();
        for (std::size_t i = 0; i < n; ++i) cfg.seeds.push_back(*c.seed + i);
    }
    return cfg;
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::vector<double> parse_values(const std::string& list) {
    std::vector<double> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        const double v = std::stod(item, &used);
        if (used != item.size()) throw std::invalid_argument("bad value in --values: '" + item + "'");
        out.push_back(v);
    }
    return out;
}

// RunResult files found under the given paths (files or directories).
std::vector<fs::path> collect_run_results(const std::vector<std::string>& inputs) {
    std::vector<fs::path> out;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            for (const auto& e : fs::recursive_directory_iterator(in)) {
                if (e.is_regular_file() && e.path().filename() == "run_result.json") out.push_back(e.path());
            }
        } else {
            out.emplace_back(in);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"wavelab: learnable wavelet front-end trading experiments"};
    app.require_subcommand(1);
    const std::size_t threads = thread_budget();

    Common c_ingest, c_select, c_synth, c_train, c_backtest, c_sweep, c_ablate, c_report;

    auto* ingest = app.add_subcommand("ingest", "read a bar CSV and write the aligned return panel");
    add_common(ingest, c_ingest);
    std::string csv_path;
    ingest->add_option("--csv", csv_path, "bar CSV (symbol,timestamp,open,high,low,close,volume)");

    auto* select = app.add_subcommand("select", "DTW pre-filter plus Granger/BH-FDR asset selection");
    add_common(select, c_select);

    auto* synth_cmd = app.add_subcommand("synth", "generate a planted-signal bar CSV");
    add_common(synth_cmd, c_synth);

    auto* train_cmd = app.add_subcommand("train", "train one seed and evaluate the selected checkpoint");
    add_common(train_cmd, c_train);

    auto* backtest = app.add_subcommand("backtest", "evaluate a saved checkpoint on the test segment");
    add_common(backtest, c_backtest);
    std::string checkpoint;
    backtest->add_option("--checkpoint", checkpoint, "checkpoint stem (without .json/.bin)")->required();

    auto* sweep_cmd = app.add_subcommand("sweep", "multi-seed sweep over one hyperparameter");
    add_common(sweep_cmd, c_sweep);
    std::string param, values;
    sweep_cmd->add_option("--param", param, "lambda_roi|lambda_spec|frozen_beta|k|alpha|tau")->required();
    sweep_cmd->add_option("--values", values, "comma-separated values")->required();

    auto* ablate_cmd = app.add_subcommand("ablate", "multi-seed ablation table");
    add_common(ablate_cmd, c_ablate);
    std::vector<std::string> variants;
    ablate_cmd->add_option("--variants", variants,
                           "subset of full,frontend_none,frozen_haar,low_only,high_only,concat,no_sharpe")
        ->delimiter(',');

    auto* report = app.add_subcommand("report", "aggregate RunResult JSON files into a SeedSummary");
    add_common(report, c_report);
    std::vector<std::string> inputs;
    std::string report_name = "report";
    report->add_option("--inputs", inputs, "run_result.json files or directories to scan")->required();
    report->add_option("--name", report_name, "summary name");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*ingest) {
            auto cfg = load_config(c_ingest);
            if (!csv_path.empty()) cfg.data.csv = csv_path;
            if (cfg.data.csv.empty()) throw ConfigError("data.csv: ingest needs --csv or data.csv");
            auto panel = train::load_panel(cfg, threads);
            write_json(fs::path(c_ingest.out_dir) / "panel.json", data::to_json(panel));
            std::cout << "panel: " << panel.steps() << " steps x " << panel.width() << " symbols -> "
                      << c_ingest.out_dir << "/panel.json\n";
        } else if (*select) {
            auto cfg = load_config(c_select);
            cfg.data.select_assets = false;
            auto panel = train::load_panel(cfg, threads);
            auto rep = selection::run_selection(panel, cfg.data.selection, threads);
            write_json(fs::path(c_select.out_dir) / "selection.json", selection::to_json(rep));
            std::cout << "selected:";
            for (const auto& s : rep.final_set) std::cout << ' ' << s;
            std::cout << '\n';
        } else if (*synth_cmd) {
            auto cfg = load_config(c_synth);
            if (c_synth.seed) cfg.data.synth.seed = *c_synth.seed;
            auto panel = synth::synthesize_panel(cfg.data.synth);
            const fs::path dir(c_synth.out_dir);
            fs::create_directories(dir);
            std::ofstream csv(dir / "bars.csv");
            data::write_csv(csv, panel.bars);
            write_json(dir / "synth.json", synth::to_json(cfg.data.synth));
            std::cout << "wrote " << (dir / "bars.csv").string() << '\n';
        } else if (*train_cmd) {
            auto cfg = load_config(c_train);
            const std::uint64_t seed = c_train.seed ? *c_train.seed : cfg.seeds.front();
            auto data = train::prepare(cfg, threads);
            train::RunOptions ro;
            ro.out_dir = fs::path(c_train.out_dir);
            auto r = train::train(cfg, data, seed, ro);
            if (!data.selection.is_null()) write_json(fs::path(c_train.out_dir) / "selection.json", data.selection);
            std::cout << "seed " << seed << ": selected epoch " << r.selected_epoch << ", val ROI " << r.val_roi
                      << ", test ROI " << r.test.at("long_short").roi << '\n';
        } else if (*backtest) {
            json manifest;
            auto model = model::load_checkpoint(checkpoint, &manifest);
            auto cfg = config::from_json(manifest.at("experiment"));
            if (!c_backtest.config_path.empty() || !c_backtest.overrides.empty()) cfg = load_config(c_backtest);
            auto data = train::prepare(cfg, threads);
            if (data.symbols != manifest.at("symbols").get<std::vector<std::string>>()) {
                throw std::runtime_error("backtest: data symbols differ from the checkpoint's");
            }
            data::LabelReader reader(*data.dataset, data.split);
            reader.begin_evaluation();
            const double s_val = manifest.at("s_val").get<double>();
            auto reports = train::evaluate_test(model, data, reader, s_val, cfg.position, cfg.optim.predict_chunk,
                                                "checkpoint:" + manifest.at("checkpoint_id").get<std::string>());
            const fs::path dir(c_backtest.out_dir);
            for (const auto& [mode, rep] : reports) {
                write_json(dir / ("backtest_" + mode + ".json"), rep.to_json());
                std::ofstream csv(dir / ("equity_" + mode + ".csv"));
                rep.write_equity_csv(csv);
                std::cout << mode << ": ROI " << rep.roi << ", MDD " << rep.mdd << '\n';
            }
        } else if (*sweep_cmd) {
            auto cfg = load_config(c_sweep);
            auto data = train::prepare(cfg, threads);
            experiment::JobOptions jo{fs::path(c_sweep.out_dir), threads, false};
            auto table = experiment::sweep(cfg, data, param, parse_values(values), jo);
            write_json(fs::path(c_sweep.out_dir) / "sweep.json", table.to_json());
            write_text(fs::path(c_sweep.out_dir) / "sweep.csv", table.to_csv());
            std::cout << experiment::markdown_table(table.cells);
        } else if (*ablate_cmd) {
            auto cfg = load_config(c_ablate);
            auto data = train::prepare(cfg, threads);
            experiment::JobOptions jo{fs::path(c_ablate.out_dir), threads, false};
            auto table = experiment::ablate(cfg, data, variants, jo);
            write_json(fs::path(c_ablate.out_dir) / "ablation.json", table.to_json());
            write_text(fs::path(c_ablate.out_dir) / "ablation.csv", table.to_csv());
            std::cout << experiment::markdown_table(table.rows);
        } else if (*report) {
            std::vector<train::RunResult> runs;
            for (const auto& p : collect_run_results(inputs)) {
                std::ifstream in(p);
                if (!in) throw std::runtime_error("cannot read " + p.string());
                runs.push_back(train::run_result_from_json(json::parse(in)));
            }
            if (runs.size() < 2) throw std::invalid_argument("report: need at least two RunResults");
            auto summary = experiment::summarize(report_name, "", runs);
            const fs::path dir(c_report.out_dir);
            write_json(dir / "seed_summary.json", summary.to_json());
            const std::vector<experiment::SeedSummary> rows{summary};
            const std::string md = experiment::markdown_table(rows);
            write_text(dir / "summary.md", md);
            std::ostringstream csv;
            csv << "metric,mean,std,n\n";
            for (const auto& [k, v] : summary.metrics) csv << k << ',' << v.mean << ',' << v.std << ',' << v.n << '\n';
            write_text(dir / "summary.csv", csv.str());
            std::ostringstream curves;
            curves << "seed,epoch,val_roi,grad_norm_mean,loss\n";
            for (const auto& r : summary.runs) {
                for (const auto& e : r.epochs) {
                    curves << r.seed << ',' << e.epoch << ',' << e.val_roi << ',' << e.grad_norm_mean << ','
                           << e.loss << '\n';
                }
            }
            write_text(dir / "epochs.csv", curves.str());
            std::cout << md;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
