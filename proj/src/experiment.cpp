#include "wavelab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "wavelab/parallel.hpp"

namespace wavelab::experiment {

using nlohmann::json;

MetricStat mean_std(std::span<const double> values) {
    if (values.size() < 2) throw std::invalid_argument("mean_std: need at least two values");
    MetricStat s;
    s.n = values.size();
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(s.n);
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
    return s;
}

const MetricStat& SeedSummary::metric(const std::string& key) const {
    auto it = metrics.find(key);
    if (it == metrics.end()) throw std::out_of_range("summary '" + name + "' has no metric '" + key + "'");
    return it->second;
}

json SeedSummary::to_json() const {
    json m = json::object();
    for (const auto& [k, v] : metrics) m[k] = {{"mean", v.mean}, {"std", v.std}, {"n", v.n}};
    json f = json::object();
    for (const auto& [seed, err] : failures) f[std::to_string(seed)] = err;
    json runs_j = json::array();
    for (const auto& r : runs) runs_j.push_back(r.to_json());
    return {{"name", name},         {"config_hash", config_hash}, {"seeds", seeds},
            {"failures", f},        {"metrics", m},               {"parameter_count", parameter_count},
            {"runs", runs_j}};
}

SeedSummary summarize(const std::string& name, const std::string& config_hash,
                      const std::vector<train::RunResult>& runs, const std::map<std::uint64_t, std::string>& failures) {
    SeedSummary s;
    s.name = name;
    s.config_hash = config_hash;
    s.failures = failures;
    s.runs = runs;
    for (const auto& r : runs) s.seeds.push_back(r.seed);
    if (!runs.empty()) s.parameter_count = runs.front().parameter_count;

    std::map<std::string, std::vector<double>> cols;
    for (const auto& r : runs) {
        cols["val_roi"].push_back(r.val_roi);
        for (const auto& e : r.epochs) {
            if (e.epoch == r.selected_epoch) cols["val_sharpe"].push_back(e.val_sharpe);
        }
        for (const auto& [mode, rep] : r.test) {
            cols["test_roi." + mode].push_back(rep.roi);
            cols["test_mdd." + mode].push_back(rep.mdd);
            cols["test_trades." + mode].push_back(static_cast<double>(rep.trades));
            if (std::isfinite(rep.sharpe.value)) cols["test_sharpe." + mode].push_back(rep.sharpe.value);
        }
    }
    for (const auto& [k, v] : cols) {
        if (v.size() >= 2) s.metrics[k] = mean_std(v);
    }
    return s;
}

SeedSummary multi_seed(const config::ExperimentConfig& cfg, const train::PreparedData& data,
                       const JobOptions& options) {
    if (cfg.seeds.size() < 2) throw std::invalid_argument("multi_seed: need at least two seeds");
    const std::size_t n = cfg.seeds.size();
    std::vector<std::optional<train::RunResult>> results(n);
    std::vector<std::string> errors(n);
    parallel_for(n, options.threads, [&](std::size_t i) {
        train::RunOptions ro;
        ro.keep_grad_trace = options.keep_grad_trace;
        if (options.out_dir) ro.out_dir = *options.out_dir / ("seed_" + std::to_string(cfg.seeds[i]));
        try {
            results[i] = train::train(cfg, data, cfg.seeds[i], ro);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    std::vector<train::RunResult> ok;
    std::map<std::uint64_t, std::string> failures;
    for (std::size_t i = 0; i < n; ++i) {
        if (results[i]) {
            ok.push_back(std::move(*results[i]));
        } else {
            failures[cfg.seeds[i]] = errors[i];
        }
    }
    auto summary = summarize(cfg.name, config::config_hash(cfg), ok, failures);
    if (options.out_dir) {
        std::filesystem::create_directories(*options.out_dir);
        std::ofstream(*options.out_dir / "seed_summary.json") << summary.to_json().dump(2) << '\n';
    }
    return summary;
}

config::ExperimentConfig with_parameter(const config::ExperimentConfig& cfg, const std::string& parameter,
                                        double value) {
    config::ExperimentConfig c = cfg;
    if (parameter == "lambda_roi") {
        c.loss.lambda_roi = value;
    } else if (parameter == "lambda_spec") {
        c.loss.lambda_spec = value;
    } else if (parameter == "frozen_beta") {
        c.model.frozen_beta = value;
    } else if (parameter == "k") {
        c.loss.k = value;
    } else if (parameter == "alpha") {
        c.loss.alpha = value;
    } else if (parameter == "tau") {
        c.position.tau = value;
    } else {
        throw std::invalid_argument("sweep: unsupported parameter '" + parameter +
                                    "' (lambda_roi|lambda_spec|frozen_beta|k|alpha|tau)");
    }
    std::ostringstream name;
    name << cfg.name << '.' << parameter << '=' << value;
    c.name = name.str();
    c.validate();
    return c;
}

json SweepTable::to_json() const {
    json rows = json::array();
    for (std::size_t i = 0; i < values.size(); ++i) {
        json row = cells[i].to_json();
        row["value"] = values[i];
        rows.push_back(row);
    }
    return {{"parameter", parameter}, {"best_by_validation", values.empty() ? json() : json(values[best_by_validation])},
            {"rows", rows}};
}

namespace {

std::string stat_cells(const SeedSummary& s, const std::vector<std::string>& keys) {
    std::ostringstream out;
    out << std::setprecision(10);
    for (const auto& k : keys) {
        auto it = s.metrics.find(k);
        if (it == s.metrics.end()) {
            out << ",,";
        } else {
            out << ',' << it->second.mean << ',' << it->second.std;
        }
    }
    return out.str();
}

const std::vector<std::string> kTableKeys = {"val_roi",
                                             "val_sharpe",
                                             "test_roi.long_short",
                                             "test_sharpe.long_short",
                                             "test_mdd.long_short",
                                             "test_roi.long_only",
                                             "test_roi.short_only"};

std::string header_cells() {
    std::string h;
    for (const auto& k : kTableKeys) h += "," + k + "_mean," + k + "_std";
    return h;
}

}  // namespace

std::string SweepTable::to_csv() const {
    std::ostringstream out;
    out << "value" << header_cells() << ",failures\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
        out << values[i] << stat_cells(cells[i], kTableKeys) << ',' << cells[i].failures.size() << '\n';
    }
    return out.str();
}

SweepTable sweep(const config::ExperimentConfig& cfg, const train::PreparedData& data, const std::string& parameter,
                 const std::vector<double>& values, const JobOptions& options) {
    if (values.empty()) throw std::invalid_argument("sweep: empty value list");
    SweepTable t;
    t.parameter = parameter;
    t.values = values;
    double best = -INFINITY;
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto c = with_parameter(cfg, parameter, values[i]);
        JobOptions jo = options;
        if (parameter == "frozen_beta") jo.keep_grad_trace = true;
        if (options.out_dir) {
            std::ostringstream dir;
            dir << parameter << '_' << values[i];
            jo.out_dir = *options.out_dir / dir.str();
        }
        t.cells.push_back(multi_seed(c, data, jo));
        const auto it = t.cells.back().metrics.find("val_roi");
        if (it != t.cells.back().metrics.end() && it->second.mean > best) {
            best = it->second.mean;
            t.best_by_validation = i;
        }
    }
    return t;
}

std::vector<Variant> ablation_variants(const config::ExperimentConfig& base) {
    using model::Branches;
    using model::Frontend;
    using model::Fusion;
    std::vector<Variant> v;
    auto add = [&](const std::string& name, auto mutate) {
        config::ExperimentConfig c = base;
        mutate(c);
        c.name = base.name + "." + name;
        v.push_back({name, c});
    };
    add("full", [](auto&) {});
    add("frontend_none", [](auto& c) { c.model.frontend = Frontend::None; });
    add("frozen_haar", [](auto& c) { c.model.frontend = Frontend::FrozenHaar; });
    add("low_only", [](auto& c) { c.model.branches = Branches::LowOnly; });
    add("high_only", [](auto& c) { c.model.branches = Branches::HighOnly; });
    add("concat", [](auto& c) { c.model.fusion = Fusion::Concat; });
    add("no_sharpe", [](auto& c) { c.loss.sharpe_enabled = false; });
    return v;
}

json AblationTable::to_json() const {
    json out = json::array();
    for (const auto& r : rows) out.push_back(r.to_json());
    return out;
}

std::string AblationTable::to_csv() const {
    std::ostringstream out;
    out << "variant,parameter_count" << header_cells() << ",failures\n";
    for (const auto& r : rows) {
        out << r.name << ',' << r.parameter_count << stat_cells(r, kTableKeys) << ',' << r.failures.size() << '\n';
    }
    return out.str();
}

AblationTable ablate(const config::ExperimentConfig& cfg, const train::PreparedData& data,
                     const std::vector<std::string>& variants, const JobOptions& options) {
    AblationTable t;
    for (auto& v : ablation_variants(cfg)) {
        if (!variants.empty() && std::find(variants.begin(), variants.end(), v.name) == variants.end()) continue;
        JobOptions jo = options;
        if (options.out_dir) jo.out_dir = *options.out_dir / v.name;
        t.rows.push_back(multi_seed(v.config, data, jo));
    }
    if (t.rows.empty()) throw std::invalid_argument("ablate: no matching variants");
    return t;
}

std::string markdown_table(std::span<const SeedSummary> summaries) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << "| run | seeds | params | val ROI | test ROI | test Sharpe | test MDD |\n";
    out << "|---|---|---|---|---|---|---|\n";
    auto cell = [](const SeedSummary& s, const std::string& k) {
        std::ostringstream c;
        c << std::fixed << std::setprecision(4);
        auto it = s.metrics.find(k);
        if (it == s.metrics.end()) return std::string("n/a");
        c << it->second.mean << " ± " << it->second.std;
        return c.str();
    };
    for (const auto& s : summaries) {
        out << "| " << s.name << " | " << s.seeds.size() << " | " << s.parameter_count << " | "
            << cell(s, "val_roi") << " | " << cell(s, "test_roi.long_short") << " | "
            << cell(s, "test_sharpe.long_short") << " | " << cell(s, "test_mdd.long_short") << " |\n";
    }
    return out.str();
}

}  // namespace wavelab::experiment
