#include "wavelab/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace wavelab::data {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

template <class T>
T parse_number(std::string_view field, const char* name, std::size_t line_no) {
    T value{};
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
        throw std::runtime_error("line " + std::to_string(line_no) + ": cannot parse " + name + " '" +
                                 std::string(field) + "'");
    }
    return value;
}

}  // namespace

BarSeries parse_csv(std::istream& in, const std::vector<std::string>& symbols) {
    const std::set<std::string> wanted(symbols.begin(), symbols.end());
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw std::runtime_error("line 1: missing header");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCsvHeader) {
        throw std::runtime_error("line 1: expected header '" + std::string(kCsvHeader) + "', got '" + line + "'");
    }

    BarSeries out;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto f = split_fields(line);
        if (f.size() != 7) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": expected 7 fields, got " +
                                     std::to_string(f.size()));
        }
        if (f[0].empty()) throw std::runtime_error("line " + std::to_string(line_no) + ": empty symbol");
        Bar b;
        b.symbol = std::string(f[0]);
        b.timestamp = parse_number<std::int64_t>(f[1], "timestamp", line_no);
        b.open = parse_number<double>(f[2], "open", line_no);
        b.high = parse_number<double>(f[3], "high", line_no);
        b.low = parse_number<double>(f[4], "low", line_no);
        b.close = parse_number<double>(f[5], "close", line_no);
        b.volume = parse_number<double>(f[6], "volume", line_no);
        if (!(b.open > 0.0) || !(b.close > 0.0)) {
            throw std::domain_error("line " + std::to_string(line_no) + ": open and close must be positive");
        }
        if (b.volume < 0.0) throw std::domain_error("line " + std::to_string(line_no) + ": negative volume");
        if (!wanted.empty() && !wanted.count(b.symbol)) continue;
        out[b.symbol].push_back(std::move(b));
    }

    for (auto& [sym, bars] : out) {
        std::stable_sort(bars.begin(), bars.end(), [](const Bar& a, const Bar& b) { return a.timestamp < b.timestamp; });
        for (std::size_t i = 1; i < bars.size(); ++i) {
            if (bars[i].timestamp == bars[i - 1].timestamp) {
                throw std::runtime_error("duplicate bar for " + sym + " at timestamp " +
                                         std::to_string(bars[i].timestamp));
            }
        }
    }
    for (const auto& s : wanted) {
        if (!out.count(s)) throw std::runtime_error("symbol not found in csv: " + s);
    }
    return out;
}

BarSeries ingest_csv(const std::filesystem::path& path, const std::vector<std::string>& symbols) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return parse_csv(in, symbols);
}

void write_csv(std::ostream& out, const BarSeries& bars) {
    out << kCsvHeader << '\n';
    out << std::setprecision(17);
    for (const auto& [sym, series] : bars) {
        for (const Bar& b : series) {
            out << sym << ',' << b.timestamp << ',' << b.open << ',' << b.high << ',' << b.low << ',' << b.close
                << ',' << b.volume << '\n';
        }
    }
}

std::vector<double> ReturnPanel::log_column(std::size_t j) const {
    std::vector<double> col(steps());
    for (std::size_t t = 0; t < steps(); ++t) col[t] = log_at(t, j);
    return col;
}

std::size_t ReturnPanel::index_of(const std::string& symbol) const {
    auto it = std::find(symbols.begin(), symbols.end(), symbol);
    if (it == symbols.end()) throw std::out_of_range("symbol not in panel: " + symbol);
    return static_cast<std::size_t>(it - symbols.begin());
}

ReturnPanel compute_returns(const BarSeries& bars, const std::string& target, const std::vector<std::string>& symbols) {
    std::vector<std::string> order = symbols;
    if (order.empty()) {
        for (const auto& [sym, _] : bars) order.push_back(sym);
    }
    if (order.empty()) throw std::invalid_argument("compute_returns: no symbols");

    std::vector<std::int64_t> common;
    for (std::size_t k = 0; k < order.size(); ++k) {
        auto it = bars.find(order[k]);
        if (it == bars.end() || it->second.empty()) {
            throw std::invalid_argument("compute_returns: no bars for " + order[k]);
        }
        std::vector<std::int64_t> stamps;
        for (const Bar& b : it->second) stamps.push_back(b.timestamp);
        if (k == 0) {
            common = std::move(stamps);
        } else {
            std::vector<std::int64_t> merged;
            std::set_intersection(common.begin(), common.end(), stamps.begin(), stamps.end(),
                                  std::back_inserter(merged));
            common = std::move(merged);
        }
    }
    if (common.empty()) throw std::runtime_error("compute_returns: empty timestamp intersection");

    ReturnPanel p;
    p.symbols = order;
    p.timestamps = common;
    const std::size_t d = order.size(), T = common.size();
    p.simple.resize(T * d);
    p.log.resize(T * d);
    for (std::size_t j = 0; j < d; ++j) {
        const auto& series = bars.at(order[j]);
        std::size_t pos = 0;
        for (std::size_t t = 0; t < T; ++t) {
            while (series[pos].timestamp < common[t]) ++pos;
            const Bar& b = series[pos];
            const double r = b.close / b.open - 1.0;
            p.simple[t * d + j] = r;
            p.log[t * d + j] = std::log1p(r);
        }
    }
    p.target_index = p.index_of(target);
    return p;
}

ReturnPanel select_columns(const ReturnPanel& panel, const std::vector<std::string>& symbols) {
    const std::string target = panel.symbols[panel.target_index];
    if (std::find(symbols.begin(), symbols.end(), target) == symbols.end()) {
        throw std::invalid_argument("select_columns: target " + target + " must be kept");
    }
    ReturnPanel out;
    out.symbols = symbols;
    out.timestamps = panel.timestamps;
    const std::size_t d = symbols.size(), T = panel.steps();
    out.simple.resize(T * d);
    out.log.resize(T * d);
    for (std::size_t j = 0; j < d; ++j) {
        const std::size_t src = panel.index_of(symbols[j]);
        for (std::size_t t = 0; t < T; ++t) {
            out.simple[t * d + j] = panel.simple_at(t, src);
            out.log[t * d + j] = panel.log_at(t, src);
        }
    }
    out.target_index = out.index_of(target);
    return out;
}

double small_return_gap(double r) { return std::abs(std::log1p(r) - r); }

SplitRanges temporal_split(std::size_t n, const SplitSpec& spec) {
    const double fr[3] = {spec.train_frac, spec.val_frac, spec.test_frac};
    for (double f : fr) {
        if (!(f >= 0.0) || f > 1.0) throw std::invalid_argument("temporal_split: fractions must lie in [0,1]");
    }
    if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-9) {
        throw std::invalid_argument("temporal_split: fractions must sum to 1");
    }
    if (fr[0] == 0.0 || fr[1] == 0.0 || fr[2] == 0.0) {
        throw std::invalid_argument("temporal_split: empty segment (zero fraction)");
    }
    // The tiny offset keeps products like 0.7 * 10 from flooring to 6.
    auto cut = [n](double f) { return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9)); };
    const std::size_t n_train = cut(fr[0]);
    const std::size_t n_val = cut(fr[1]);
    SplitRanges s;
    s.train = {0, n_train};
    s.val = {n_train, std::min(n, n_train + n_val)};
    s.test = {s.val.end, n};
    if (s.train.size() == 0 || s.val.size() == 0 || s.test.size() == 0) {
        throw std::invalid_argument("temporal_split: empty segment (train " + std::to_string(s.train.size()) +
                                    ", val " + std::to_string(s.val.size()) + ", test " +
                                    std::to_string(s.test.size()) + ")");
    }
    return s;
}

WindowDataset::WindowDataset(ReturnPanel panel, std::size_t window_length)
    : panel_(std::move(panel)), window_length_(window_length) {
    if (window_length_ == 0 || window_length_ >= panel_.steps()) {
        throw std::invalid_argument("build_windows: window length " + std::to_string(window_length_) +
                                    " must be in [1, " + std::to_string(panel_.steps()) + ")");
    }
}

Tensor WindowDataset::window(std::size_t i) const {
    const std::size_t d = channels();
    std::vector<double> v(panel_.log.begin() + static_cast<std::ptrdiff_t>(i * d),
                          panel_.log.begin() + static_cast<std::ptrdiff_t>((i + window_length_) * d));
    return Tensor::matrix(window_length_, d, std::move(v));
}

double WindowDataset::raw_log_label(std::size_t i) const {
    return panel_.log_at(i + window_length_, panel_.target_index);
}

double WindowDataset::raw_simple_label(std::size_t i) const {
    return panel_.simple_at(i + window_length_, panel_.target_index);
}

void AccessLedger::record(Phase phase, Segment segment, std::size_t count) {
    counts_[static_cast<std::size_t>(phase)][static_cast<std::size_t>(segment)] += count;
}

std::size_t AccessLedger::reads(Phase phase, Segment segment) const {
    return counts_[static_cast<std::size_t>(phase)][static_cast<std::size_t>(segment)];
}

nlohmann::json AccessLedger::to_json() const {
    auto row = [&](Phase p) {
        return nlohmann::json{{"train", reads(p, Segment::Train)},
                              {"val", reads(p, Segment::Val)},
                              {"test", reads(p, Segment::Test)}};
    };
    return {{"fit", row(Phase::Fit)}, {"evaluation", row(Phase::Evaluation)}};
}

LabelReader::LabelReader(const WindowDataset& dataset, SplitRanges split) : dataset_(&dataset), split_(split) {
    if (split_.test.end > dataset.size()) throw std::invalid_argument("LabelReader: split exceeds dataset");
}

Segment LabelReader::segment_of(std::size_t i) const {
    if (split_.train.contains(i)) return Segment::Train;
    if (split_.val.contains(i)) return Segment::Val;
    if (split_.test.contains(i)) return Segment::Test;
    throw std::out_of_range("label index outside split: " + std::to_string(i));
}

double LabelReader::log_label(std::size_t i) {
    ledger_.record(phase_, segment_of(i));
    return dataset_->raw_log_label(i);
}

double LabelReader::simple_label(std::size_t i) {
    ledger_.record(phase_, segment_of(i));
    return dataset_->raw_simple_label(i);
}

nlohmann::json to_json(const ReturnPanel& p) {
    return {{"symbols", p.symbols},
            {"target", p.symbols[p.target_index]},
            {"timestamps", p.timestamps},
            {"simple", p.simple},
            {"log", p.log}};
}

ReturnPanel panel_from_json(const nlohmann::json& j) {
    ReturnPanel p;
    p.symbols = j.at("symbols").get<std::vector<std::string>>();
    p.timestamps = j.at("timestamps").get<std::vector<std::int64_t>>();
    p.simple = j.at("simple").get<std::vector<double>>();
    p.log = j.at("log").get<std::vector<double>>();
    if (p.simple.size() != p.steps() * p.width() || p.log.size() != p.simple.size()) {
        throw std::invalid_argument("panel json: matrix size does not match symbols x timestamps");
    }
    p.target_index = p.index_of(j.at("target").get<std::string>());
    return p;
}

}  // namespace wavelab::data
