#include "wavelab/model.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "wavelab/json_util.hpp"
#include "wavelab/lghi.hpp"

namespace wavelab::model {

using ad::Var;

void ModelConfig::validate() const {
    if (channels == 0) throw ConfigError("model.channels: must be positive");
    if (window == 0) throw ConfigError("model.window: must be positive");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
        throw ConfigError("model.n_heads: d_model must be divisible by n_heads");
    }
    if (d_ff == 0) throw ConfigError("model.d_ff: must be positive");
    if (n_layers == 0) throw ConfigError("model.n_layers: must be positive");
    if (t2v_dim < 2) throw ConfigError("model.t2v_dim: must be >= 2");
    if (!(ln_eps > 0.0)) throw ConfigError("model.ln_eps: must be positive");
    if (frozen_beta && !(*frozen_beta >= 0.0)) throw ConfigError("model.frozen_beta: must be >= 0");
    try {
        filters.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("model.filters: ") + e.what());
    }
}

ModelConfig ModelConfig::full_scale(std::size_t channels) {
    ModelConfig c;
    c.channels = channels;
    c.window = 96;
    c.d_model = 512;
    c.d_ff = 1024;
    c.n_layers = 6;
    c.n_heads = 128;
    c.t2v_dim = 128;
    return c;
}

// ---------------------------------------------------------------- building blocks

Var time2vec_embed(ad::Tape& tape, Var omega, Var phi, std::size_t window) {
    const std::size_t k = omega.shape().at(0);
    if (k < 2 || phi.shape() != omega.shape()) {
        throw std::invalid_argument("time2vec: omega/phi must be equal vectors of length >= 2");
    }
    std::vector<double> tau(window);
    for (std::size_t i = 0; i < window; ++i) tau[i] = static_cast<double>(i);
    Var pos = tape.constant(Tensor::matrix(window, 1, std::move(tau)));
    Var pre = ad::add_row_vector(ad::matmul(pos, ad::reshape(omega, Shape{1, k})), phi);
    const std::array<Var, 2> parts{ad::slice(pre, 1, 0, 1), ad::sin(ad::slice(pre, 1, 1, k))};
    return ad::concat(parts, 1);
}

Var encoder_layer(Var x, const EncoderLayer& p, std::size_t n_heads, double ln_eps) {
    const std::size_t dm = x.shape().at(1);
    const std::size_t dh = dm / n_heads;
    Var h = ad::layer_norm(x, p.ln1_g, p.ln1_b, ln_eps);
    Var q = ad::matmul(h, p.w_q);
    Var k = ad::matmul(h, p.w_k);
    Var v = ad::matmul(h, p.w_v);
    std::vector<Var> heads;
    heads.reserve(n_heads);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t i = 0; i < n_heads; ++i) {
        Var qh = ad::slice(q, 1, i * dh, (i + 1) * dh);
        Var kh = ad::slice(k, 1, i * dh, (i + 1) * dh);
        Var vh = ad::slice(v, 1, i * dh, (i + 1) * dh);
        Var a = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv));
        heads.push_back(ad::matmul(a, vh));
    }
    Var attn = ad::matmul(n_heads == 1 ? heads[0] : ad::concat(heads, 1), p.w_o);
    x = ad::add(x, attn);

    Var h2 = ad::layer_norm(x, p.ln2_g, p.ln2_b, ln_eps);
    Var ff = ad::gelu(ad::add_row_vector(ad::matmul(h2, p.ff1_w), p.ff1_b));
    ff = ad::add_row_vector(ad::matmul(ff, p.ff2_w), p.ff2_b);
    return ad::add(x, ff);
}

// ---------------------------------------------------------------- PolicyModel

namespace {

Tensor zeros(std::size_t n) { return Tensor(Shape{n}); }
Tensor ones(std::size_t n) { return Tensor(Shape{n}, 1.0); }

std::string layer_prefix(std::size_t l) { return "enc" + std::to_string(l); }

}  // namespace

PolicyModel::PolicyModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg_.channels, dm = cfg_.d_model;

    if (has_filters()) {
        grid_ = wavelet::SpectralGrid::build(cfg_.filters.n_fft, cfg_.filters.taps);
        if (cfg_.frontend == Frontend::Learnable) {
            auto [low, high] = wavelet::init_filters(cfg_.filters, rng);
            params_.add("frontend.low", low);
            params_.add("frontend.high", high);
        } else {
            auto [low, high] = wavelet::haar_pair(cfg_.filters.taps);
            params_.add("frontend.low", low, false);
            params_.add("frontend.high", high, false);
        }
        const bool use_low = cfg_.branches != Branches::HighOnly;
        const bool use_high = cfg_.branches != Branches::LowOnly;
        if (use_low) {
            params_.add("embed.low.w", lghi::xavier(d, dm, rng));
            params_.add("embed.low.b", zeros(dm));
        }
        if (use_high) {
            params_.add("embed.high.w", lghi::xavier(d, dm, rng));
            params_.add("embed.high.b", zeros(dm));
        }
        if (cfg_.branches == Branches::Both) {
            if (cfg_.fusion == Fusion::Lghi) {
                lghi::register_params(params_, "lghi", dm, dm, dm, rng, cfg_.gamma_init);
            } else {
                lghi::register_concat(params_, "concat", dm, rng);
            }
        }
    } else {
        params_.add("embed.raw.w", lghi::xavier(d, dm, rng));
        params_.add("embed.raw.b", zeros(dm));
    }

    {
        Tensor omega(Shape{cfg_.t2v_dim}), phi(Shape{cfg_.t2v_dim});
        std::uniform_real_distribution<double> lin(0.0, 1.0 / static_cast<double>(cfg_.window));
        std::uniform_real_distribution<double> freq(0.05, 1.0);
        std::uniform_real_distribution<double> phase(-std::numbers::pi, std::numbers::pi);
        omega[0] = lin(rng);
        for (std::size_t i = 1; i < cfg_.t2v_dim; ++i) {
            omega[i] = freq(rng);
            phi[i] = phase(rng);
        }
        params_.add("t2v.omega", omega);
        params_.add("t2v.phi", phi);
    }
    params_.add("input.w", lghi::xavier(dm + cfg_.t2v_dim, dm, rng));
    params_.add("input.b", zeros(dm));

    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        const std::string p = layer_prefix(l);
        params_.add(p + ".ln1.g", ones(dm));
        params_.add(p + ".ln1.b", zeros(dm));
        params_.add(p + ".w_q", lghi::xavier(dm, dm, rng));
        params_.add(p + ".w_k", lghi::xavier(dm, dm, rng));
        params_.add(p + ".w_v", lghi::xavier(dm, dm, rng));
        params_.add(p + ".w_o", lghi::xavier(dm, dm, rng));
        params_.add(p + ".ln2.g", ones(dm));
        params_.add(p + ".ln2.b", zeros(dm));
        params_.add(p + ".ff1.w", lghi::xavier(dm, cfg_.d_ff, rng));
        params_.add(p + ".ff1.b", zeros(cfg_.d_ff));
        params_.add(p + ".ff2.w", lghi::xavier(cfg_.d_ff, dm, rng));
        params_.add(p + ".ff2.b", zeros(dm));
    }
    params_.add("final_ln.g", ones(dm));
    params_.add("final_ln.b", zeros(dm));
    {
        Tensor w = lghi::xavier(dm, 1, rng);
        params_.add("head.w", Tensor(Shape{dm}, w.data()));
        params_.add("head.b", Tensor::scalar(0.0));
    }
}

Var PolicyModel::embed(ad::Tape& tape, const Tensor& window, Var t2v) {
    if (window.shape() != Shape{cfg_.window, cfg_.channels}) {
        throw std::invalid_argument("model_forward: window shape " + shape_string(window.shape()) + " expected " +
                                    shape_string(Shape{cfg_.window, cfg_.channels}));
    }
    auto p = [&](const char* name) { return tape.param(params_.get(name)); };
    Var x = tape.constant(window);
    Var fused;
    if (has_filters()) {
        auto [low, high] = wavelet::decompose(x, p("frontend.low"), p("frontend.high"));
        switch (cfg_.branches) {
            case Branches::LowOnly:
                fused = ad::add_row_vector(ad::matmul(low, p("embed.low.w")), p("embed.low.b"));
                break;
            case Branches::HighOnly:
                fused = ad::add_row_vector(ad::matmul(high, p("embed.high.w")), p("embed.high.b"));
                break;
            case Branches::Both: {
                Var le = ad::add_row_vector(ad::matmul(low, p("embed.low.w")), p("embed.low.b"));
                Var he = ad::add_row_vector(ad::matmul(high, p("embed.high.w")), p("embed.high.b"));
                fused = cfg_.fusion == Fusion::Lghi
                            ? lghi::fuse(le, he, lghi::bind(tape, params_, "lghi"), cfg_.frozen_beta)
                            : lghi::concat_fuse(le, he, tape, params_, "concat");
                break;
            }
        }
    } else {
        fused = ad::add_row_vector(ad::matmul(x, p("embed.raw.w")), p("embed.raw.b"));
    }
    const std::array<Var, 2> parts{fused, t2v};
    return ad::add_row_vector(ad::matmul(ad::concat(parts, 1), p("input.w")), p("input.b"));
}

Var PolicyModel::encode(ad::Tape& tape, Var x) {
    auto p = [&](const std::string& name) { return tape.param(params_.get(name)); };
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        const std::string pre = layer_prefix(l);
        EncoderLayer layer{p(pre + ".ln1.g"), p(pre + ".ln1.b"), p(pre + ".w_q"),   p(pre + ".w_k"),
                           p(pre + ".w_v"),   p(pre + ".w_o"),   p(pre + ".ln2.g"), p(pre + ".ln2.b"),
                           p(pre + ".ff1.w"), p(pre + ".ff1.b"), p(pre + ".ff2.w"), p(pre + ".ff2.b")};
        x = encoder_layer(x, layer, cfg_.n_heads, cfg_.ln_eps);
        if (!x.value().all_finite()) {
            throw TrainingStabilityError("non-finite activation after encoder layer " + std::to_string(l), l);
        }
    }
    return ad::layer_norm(x, p("final_ln.g"), p("final_ln.b"), cfg_.ln_eps);
}

Var PolicyModel::forward(ad::Tape& tape, std::span<const Tensor> windows) {
    if (windows.empty()) throw std::invalid_argument("model_forward: empty batch");
    Var t2v = time2vec_embed(tape, tape.param(params_.get("t2v.omega")), tape.param(params_.get("t2v.phi")),
                             cfg_.window);
    Var head_w = tape.param(params_.get("head.w"));
    Var head_b = tape.param(params_.get("head.b"));
    std::vector<Var> logits;
    logits.reserve(windows.size());
    for (const Tensor& w : windows) {
        Var h = encode(tape, embed(tape, w, t2v));
        Var pooled = ad::mean_rows(h);
        logits.push_back(ad::add(ad::sum(ad::mul(pooled, head_w)), head_b));
    }
    return ad::concat(logits, 0);
}

Var PolicyModel::forward_one(ad::Tape& tape, const Tensor& window) {
    return ad::reshape(forward(tape, std::span<const Tensor>(&window, 1)), Shape{});
}

wavelet::WaveletTerms PolicyModel::wavelet_terms(ad::Tape& tape, double lambda_spec) {
    if (!has_filters()) throw std::logic_error("wavelet_terms: model has no filter bank");
    return wavelet::wavelet_loss(tape.param(params_.get("frontend.low")), tape.param(params_.get("frontend.high")),
                                 grid_, cfg_.filters, lambda_spec);
}

std::vector<double> PolicyModel::predict(std::span<const Tensor> windows, std::size_t chunk) {
    std::vector<double> out;
    out.reserve(windows.size());
    for (std::size_t start = 0; start < windows.size(); start += chunk) {
        const std::size_t n = std::min(chunk, windows.size() - start);
        ad::Tape tape(false);
        Var logits = forward(tape, windows.subspan(start, n));
        out.insert(out.end(), logits.value().data().begin(), logits.value().data().end());
    }
    return out;
}

nlohmann::json PolicyModel::export_filters() const {
    if (!has_filters()) return nullptr;
    return wavelet::export_filters(params_.get("frontend.low").value, params_.get("frontend.high").value, grid_);
}

std::size_t expected_parameter_count(const ModelConfig& cfg) {
    const std::size_t d = cfg.channels, dm = cfg.d_model, ff = cfg.d_ff;
    std::size_t n = 0;
    if (cfg.frontend != Frontend::None) {
        n += 2 * cfg.filters.taps;
        const std::size_t branches = cfg.branches == Branches::Both ? 2 : 1;
        n += branches * (d * dm + dm);
        if (cfg.branches == Branches::Both) {
            if (cfg.fusion == Fusion::Lghi) {
                n += 4 * dm * dm + 1;
            } else {
                const std::size_t h = lghi::concat_hidden(dm);
                n += 2 * dm * h + h * dm;
            }
        }
    } else {
        n += d * dm + dm;
    }
    n += 2 * cfg.t2v_dim;
    n += (dm + cfg.t2v_dim) * dm + dm;
    n += cfg.n_layers * (4 * dm + 4 * dm * dm + dm * ff + ff + ff * dm + dm);
    n += 2 * dm;
    n += dm + 1;
    return n;
}

// ---------------------------------------------------------------- config json

const char* to_string(Frontend f) {
    switch (f) {
        case Frontend::Learnable: return "learnable";
        case Frontend::FrozenHaar: return "frozen_haar";
        case Frontend::None: return "none";
    }
    return "?";
}

const char* to_string(Branches b) {
    switch (b) {
        case Branches::Both: return "both";
        case Branches::LowOnly: return "low_only";
        case Branches::HighOnly: return "high_only";
    }
    return "?";
}

const char* to_string(Fusion f) { return f == Fusion::Lghi ? "lghi" : "concat"; }

Frontend frontend_from_string(const std::string& s) {
    if (s == "learnable") return Frontend::Learnable;
    if (s == "frozen_haar") return Frontend::FrozenHaar;
    if (s == "none") return Frontend::None;
    throw ConfigError("model.frontend: expected learnable|frozen_haar|none, got '" + s + "'");
}

Branches branches_from_string(const std::string& s) {
    if (s == "both") return Branches::Both;
    if (s == "low_only") return Branches::LowOnly;
    if (s == "high_only") return Branches::HighOnly;
    throw ConfigError("model.branches: expected both|low_only|high_only, got '" + s + "'");
}

Fusion fusion_from_string(const std::string& s) {
    if (s == "lghi") return Fusion::Lghi;
    if (s == "concat") return Fusion::Concat;
    throw ConfigError("model.fusion: expected lghi|concat, got '" + s + "'");
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"channels", c.channels},
            {"window", c.window},
            {"d_model", c.d_model},
            {"d_ff", c.d_ff},
            {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},
            {"t2v_dim", c.t2v_dim},
            {"ln_eps", c.ln_eps},
            {"gamma_init", c.gamma_init},
            {"filters",
             {{"taps", c.filters.taps},
              {"n_fft", c.filters.n_fft},
              {"p", c.filters.p},
              {"rho_min", c.filters.rho_min},
              {"rho_max", c.filters.rho_max},
              {"eps", c.filters.eps},
              {"overlap", c.filters.overlap == wavelet::OverlapMode::Binwise ? "binwise" : "total_energy"},
              {"init_noise", c.filters.init_noise}}},
            {"frontend", to_string(c.frontend)},
            {"branches", to_string(c.branches)},
            {"fusion", to_string(c.fusion)},
            {"frozen_beta", c.frozen_beta ? nlohmann::json(*c.frozen_beta) : nlohmann::json(nullptr)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    using json_util::read;
    const std::string ctx = "model";
    json_util::require_known_keys(j,
                                  {"channels", "window", "d_model", "d_ff", "n_layers", "n_heads", "t2v_dim", "ln_eps",
                                   "gamma_init", "filters", "frontend", "branches", "fusion", "frozen_beta"},
                                  ctx);
    ModelConfig c;
    read(j, "channels", c.channels, ctx);
    read(j, "window", c.window, ctx);
    read(j, "d_model", c.d_model, ctx);
    read(j, "d_ff", c.d_ff, ctx);
    read(j, "n_layers", c.n_layers, ctx);
    read(j, "n_heads", c.n_heads, ctx);
    read(j, "t2v_dim", c.t2v_dim, ctx);
    read(j, "ln_eps", c.ln_eps, ctx);
    read(j, "gamma_init", c.gamma_init, ctx);
    if (j.contains("filters")) {
        const auto& f = j.at("filters");
        const std::string fctx = ctx + ".filters";
        json_util::require_known_keys(f, {"taps", "n_fft", "p", "rho_min", "rho_max", "eps", "overlap", "init_noise"},
                                      fctx);
        read(f, "taps", c.filters.taps, fctx);
        read(f, "n_fft", c.filters.n_fft, fctx);
        read(f, "p", c.filters.p, fctx);
        read(f, "rho_min", c.filters.rho_min, fctx);
        read(f, "rho_max", c.filters.rho_max, fctx);
        read(f, "eps", c.filters.eps, fctx);
        read(f, "init_noise", c.filters.init_noise, fctx);
        std::string overlap = "binwise";
        read(f, "overlap", overlap, fctx);
        if (overlap == "binwise") {
            c.filters.overlap = wavelet::OverlapMode::Binwise;
        } else if (overlap == "total_energy") {
            c.filters.overlap = wavelet::OverlapMode::TotalEnergy;
        } else {
            throw ConfigError(fctx + ".overlap: expected binwise|total_energy, got '" + overlap + "'");
        }
    }
    std::string s;
    if (j.contains("frontend")) {
        read(j, "frontend", s, ctx);
        c.frontend = frontend_from_string(s);
    }
    if (j.contains("branches")) {
        read(j, "branches", s, ctx);
        c.branches = branches_from_string(s);
    }
    if (j.contains("fusion")) {
        read(j, "fusion", s, ctx);
        c.fusion = fusion_from_string(s);
    }
    if (j.contains("frozen_beta") && !j.at("frozen_beta").is_null()) {
        double b = 0.0;
        read(j, "frozen_beta", b, ctx);
        c.frozen_beta = b;
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------- checkpoints

namespace {

void write_le(std::ofstream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    std::array<char, 8> buf;
    std::memcpy(buf.data(), &bits, 8);
    out.write(buf.data(), 8);
}

double read_le(std::ifstream& in) {
    std::array<char, 8> buf;
    if (!in.read(buf.data(), 8)) throw std::runtime_error("checkpoint blob truncated");
    std::uint64_t bits;
    std::memcpy(&bits, buf.data(), 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

}  // namespace

void save_checkpoint(const PolicyModel& model, const std::filesystem::path& stem, const nlohmann::json& extra) {
    const auto manifest_path = std::filesystem::path(stem.string() + ".json");
    const auto blob_path = std::filesystem::path(stem.string() + ".bin");
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());

    nlohmann::json manifest = extra.is_object() ? extra : nlohmann::json::object();
    manifest["format"] = "wavelab-checkpoint-1";
    manifest["model"] = to_json(model.config());
    manifest["blob"] = blob_path.filename().string();
    manifest["byte_order"] = "little";
    nlohmann::json entries = nlohmann::json::array();
    std::size_t offset = 0;
    std::ofstream blob(blob_path, std::ios::binary);
    if (!blob) throw std::runtime_error("cannot write " + blob_path.string());
    for (const auto& p : model.params().items()) {
        entries.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}, {"trainable", p.trainable}});
        for (double v : p.value.data()) write_le(blob, v);
        offset += p.value.size();
    }
    manifest["parameters"] = entries;
    manifest["total"] = offset;
    std::ofstream out(manifest_path);
    if (!out) throw std::runtime_error("cannot write " + manifest_path.string());
    out << manifest.dump(2) << '\n';
}

PolicyModel load_checkpoint(const std::filesystem::path& stem, nlohmann::json* manifest_out) {
    const auto manifest_path = std::filesystem::path(stem.string() + ".json");
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot read " + manifest_path.string());
    nlohmann::json manifest = nlohmann::json::parse(in);
    PolicyModel model(model_config_from_json(manifest.at("model")), 0);
    const auto blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
    std::ifstream blob(blob_path, std::ios::binary);
    if (!blob) throw std::runtime_error("cannot read " + blob_path.string());
    std::vector<double> values(manifest.at("total").get<std::size_t>());
    for (auto& v : values) v = read_le(blob);
    for (const auto& e : manifest.at("parameters")) {
        auto& p = model.params().get(e.at("name").get<std::string>());
        if (e.at("shape").get<Shape>() != p.value.shape()) {
            throw std::runtime_error("checkpoint shape mismatch for " + p.name);
        }
        const auto off = e.at("offset").get<std::size_t>();
        if (off + p.value.size() > values.size()) throw std::runtime_error("checkpoint offset out of range: " + p.name);
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), p.value.size(), p.value.data().begin());
    }
    if (manifest_out) *manifest_out = std::move(manifest);
    return model;
}

}  // namespace wavelab::model
