#pragma once

// Policy network: wavelet front-end -> branch embeddings -> fusion ->
// time2vec projection -> pre-LN Transformer encoder -> mean pool -> scalar logit.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wavelab/autodiff.hpp"
#include "wavelab/wavelet.hpp"

namespace wavelab::model {

enum class Frontend { Learnable, FrozenHaar, None };
enum class Branches { Both, LowOnly, HighOnly };
enum class Fusion { Lghi, Concat };

struct ModelConfig {
    std::size_t channels = 4;  // d, instruments in the window
    std::size_t window = 96;   // L_w
    std::size_t d_model = 32;
    std::size_t d_ff = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t t2v_dim = 8;
    double ln_eps = 1e-5;
    double gamma_init = -5.0;

    wavelet::FilterBankConfig filters;
    Frontend frontend = Frontend::Learnable;
    Branches branches = Branches::Both;
    Fusion fusion = Fusion::Lghi;
    std::optional<double> frozen_beta;

    void validate() const;
    // Reference sizes of the full-scale model (d_model 512, d_ff 1024, 6 layers, 128 heads, t2v 128).
    static ModelConfig full_scale(std::size_t channels);
};

// Activation blew up inside the encoder.
class TrainingStabilityError : public std::runtime_error {
public:
    TrainingStabilityError(const std::string& what, std::size_t layer)
        : std::runtime_error(what), layer_(layer) {}
    std::size_t layer() const { return layer_; }

private:
    std::size_t layer_;
};

// time2vec over positions 0..window-1: column 0 is omega_0*tau + phi_0,
// columns i >= 1 are sin(omega_i*tau + phi_i).
ad::Var time2vec_embed(ad::Tape& tape, ad::Var omega, ad::Var phi, std::size_t window);

struct EncoderLayer {
    ad::Var ln1_g, ln1_b, w_q, w_k, w_v, w_o, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
};

// One pre-LN block: x + MHA(LN(x)), then x + FFN(LN(x)).
ad::Var encoder_layer(ad::Var x, const EncoderLayer& p, std::size_t n_heads, double ln_eps);

class PolicyModel {
public:
    PolicyModel(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ad::ParameterStore& params() { return params_; }
    const ad::ParameterStore& params() const { return params_; }
    std::size_t parameter_count() const { return params_.count(); }
    const wavelet::SpectralGrid& grid() const { return grid_; }
    bool has_filters() const { return cfg_.frontend != Frontend::None; }

    // Logits for a batch of (window, channels) inputs, shape (B).
    ad::Var forward(ad::Tape& tape, std::span<const Tensor> windows);
    ad::Var forward_one(ad::Tape& tape, const Tensor& window);

    // Encoder stack on an embedded (window, d_model) sequence.
    ad::Var encode(ad::Tape& tape, ad::Var x);

    // Wavelet regularizer on the bound filters; requires has_filters().
    wavelet::WaveletTerms wavelet_terms(ad::Tape& tape, double lambda_spec);

    // Gradient-free logits, evaluated in chunks.
    std::vector<double> predict(std::span<const Tensor> windows, std::size_t chunk = 128);

    nlohmann::json export_filters() const;

private:
    ad::Var embed(ad::Tape& tape, const Tensor& window, ad::Var t2v);

    ModelConfig cfg_;
    wavelet::SpectralGrid grid_;
    ad::ParameterStore params_;
};

// Parameter count implied by the configuration, computed from shapes alone.
std::size_t expected_parameter_count(const ModelConfig& cfg);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

const char* to_string(Frontend f);
const char* to_string(Branches b);
const char* to_string(Fusion f);
Frontend frontend_from_string(const std::string& s);
Branches branches_from_string(const std::string& s);
Fusion fusion_from_string(const std::string& s);

// Checkpoint: <stem>.json manifest plus <stem>.bin little-endian f64 blob in
// manifest parameter order.
void save_checkpoint(const PolicyModel& model, const std::filesystem::path& stem, const nlohmann::json& extra);
PolicyModel load_checkpoint(const std::filesystem::path& stem, nlohmann::json* manifest = nullptr);

}  // namespace wavelab::model
