#include "wavelab/wavelet.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace wavelab::wavelet {

using ad::Var;

SpectralGrid SpectralGrid::build(std::size_t n_fft, std::size_t taps) {
    if (n_fft < 2 || taps < 2) throw std::invalid_argument("SpectralGrid: need n_fft >= 2 and taps >= 2");
    if (taps > n_fft) throw std::invalid_argument("SpectralGrid: taps must not exceed n_fft");
    SpectralGrid g;
    g.n_fft = n_fft;
    g.taps = taps;
    const std::size_t bins = n_fft / 2 + 1;
    g.dft_real = Tensor(Shape{bins, taps});
    g.dft_imag = Tensor(Shape{bins, taps});
    for (std::size_t k = 0; k < bins; ++k) {
        const double w = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_fft);
        g.omega.push_back(w);
        const bool single = k == 0 || (n_fft % 2 == 0 && k == n_fft / 2);
        g.weights.push_back((single ? 1.0 : 2.0) / static_cast<double>(n_fft));
        for (std::size_t n = 0; n < taps; ++n) {
            g.dft_real.at(k, n) = std::cos(w * static_cast<double>(n));
            g.dft_imag.at(k, n) = -std::sin(w * static_cast<double>(n));
        }
    }
    return g;
}

void FilterBankConfig::validate() const {
    if (taps < 2) throw std::invalid_argument("filter bank: taps must be >= 2");
    if (!(p > 0.0)) throw std::invalid_argument("filter bank: p must be positive");
    if (!(rho_min > 0.0 && rho_min < rho_max)) throw std::invalid_argument("filter bank: need 0 < rho_min < rho_max");
    if (!(eps > 0.0)) throw std::invalid_argument("filter bank: eps must be positive");
}

std::pair<Tensor, Tensor> haar_pair(std::size_t taps) {
    if (taps < 2) throw std::invalid_argument("haar_pair: taps must be >= 2");
    Tensor low(Shape{taps}), high(Shape{taps});
    low[0] = low[1] = std::numbers::sqrt2 / 2.0;
    high[0] = std::numbers::sqrt2 / 2.0;
    high[1] = -std::numbers::sqrt2 / 2.0;
    return {low, high};
}

std::pair<Tensor, Tensor> init_filters(const FilterBankConfig& cfg, std::mt19937_64& rng) {
    auto [low, high] = haar_pair(cfg.taps);
    std::normal_distribution<double> noise(0.0, cfg.init_noise);
    for (auto& v : low.data()) v += noise(rng);
    for (auto& v : high.data()) v += noise(rng);
    return {low, high};
}

Var fir_convolve(Var x, Var taps) { return ad::causal_conv(x, taps); }

Var frequency_response(Var taps, const SpectralGrid& grid) {
    if (taps.shape() != Shape{grid.taps}) {
        throw std::invalid_argument("frequency_response: taps shape " + shape_string(taps.shape()) +
                                    " does not match grid built for " + std::to_string(grid.taps) + " taps");
    }
    ad::Tape& t = *taps.tape();
    Var re = ad::matvec(t.constant(grid.dft_real), taps);
    Var im = ad::matvec(t.constant(grid.dft_imag), taps);
    return ad::add(ad::square(re), ad::square(im));
}

Var grid_average(Var per_bin, const SpectralGrid& grid) {
    Var w = per_bin.tape()->constant(Tensor::vector(grid.weights));
    return ad::sum(ad::mul(per_bin, w));
}

Var spectral_energy(Var mag2, const SpectralGrid& grid) { return grid_average(mag2, grid); }

WaveletTerms wavelet_loss(Var low, Var high, const SpectralGrid& grid, const FilterBankConfig& cfg,
                          double lambda_spec) {
    cfg.validate();
    if (lambda_spec < 0.0) throw std::invalid_argument("wavelet_loss: lambda_spec must be >= 0");
    ad::Tape& t = *low.tape();
    Var g_low = frequency_response(low, grid);
    Var g_high = frequency_response(high, grid);

    std::vector<double> up(grid.bins()), down(grid.bins());
    for (std::size_t k = 0; k < grid.bins(); ++k) {
        const double x = grid.omega[k] / std::numbers::pi;
        up[k] = std::pow(x, cfg.p);
        down[k] = std::pow(1.0 - x, cfg.p);
    }

    WaveletTerms w;
    w.low_pass = grid_average(ad::mul(g_low, t.constant(Tensor::vector(up))), grid);
    w.high_pass = grid_average(ad::mul(g_high, t.constant(Tensor::vector(down))), grid);
    w.energy_low = spectral_energy(g_low, grid);
    w.energy_high = spectral_energy(g_high, grid);
    w.overlap = cfg.overlap == OverlapMode::Binwise ? grid_average(ad::mul(g_low, g_high), grid)
                                                    : ad::mul(w.energy_low, w.energy_high);
    w.parseval = ad::square(ad::add_scalar(ad::add(w.energy_low, w.energy_high), -2.0));
    Var rho = ad::div(w.energy_high, ad::add_scalar(w.energy_low, cfg.eps));
    w.ratio = ad::add(ad::hinge(ad::add_scalar(rho, -cfg.rho_max)), ad::hinge(ad::add_scalar(ad::scale(rho, -1.0), cfg.rho_min)));
    w.total = ad::add(ad::add(ad::add(ad::scale(ad::add(w.low_pass, w.high_pass), lambda_spec), w.overlap), w.parseval),
                      w.ratio);
    return w;
}

std::pair<Var, Var> decompose(Var window, Var low, Var high) {
    return {ad::causal_conv(window, low), ad::causal_conv(window, high)};
}

double snr_diagnostic(std::span<const double> low, std::span<const double> high, double eps) {
    if (low.size() != high.size() || low.empty()) {
        throw std::invalid_argument("snr_diagnostic: branches must be non-empty and equally long");
    }
    auto pvar = [](std::span<const double> s) {
        double mu = 0.0;
        for (double v : s) mu += v;
        mu /= static_cast<double>(s.size());
        double var = 0.0;
        for (double v : s) var += (v - mu) * (v - mu);
        return var / static_cast<double>(s.size());
    };
    return pvar(low) / (pvar(high) + eps);
}

nlohmann::json export_filters(const Tensor& low, const Tensor& high, const SpectralGrid& grid) {
    ad::Tape t;
    Var gl = frequency_response(t.constant(low), grid);
    Var gh = frequency_response(t.constant(high), grid);
    return {{"n_fft", grid.n_fft},
            {"omega", grid.omega},
            {"low_taps", low.data()},
            {"high_taps", high.data()},
            {"low_response", gl.value().data()},
            {"high_response", gh.value().data()}};
}

}  // namespace wavelab::wavelet
