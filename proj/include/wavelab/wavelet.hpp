#pragma once

// Learnable FIR filter pair and its frequency-domain regularizers.
//
// Spectra are evaluated on the one-sided grid w_k = 2*pi*k/n_fft,
// k = 0..floor(n_fft/2), by multiplying the taps with constant DFT matrices.
// Grid averages use full-circle weights (1 at DC and Nyquist, 2 elsewhere,
// divided by n_fft), so the average of |H|^2 equals the tap energy.

#include <cstddef>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "wavelab/autodiff.hpp"

namespace wavelab::wavelet {

struct SpectralGrid {
    std::size_t n_fft = 0;
    std::size_t taps = 0;
    std::vector<double> omega;    // one-sided bins
    std::vector<double> weights;  // circle-average weights, already divided by n_fft
    Tensor dft_real;              // (bins, taps): cos(w_k n)
    Tensor dft_imag;              // (bins, taps): -sin(w_k n)

    static SpectralGrid build(std::size_t n_fft, std::size_t taps);
    std::size_t bins() const { return omega.size(); }
};

enum class OverlapMode { Binwise, TotalEnergy };

struct FilterBankConfig {
    std::size_t taps = 8;
    std::size_t n_fft = 81;
    double p = 2.0;
    double rho_min = 0.5;
    double rho_max = 2.0;
    double eps = 1e-8;
    OverlapMode overlap = OverlapMode::Binwise;
    double init_noise = 0.01;

    void validate() const;
};

// Haar pair zero-padded to `taps`.
std::pair<Tensor, Tensor> haar_pair(std::size_t taps);
// Haar pair plus N(0, noise^2) perturbation of every tap.
std::pair<Tensor, Tensor> init_filters(const FilterBankConfig& cfg, std::mt19937_64& rng);

ad::Var fir_convolve(ad::Var x, ad::Var taps);

// |H(w_k)|^2 for every grid bin.
ad::Var frequency_response(ad::Var taps, const SpectralGrid& grid);
// Circle-average of a per-bin quantity.
ad::Var grid_average(ad::Var per_bin, const SpectralGrid& grid);
ad::Var spectral_energy(ad::Var mag2, const SpectralGrid& grid);

struct WaveletTerms {
    ad::Var low_pass;   // high-band energy leaking through the low filter
    ad::Var high_pass;  // low-band energy leaking through the high filter
    ad::Var overlap;
    ad::Var parseval;
    ad::Var ratio;
    ad::Var energy_low;
    ad::Var energy_high;
    ad::Var total;
};

// lambda_spec * (low_pass + high_pass) + overlap + parseval + ratio
WaveletTerms wavelet_loss(ad::Var low, ad::Var high, const SpectralGrid& grid, const FilterBankConfig& cfg,
                          double lambda_spec);

// Filters every column of a (L_w, d) window with both kernels.
std::pair<ad::Var, ad::Var> decompose(ad::Var window, ad::Var low, ad::Var high);

// Var(low) / (Var(high) + eps) with population variances.
double snr_diagnostic(std::span<const double> low, std::span<const double> high, double eps = 1e-8);

// Taps and one-sided spectra for plotting.
nlohmann::json export_filters(const Tensor& low, const Tensor& high, const SpectralGrid& grid);

}  // namespace wavelab::wavelet
