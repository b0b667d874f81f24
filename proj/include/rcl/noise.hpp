#pragma once

#include "rcl/random.hpp"
#include "rcl/tensor.hpp"

#include <cstdint>

namespace rcl {

// Heteroscedastic Gaussian noise level function: per-pixel variance
// lambda_shot * signal + lambda_read, intensities normalized to [0, 1].
struct NoiseParams {
    double lambda_shot = 0.0;
    double lambda_read = 0.0;

    double variance(double signal) const { return lambda_shot * signal + lambda_read; }
    friend bool operator==(const NoiseParams&, const NoiseParams&) = default;
};

// Bounds on the per-image noise standard deviation, normalized units.
struct NoiseRange {
    double sigma_min = 0.0;
    double sigma_max = 20.0 / 255.0;

    // sigma bounds given on the 8-bit [0, 255] scale.
    static NoiseRange from_8bit(double lo, double hi) { return {lo / 255.0, hi / 255.0}; }
    void validate() const;
};

// sqrt(lambda_shot), sqrt(lambda_read) ~ U(sigma_min / sqrt 2, sigma_max / sqrt 2)
// independently, so the variance at full intensity lies in [sigma_min^2, sigma_max^2].
NoiseParams sample_nlf_params(const NoiseRange& range, Rng& rng);

// y + n with n_i ~ N(0, lambda_shot * y_i + lambda_read). Not clipped.
Tensor apply_nlf_noise(const Tensor& y, const NoiseParams& p, Rng& rng);

struct NoisyPair {
    Tensor first;
    Tensor second;
    NoiseParams params;
};

// One parameter draw, two independent noise realizations.
NoisyPair make_noisy_pair(const Tensor& y, const NoiseRange& range, Rng& rng);

// RGGB Bayer sampling. Accepts [3,H,W] -> [1,H,W] or [N,3,H,W] -> [N,1,H,W];
// H and W must be even.
Tensor mosaic(const Tensor& rgb);
// Colour of the Bayer site at (y, x): 0 = R, 1 = G, 2 = B.
inline std::size_t bayer_channel(std::size_t y, std::size_t x)
{
    return (y % 2 == 0) ? (x % 2 == 0 ? 0 : 1) : (x % 2 == 0 ? 1 : 2);
}

// Bilinear demosaic of an RGGB raw image ([1,H,W] or [N,1,H,W]). Sampled sites
// pass through unchanged; each missing colour is the mean of the nearest
// same-colour sites (4-neighbours first, then diagonals), using only the
// neighbours that exist at the border.
Tensor demosaic_bilinear(const Tensor& raw);

// Deterministic synthetic RGB image [3,H,W] in [0,1]: three octaves of
// bilinearly upsampled uniform grids, a random global contrast/brightness, plus
// random rectangles and a straight edge.
Tensor gen_procedural_image(std::uint64_t seed, std::size_t height, std::size_t width);

// 2x2 average-pool of an image [C,H,W] (low-resolution inputs for SR tasks).
Tensor downsample2x(const Tensor& image);

} // namespace rcl
