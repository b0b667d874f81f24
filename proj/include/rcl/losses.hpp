#pragma once

#include "rcl/autodiff.hpp"
#include "rcl/nn.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcl {

enum class ResidualMode {
    Direct,      // x - f(x)
    ResidualNet, // f(x) already is the residual (dncnn-small)
    Mosaic,      // x_raw - mosaic(f(x)_rgb)
};

// Flattened residual of one crop plus its provenance.
struct ResidualTensor {
    Var samples;
    std::size_t source_id = 0;
    std::size_t crop_id = 0;
};

// x and f_out are [N,C,H,W] batches (or a single crop as N = 1); the result is
// the flattened residual of the whole input.
Var residual(Var x, Var f_out, ResidualMode mode);

// Differentiable RGGB sampling of [N,3,H,W] -> [N,1,H,W].
Var mosaic(Var rgb);

class DegenerateInputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Distance { EMD, BD, MMD };

const char* distance_name(Distance d);
Distance parse_distance(const std::string& s);

struct DistanceConfig {
    Distance kind = Distance::EMD;
    // Multiplies d before division by the temperature.
    double scale = 100.0;
    // MMD: subsample each tensor to at most this many elements.
    std::size_t mmd_max_samples = 256;
    std::uint64_t mmd_seed = 0x5eed;
};

// 1-D Wasserstein-1 between equal-size empirical distributions:
// mean |sort(a)_i - sort(b)_i|.
Var emd(Var a, Var b);

// Bhattacharyya distance of the Gaussians fitted by sample mean and unbiased
// sample variance:
//   1/4 ln(1/4 (vp/vq + vq/vp + 2)) + 1/4 (mp - mq)^2 / (vp + vq).
Var bd(Var a, Var b);

// Biased (V-statistic) squared MMD with a Gaussian kernel whose bandwidth is the
// median pairwise distance of the pooled samples (floored at 1e-6, held
// constant for differentiation). Both tensors are subsampled with one shared
// seeded index set when larger than max_samples.
Var mmd(Var a, Var b, std::size_t max_samples = 256, std::uint64_t seed = 0x5eed);

Var distance(Var a, Var b, const DistanceConfig& cfg);

// Convenience for value-only callers (analysis, tests).
double distance_value(const Tensor& a, const Tensor& b, const DistanceConfig& cfg);

struct LossCounters {
    std::size_t distance_evals = 0;
};

// -log softmax_0 of logits -s * d(q, .) / tau over [positive, negatives...],
// via log-sum-exp.
Var contrastive_loss(Var query, Var positive, const std::vector<Var>& negatives, const DistanceConfig& cfg,
                     double tau, LossCounters* counters = nullptr);

// Mean over the batch of ||phi(x_n) - phi(f_n)||_2^2.
Var consistency_loss(Var x, Var f_out, const FeatureEncoder& enc);

// Mean absolute difference between the raw input and the re-mosaiced RGB output
// (the interpolation operator is the identity at matched resolution).
Var jdd_consistency_loss(Var x_raw, Var f_out_rgb);

// alpha * contrast + consistency.
Var total_loss(Var contrastive, Var consistency, double alpha);

// Mean absolute error.
Var l1_loss(Var a, Var b);

// ||x2 - f(x1)||_1 (mean reduction) on the network's reconstruction.
Var n2n_loss(Graph& g, Var x1, Var x2, const RestorerNet& net, const VarMap& bound);

// Pixels (y, x) with (y mod 2, x mod 2) == (phase / 2, phase % 2); the four
// phases partition the image. Indices are flat offsets into [N,C,H,W].
std::vector<std::size_t> n2s_mask_indices(const Shape& shape, std::size_t phase);

// Replaces masked pixels by the mean of their available 4-neighbours.
Tensor n2s_infill(const Tensor& x, std::size_t phase);

// L1 between f(infilled x) and x over the masked pixels of `phase`.
Var n2s_masked_loss(Graph& g, Var x, const RestorerNet& net, const VarMap& bound, std::size_t phase);

} // namespace rcl
