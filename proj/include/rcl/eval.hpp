#pragma once

#include "rcl/train.hpp"

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace rcl {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

// Peak 1 on [0,1] intensities; +inf when the images are identical.
double psnr(const Tensor& x, const Tensor& y);

// Mean SSIM over 8x8 windows at stride 4 of the channel-mean grayscale images,
// with c1 = 0.01^2, c2 = 0.03^2, c3 = c2 / 2 and unbiased window statistics.
double ssim(const Tensor& x, const Tensor& y);

// "inf" for the infinite sentinel, shortest round-trip text otherwise.
std::string format_metric(double v);

enum class Task { Denoise, Sr2x, JDenSr2x, Jdd };

const char* task_name(Task t);
Task parse_task(const std::string& s);
HeadKind task_head(Task t);
std::size_t task_input_channels(Task t);

// denoise: noisy -> clean; sr2x: 2x average-pooled clean -> clean; jdensr2x:
// noisy low-res -> clean; jdd: mosaiced noisy raw -> clean RGB.
LabeledPair make_task_pair(const ImageRecord& r, Task t);
std::vector<LabeledPair> make_task_pairs(const Dataset& data, Task t);

struct MetricsReport {
    std::string task;
    std::string method;
    double psnr_mean = 0.0;
    double ssim_mean = 0.0;
    std::vector<double> psnr;
    std::vector<double> ssim;
    std::uint64_t seed = 0;
    std::size_t trial = 0;
};

// Runs the network on every full test image and averages the metrics.
MetricsReport evaluate(const RestorerNet& net, const std::vector<LabeledPair>& test, const std::string& task,
                       const std::string& method);

// Metric means over a set of reports (the "mean" row).
MetricsReport mean_report(const std::vector<MetricsReport>& trials);

struct ProxyResult {
    std::vector<MetricsReport> trials;
    MetricsReport mean;
    // Networks after fine-tuning, one per trial.
    std::vector<ModelParams> finetuned;
};

// Per trial: fresh task head (seeded by trial), everything else frozen,
// supervised fine-tuning on `train`, then PSNR/SSIM on `test`.
ProxyResult proxy_evaluate(const ModelParams& pretrained, Task task, const std::vector<LabeledPair>& train,
                           const std::vector<LabeledPair>& test, std::size_t trials, const FinetuneConfig& cfg,
                           const std::string& method = "proxy");

enum class DensityPhase { TrueNoise, PreTraining, PostTraining };
const char* phase_name(DensityPhase p);

struct DensityRecord {
    DensityPhase phase = DensityPhase::TrueNoise;
    std::vector<double> values;
    double positive_fraction() const;
    double mean() const;
};

// Samples anchor/positive crops from one image (overlap >= overlap_min) and a
// negative crop from another, and records EMD(anchor, neg) - EMD(anchor, pos)
// of their residuals: the injected noise when `net` is empty, otherwise the
// network residual on the noisy crops. The triple sampling depends only on
// `seed`, so phases compare the same crops.
DensityRecord density_analysis(const RestorerNet* net, const Dataset& data, std::size_t n_triples,
                               std::size_t crop, double overlap_min, std::uint64_t seed, DensityPhase phase);

// Seeded permutation of [0, pool); count-k subsets are its prefixes.
std::vector<std::size_t> label_order(std::size_t pool, std::uint64_t seed);

struct SweepRow {
    std::size_t count = 0;
    std::optional<MetricsReport> supervised;
    MetricsReport rcl;
};

// For each label count: supervised training from scratch on the subset, and
// full fine-tuning of the pretrained network on the same subset with the same
// seeds. Count 0 evaluates the pretrained network directly.
std::vector<SweepRow> label_efficiency_sweep(const ModelParams& pretrained, const std::vector<LabeledPair>& pool,
                                             const std::vector<LabeledPair>& test,
                                             const std::vector<std::size_t>& counts, const FinetuneConfig& cfg,
                                             Arch arch = Arch::UnetSmall);

class InsufficientLabelsError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace rcl
