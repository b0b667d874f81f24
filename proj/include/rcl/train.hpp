#pragma once

#include "rcl/losses.hpp"
#include "rcl/nn.hpp"
#include "rcl/noise.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace rcl {

// One dataset image. `clean` and `noisy` are [C,H,W]; `noisy` was produced by
// apply_nlf_noise(clean, params, Rng(noise_seed)).
struct ImageRecord {
    Tensor clean;
    Tensor noisy;
    NoiseParams params;
    std::uint64_t noise_seed = 0;
};
using Dataset = std::vector<ImageRecord>;

// Procedural corpus: image i uses derive_seed(seed, i) for content and its own
// noise-parameter and noise streams.
Dataset synthesize_dataset(std::size_t count, std::size_t height, std::size_t width, const NoiseRange& range,
                           std::uint64_t seed);
ImageRecord make_record(Tensor clean, const NoiseRange& range, std::uint64_t seed);

// Second independent noise realization with the record's parameters.
Tensor second_view(const ImageRecord& r);

// [C,H,W] window starting at (y, x).
Tensor crop(const Tensor& image, std::size_t y, std::size_t x, std::size_t h, std::size_t w);
// Stacks equally shaped [C,H,W] tensors into [N,C,H,W].
Tensor stack(const std::vector<Tensor>& images);
// Element n of an [N,...] batch.
Tensor unstack(const Tensor& batch, std::size_t n);

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct CropPair {
    Tensor a, b;
    std::size_t ya = 0, xa = 0, yb = 0, xb = 0;
};

// Two crops of one image whose intersection covers at least overlap_min of the
// crop area. Offsets are multiples of `align` (2 keeps Bayer phase for raw).
CropPair sample_positive_pair(const Tensor& image, std::size_t crop, double overlap_min, Rng& rng,
                              std::size_t align = 1);

enum class Domain { Rgb, Raw };
enum class PretrainMode { Rcl, N2N, N2S, ConsistencyOnly, Supervised };

const char* mode_name(PretrainMode m);
PretrainMode parse_mode(const std::string& s);
const char* domain_name(Domain d);
Domain parse_domain(const std::string& s);

struct TrainConfig {
    std::uint64_t seed = 1;
    std::size_t batch_size = 8; // N + 1
    std::size_t crop = 32;
    std::size_t steps = 2000;
    double tau = 0.5;
    double alpha = 1e-3;
    DistanceConfig distance;
    double lr = 1e-3;
    double overlap_min = 0.25;
    NoiseRange noise;
    PretrainMode mode = PretrainMode::Rcl;
    Domain domain = Domain::Rgb;
    Arch arch = Arch::UnetSmall;
    std::uint64_t encoder_seed = 7;

    void validate() const;
};

// Network matching the config's architecture and domain, seeded from cfg.seed.
RestorerNet make_initial_net(const TrainConfig& cfg);
std::uint64_t init_seed(std::uint64_t seed);

// Network input for pretraining: the noisy image, mosaiced in the raw domain.
Tensor training_input(const ImageRecord& r, Domain domain);

struct TrainPair {
    Tensor a, b;
    std::size_t instance_id = 0;
};

struct TrainBatch {
    std::vector<TrainPair> pairs;
    std::size_t crop = 0;
    std::size_t negatives() const { return pairs.size() - 1; }
    // N+1 distinct instance ids, matching crop shapes.
    void validate() const;
};

TrainBatch sample_batch(const Dataset& data, const TrainConfig& cfg, Rng& rng);

struct StepResult {
    double loss = 0.0;
    double contrastive = 0.0;
    double consistency = 0.0;
    std::map<std::string, Tensor> grads;
    std::size_t distance_evals = 0;
    std::size_t forward_passes = 0;
};

ResidualMode residual_mode(const RestorerNet& net);

// Batch-wise residual contrastive step: all 2N+2 crops go through the network;
// pair j provides (query, positive) and the second crops of the other pairs are
// its negatives. Returns alpha * sum of the N+1 contrastive terms plus the
// consistency loss averaged over all crops, and its gradients.
StepResult rcl_step(const TrainBatch& batch, const RestorerNet& net, const FeatureEncoder& enc,
                    const TrainConfig& cfg);

struct PretrainResult {
    ModelParams params;
    std::vector<double> losses;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

PretrainResult pretrain(const Dataset& data, const TrainConfig& cfg, const FeatureEncoder& enc,
                        const StepCallback& on_step = {});
PretrainResult pretrain(const Dataset& data, const TrainConfig& cfg, const StepCallback& on_step = {});

// (input, target) pair for supervised training; target may be 2x the input
// resolution and have a different channel count (raw input, RGB target).
struct LabeledPair {
    Tensor input;
    Tensor target;
};

struct FinetuneConfig {
    std::uint64_t seed = 1;
    std::size_t steps = 300;
    std::size_t batch_size = 4;
    // Crop size on the target grid.
    std::size_t crop = 32;
    double lr = 1e-3;
};

struct FinetuneOptions {
    bool freeze_all_but_head = true;
    bool replace_head = true;
    HeadKind head = HeadKind::Identity;
    std::size_t out_channels = 3;
};

struct FinetuneResult {
    RestorerNet net;
    std::vector<double> losses;
};

// Supervised L1 fine-tuning on random aligned crops. With replace_head a fresh
// task head is initialized from cfg.seed first; an empty labeled set returns
// the (head-replaced) network untrained.
FinetuneResult finetune(const ModelParams& params, const std::vector<LabeledPair>& labeled,
                        const FinetuneConfig& cfg, const FinetuneOptions& opts);
FinetuneResult finetune(RestorerNet net, const std::vector<LabeledPair>& labeled, const FinetuneConfig& cfg,
                        const FinetuneOptions& opts);

// Aligned random crop of a labeled pair; crop is measured on the target grid.
LabeledPair sample_labeled_crop(const LabeledPair& pair, std::size_t crop, Rng& rng);

} // namespace rcl
