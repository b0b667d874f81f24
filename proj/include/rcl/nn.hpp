#pragma once

#include "rcl/autodiff.hpp"
#include "rcl/gradcheck.hpp"
#include "rcl/random.hpp"

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcl {

struct ParamEntry {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

// Ordered, uniquely named parameter tensors. Order is insertion order and is
// preserved by checkpoints.
class ModelParams {
public:
    void add(std::string name, Tensor tensor, bool trainable = true);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    ParamEntry& entry(const std::string& name);
    const ParamEntry& entry(const std::string& name) const;
    void set_trainable(const std::string& name, bool trainable) { entry(name).trainable = trainable; }
    void set_all_trainable(bool trainable);
    // Replaces an existing entry in place (keeps its position).
    void replace(const std::string& name, Tensor tensor);

    std::size_t size() const { return entries_.size(); }
    std::vector<ParamEntry>& entries() { return entries_; }
    const std::vector<ParamEntry>& entries() const { return entries_; }

    // Binds every entry as a leaf named `prefix + name`; frozen entries do not
    // require grad.
    VarMap bind(Graph& g, const std::string& prefix = "") const;

private:
    std::vector<ParamEntry> entries_;
    std::map<std::string, std::size_t> index_;
};

// True iff both hold the same names in the same order with bit-identical values.
bool bit_equal(const ModelParams& a, const ModelParams& b);

enum class Arch { UnetSmall, DncnnSmall };
enum class HeadKind { Identity, Upsample2x };
enum class Init { HeUniform, Zero };

const char* arch_name(Arch a);
Arch parse_arch(const std::string& s);
const char* head_name(HeadKind h);

struct NetSpec {
    Arch arch = Arch::UnetSmall;
    std::size_t in_channels = 3;
    std::size_t out_channels = 3;
    HeadKind head = HeadKind::Identity;
};

// Restoration network f_theta.
//
// unet-small: two encoder levels (conv3x3-relu-conv3x3-relu, 2x2 avg-pool) of
// widths 16 and 32, a 64-wide bottleneck, and a mirrored decoder that
// upsamples, concatenates the skip and applies conv-relu-conv-relu. The "last
// layer" is a 1x1 conv (identity head) or 2x upsample + 3x3 conv.
//
// dncnn-small: six conv3x3(16)-relu blocks and a final 3x3 conv. Its output is
// the predicted residual; reconstruction = input - output.
class RestorerNet {
public:
    RestorerNet(NetSpec spec, std::uint64_t seed, Init init = Init::HeUniform);
    // Rebuilds the architecture from parameter names and shapes (checkpoints).
    static RestorerNet from_params(ModelParams params);

    const NetSpec& spec() const { return spec_; }
    ModelParams& params() { return params_; }
    const ModelParams& params() const { return params_; }

    // Raw network output: f(x) for unet-small, the predicted residual for dncnn-small.
    Var forward(Graph& g, Var x, const VarMap& bound) const;
    // Restored image: f(x) for unet-small, x - f(x) for dncnn-small.
    Var reconstruct(Graph& g, Var x, const VarMap& bound) const;
    Tensor forward(const Tensor& x) const;
    Tensor reconstruct(const Tensor& x) const;

    VarMap bind(Graph& g) const { return params_.bind(g); }

    std::vector<std::string> head_names() const { return {"head.w", "head.b"}; }
    // Swaps in a freshly initialized last layer.
    void replace_head(HeadKind head, std::size_t out_channels, std::uint64_t seed);
    // Marks every entry frozen except the head.
    void freeze_all_but_head();

    // Images pushed through forward() so far (batch entries, not calls).
    std::size_t forward_passes() const { return forward_passes_; }

private:
    RestorerNet() = default;
    void check_input(const Shape& s) const;

    NetSpec spec_;
    ModelParams params_;
    mutable std::size_t forward_passes_ = 0;
};

// Fixed random-weight encoder g_e with feature map phi: three levels of
// conv3x3 (8/16/32) + relu, each followed by a 2x2 avg-pool. phi flattens and
// concatenates the pooled maps of all three levels.
class FeatureEncoder {
public:
    explicit FeatureEncoder(std::uint64_t seed);
    // Externally supplied weights (same names/shapes as the seeded encoder).
    explicit FeatureEncoder(ModelParams params);

    const ModelParams& params() const { return params_; }
    std::uint64_t seed() const { return seed_; }
    static constexpr std::size_t feature_length(std::size_t h, std::size_t w)
    {
        return 8 * (h / 2) * (w / 2) + 16 * (h / 4) * (w / 4) + 32 * (h / 8) * (w / 8);
    }

    // x: [N,3,H,W] (H, W divisible by 8) -> [N, feature_length(H, W)],
    // differentiable with respect to x.
    Var features(Graph& g, Var x) const;
    Tensor encode(const Tensor& x) const;

private:
    ModelParams params_;
    std::uint64_t seed_ = 0;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-7;
};

class MissingGradientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    // Bias-corrected update of the trainable entries; frozen entries are never
    // touched. `grads` is keyed by parameter name.
    void step(ModelParams& params, const std::map<std::string, Tensor>& grads);

    std::uint64_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }
    const Tensor& first_moment(const std::string& name) const { return m_.at(name); }
    const Tensor& second_moment(const std::string& name) const { return v_.at(name); }

private:
    AdamConfig cfg_;
    std::uint64_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

// He-style uniform init U(-sqrt(6/fan_in), sqrt(6/fan_in)) for [Co,Ci,k,k].
Tensor he_uniform(const Shape& shape, Rng& rng);

} // namespace rcl
