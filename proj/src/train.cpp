#include "rcl/train.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <set>

namespace rcl {

ImageRecord make_record(Tensor clean, const NoiseRange& range, std::uint64_t seed)
{
    ImageRecord r;
    Rng param_rng(derive_seed(seed, 0));
    r.params = sample_nlf_params(range, param_rng);
    r.noise_seed = derive_seed(seed, 1);
    Rng noise_rng(r.noise_seed);
    r.noisy = apply_nlf_noise(clean, r.params, noise_rng);
    r.clean = std::move(clean);
    return r;
}

Dataset synthesize_dataset(std::size_t count, std::size_t height, std::size_t width, const NoiseRange& range,
                           std::uint64_t seed)
{
    range.validate();
    Dataset data(count);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < count; ++i)
        data[i] = make_record(gen_procedural_image(derive_seed(seed, 2 * i), height, width), range,
                              derive_seed(seed, 2 * i + 1));
    return data;
}

Tensor second_view(const ImageRecord& r)
{
    Rng rng(derive_seed(r.noise_seed, 1));
    return apply_nlf_noise(r.clean, r.params, rng);
}

Tensor crop(const Tensor& image, std::size_t y, std::size_t x, std::size_t h, std::size_t w)
{
    if (image.rank() != 3 || y + h > image.dim(1) || x + w > image.dim(2))
        throw ShapeError("crop: window (" + std::to_string(y) + "," + std::to_string(x) + ") " + std::to_string(h) +
                         "x" + std::to_string(w) + " outside " + to_string(image.shape()));
    const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
    Tensor out(Shape{C, h, w});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t r = 0; r < h; ++r)
            std::memcpy(out.ptr() + (c * h + r) * w, image.ptr() + (c * H + y + r) * W + x, w * sizeof(double));
    return out;
}

Tensor stack(const std::vector<Tensor>& images)
{
    if (images.empty()) throw ShapeError("stack: no tensors");
    Shape s{images.size()};
    s.insert(s.end(), images[0].shape().begin(), images[0].shape().end());
    Tensor out(s);
    const std::size_t n = images[0].size();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].shape() != images[0].shape())
            throw ShapeError("stack: " + to_string(images[i].shape()) + " vs " + to_string(images[0].shape()));
        std::copy(images[i].values().begin(), images[i].values().end(), out.ptr() + i * n);
    }
    return out;
}

Tensor unstack(const Tensor& batch, std::size_t n)
{
    Shape s(batch.shape().begin() + 1, batch.shape().end());
    const std::size_t len = numel(s);
    return Tensor(s, std::vector<double>(batch.ptr() + n * len, batch.ptr() + (n + 1) * len));
}

CropPair sample_positive_pair(const Tensor& image, std::size_t crop_size, double overlap_min, Rng& rng,
                              std::size_t align)
{
    if (!(overlap_min >= 0.0 && overlap_min < 1.0))
        throw ConfigError("overlap_min must lie in [0, 1), got " + std::to_string(overlap_min));
    if (align == 0 || crop_size == 0) throw ConfigError("crop size and alignment must be positive");
    if (image.rank() != 3 || image.dim(1) < crop_size || image.dim(2) < crop_size)
        throw ShapeError("sample_positive_pair: image " + to_string(image.shape()) + " smaller than crop " +
                         std::to_string(crop_size));
    const std::size_t ny = (image.dim(1) - crop_size) / align + 1;
    const std::size_t nx = (image.dim(2) - crop_size) / align + 1;
    const double need = overlap_min * static_cast<double>(crop_size * crop_size);

    CropPair p;
    p.ya = rng.index(ny) * align;
    p.xa = rng.index(nx) * align;
    auto overlap = [&](std::size_t yb, std::size_t xb) {
        const std::size_t dy = yb > p.ya ? yb - p.ya : p.ya - yb;
        const std::size_t dx = xb > p.xa ? xb - p.xa : p.xa - xb;
        if (dy >= crop_size || dx >= crop_size) return 0.0;
        return static_cast<double>((crop_size - dy) * (crop_size - dx));
    };
    p.yb = p.ya;
    p.xb = p.xa;
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const std::size_t yb = rng.index(ny) * align, xb = rng.index(nx) * align;
        if (overlap(yb, xb) >= need) {
            p.yb = yb;
            p.xb = xb;
            break;
        }
    }
    p.a = crop(image, p.ya, p.xa, crop_size, crop_size);
    p.b = crop(image, p.yb, p.xb, crop_size, crop_size);
    return p;
}

const char* mode_name(PretrainMode m)
{
    switch (m) {
    case PretrainMode::Rcl: return "rcl";
    case PretrainMode::N2N: return "n2n";
    case PretrainMode::N2S: return "n2s";
    case PretrainMode::ConsistencyOnly: return "consistency-only";
    case PretrainMode::Supervised: return "supervised";
    }
    return "?";
}

PretrainMode parse_mode(const std::string& s)
{
    for (auto m : {PretrainMode::Rcl, PretrainMode::N2N, PretrainMode::N2S, PretrainMode::ConsistencyOnly,
                   PretrainMode::Supervised})
        if (s == mode_name(m)) return m;
    throw ConfigError("unknown training mode '" + s + "' (expected rcl, n2n, n2s, consistency-only or supervised)");
}

const char* domain_name(Domain d) { return d == Domain::Rgb ? "rgb" : "raw"; }

Domain parse_domain(const std::string& s)
{
    if (s == "rgb") return Domain::Rgb;
    if (s == "raw") return Domain::Raw;
    throw ConfigError("unknown domain '" + s + "' (expected rgb or raw)");
}

void TrainConfig::validate() const
{
    if (batch_size < 2) throw ConfigError("batch size must be at least 2 (one query plus one negative)");
    if (crop == 0 || crop % 4) throw ConfigError("crop size must be a positive multiple of 4");
    if (domain == Domain::Rgb && crop % 8)
        throw ConfigError("rgb-domain crops must be a multiple of 8 (three pooling levels in the feature encoder)");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
    if (!(distance.scale > 0.0)) throw ConfigError("distance scale must be positive");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(overlap_min >= 0.0 && overlap_min < 1.0)) throw ConfigError("overlap_min must lie in [0, 1)");
    noise.validate();
    if (domain == Domain::Raw && arch != Arch::UnetSmall)
        throw ConfigError("raw-domain training needs unet-small (1-channel input, 3-channel output)");
    if (domain == Domain::Raw && (mode == PretrainMode::N2N || mode == PretrainMode::N2S))
        throw ConfigError(std::string(mode_name(mode)) + " is only defined for the rgb domain");
}

std::uint64_t init_seed(std::uint64_t seed) { return derive_seed(seed, 0x1417); }

RestorerNet make_initial_net(const TrainConfig& cfg)
{
    NetSpec spec;
    spec.arch = cfg.arch;
    spec.in_channels = cfg.domain == Domain::Raw ? 1 : 3;
    spec.out_channels = 3;
    return RestorerNet(spec, init_seed(cfg.seed));
}

Tensor training_input(const ImageRecord& r, Domain domain)
{
    return domain == Domain::Raw ? mosaic(r.noisy) : r.noisy;
}

void TrainBatch::validate() const
{
    if (pairs.size() < 2) throw ShapeError("train batch: need at least two pairs");
    std::set<std::size_t> ids;
    for (const auto& p : pairs) {
        ids.insert(p.instance_id);
        if (p.a.shape() != pairs[0].a.shape() || p.b.shape() != pairs[0].a.shape())
            throw ShapeError("train batch: crops differ in shape");
    }
    if (ids.size() != pairs.size()) throw std::invalid_argument("train batch: instance ids are not distinct");
}

namespace {

std::vector<std::size_t> distinct_indices(std::size_t n, std::size_t k, Rng& rng)
{
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
    idx.resize(k);
    return idx;
}

void require_nonempty(const Dataset& data)
{
    if (data.empty()) throw std::invalid_argument("dataset is empty");
}

} // namespace

TrainBatch sample_batch(const Dataset& data, const TrainConfig& cfg, Rng& rng)
{
    require_nonempty(data);
    if (data.size() < cfg.batch_size)
        throw std::invalid_argument("dataset has " + std::to_string(data.size()) + " images, batch needs " +
                                    std::to_string(cfg.batch_size) + " distinct instances");
    TrainBatch batch;
    batch.crop = cfg.crop;
    const std::size_t align = cfg.domain == Domain::Raw ? 2 : 1;
    for (std::size_t id : distinct_indices(data.size(), cfg.batch_size, rng)) {
        CropPair p = sample_positive_pair(training_input(data[id], cfg.domain), cfg.crop, cfg.overlap_min, rng, align);
        batch.pairs.push_back({std::move(p.a), std::move(p.b), id});
    }
    return batch;
}

ResidualMode residual_mode(const RestorerNet& net)
{
    if (net.spec().arch == Arch::DncnnSmall) return ResidualMode::ResidualNet;
    if (net.spec().in_channels == 1 && net.spec().out_channels == 3) return ResidualMode::Mosaic;
    return ResidualMode::Direct;
}

StepResult rcl_step(const TrainBatch& batch, const RestorerNet& net, const FeatureEncoder& enc,
                    const TrainConfig& cfg)
{
    batch.validate();
    const std::size_t P = batch.pairs.size();
    std::vector<Tensor> crops;
    crops.reserve(2 * P);
    for (const auto& p : batch.pairs) {
        crops.push_back(p.a);
        crops.push_back(p.b);
    }

    Graph g;
    const VarMap bound = net.bind(g);
    Var X = g.constant(stack(crops));
    const std::size_t passes_before = net.forward_passes();
    Var F = net.forward(g, X, bound);

    StepResult out;
    out.forward_passes = net.forward_passes() - passes_before;

    Var consistency;
    const ResidualMode mode = residual_mode(net);
    if (mode == ResidualMode::Mosaic)
        consistency = jdd_consistency_loss(X, F);
    else
        consistency = consistency_loss(X, mode == ResidualMode::ResidualNet ? sub(X, F) : F, enc);

    Var total = consistency;
    if (cfg.alpha > 0.0) {
        std::vector<Var> r;
        r.reserve(2 * P);
        for (std::size_t i = 0; i < 2 * P; ++i) r.push_back(residual(slice(X, 0, i, i + 1), slice(F, 0, i, i + 1), mode));
        LossCounters counters;
        Var contrast;
        for (std::size_t j = 0; j < P; ++j) {
            std::vector<Var> negatives;
            for (std::size_t k = 0; k < P; ++k)
                if (k != j) negatives.push_back(r[2 * k + 1]);
            Var term = contrastive_loss(r[2 * j], r[2 * j + 1], negatives, cfg.distance, cfg.tau, &counters);
            contrast = contrast.valid() ? add(contrast, term) : term;
        }
        out.distance_evals = counters.distance_evals;
        out.contrastive = contrast.value().item();
        total = total_loss(contrast, consistency, cfg.alpha);
    }
    out.consistency = consistency.value().item();
    out.loss = total.value().item();
    g.backward(total);
    out.grads = g.gradients();
    return out;
}

namespace {

// One optimization step for the non-contrastive modes; returns the loss.
double baseline_step(const Dataset& data, const TrainConfig& cfg, const RestorerNet& net, std::size_t step,
                     Rng& rng, std::map<std::string, Tensor>& grads)
{
    const std::size_t k = std::min(cfg.batch_size, data.size());
    std::vector<Tensor> xs, ts;
    for (std::size_t id : distinct_indices(data.size(), k, rng)) {
        const ImageRecord& r = data[id];
        const Tensor input = training_input(r, cfg.domain);
        const std::size_t align = cfg.domain == Domain::Raw ? 2 : 1;
        const std::size_t y = rng.index((input.dim(1) - cfg.crop) / align + 1) * align;
        const std::size_t x = rng.index((input.dim(2) - cfg.crop) / align + 1) * align;
        xs.push_back(crop(input, y, x, cfg.crop, cfg.crop));
        if (cfg.mode == PretrainMode::N2N) ts.push_back(crop(second_view(r), y, x, cfg.crop, cfg.crop));
        if (cfg.mode == PretrainMode::Supervised) ts.push_back(crop(r.clean, y, x, cfg.crop, cfg.crop));
    }
    Graph g;
    const VarMap bound = net.bind(g);
    Var X = g.constant(stack(xs));
    Var loss;
    switch (cfg.mode) {
    case PretrainMode::N2N: loss = n2n_loss(g, X, g.constant(stack(ts)), net, bound); break;
    case PretrainMode::N2S: loss = n2s_masked_loss(g, X, net, bound, step % 4); break;
    case PretrainMode::Supervised: loss = l1_loss(net.reconstruct(g, X, bound), g.constant(stack(ts))); break;
    default: throw std::logic_error("baseline_step: contrastive mode");
    }
    g.backward(loss);
    grads = g.gradients();
    return loss.value().item();
}

} // namespace

PretrainResult pretrain(const Dataset& data, const TrainConfig& cfg, const FeatureEncoder& enc,
                        const StepCallback& on_step)
{
    cfg.validate();
    require_nonempty(data);
    for (const auto& r : data)
        if (r.noisy.rank() != 3 || r.noisy.dim(1) < cfg.crop || r.noisy.dim(2) < cfg.crop)
            throw ShapeError("pretrain: image " + to_string(r.noisy.shape()) + " smaller than crop " +
                             std::to_string(cfg.crop));

    RestorerNet net = make_initial_net(cfg);
    Adam adam(AdamConfig{.lr = cfg.lr});
    TrainConfig step_cfg = cfg;
    if (cfg.mode == PretrainMode::ConsistencyOnly) step_cfg.alpha = 0.0;

    PretrainResult result;
    result.losses.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Rng rng(derive_seed(cfg.seed, 0x5000000 + step));
        double loss;
        std::map<std::string, Tensor> grads;
        if (cfg.mode == PretrainMode::Rcl || cfg.mode == PretrainMode::ConsistencyOnly) {
            StepResult s = rcl_step(sample_batch(data, step_cfg, rng), net, enc, step_cfg);
            loss = s.loss;
            grads = std::move(s.grads);
        } else {
            loss = baseline_step(data, cfg, net, step, rng, grads);
        }
        adam.step(net.params(), grads);
        result.losses.push_back(loss);
        if (on_step) on_step(step, loss);
    }
    result.params = net.params();
    return result;
}

PretrainResult pretrain(const Dataset& data, const TrainConfig& cfg, const StepCallback& on_step)
{
    return pretrain(data, cfg, FeatureEncoder(cfg.encoder_seed), on_step);
}

LabeledPair sample_labeled_crop(const LabeledPair& pair, std::size_t crop_size, Rng& rng)
{
    const Tensor& in = pair.input;
    const Tensor& tg = pair.target;
    if (in.rank() != 3 || tg.rank() != 3 || tg.dim(1) % in.dim(1) || tg.dim(2) % in.dim(2))
        throw ShapeError("labeled pair: target " + to_string(tg.shape()) + " is not an integer multiple of input " +
                         to_string(in.shape()));
    const std::size_t s = tg.dim(1) / in.dim(1);
    if (tg.dim(2) / in.dim(2) != s) throw ShapeError("labeled pair: anisotropic scale");
    crop_size = std::min({crop_size, tg.dim(1), tg.dim(2)});
    const std::size_t align = in.dim(0) == 1 ? 2 : 1;
    const std::size_t c_in = crop_size / s / (4 * align) * (4 * align);
    if (c_in == 0) throw ShapeError("labeled pair: crop too small for the input grid");
    const std::size_t y = rng.index((in.dim(1) - c_in) / align + 1) * align;
    const std::size_t x = rng.index((in.dim(2) - c_in) / align + 1) * align;
    return {crop(in, y, x, c_in, c_in), crop(tg, y * s, x * s, c_in * s, c_in * s)};
}

FinetuneResult finetune(const ModelParams& params, const std::vector<LabeledPair>& labeled,
                        const FinetuneConfig& cfg, const FinetuneOptions& opts)
{
    return finetune(RestorerNet::from_params(params), labeled, cfg, opts);
}

FinetuneResult finetune(RestorerNet net, const std::vector<LabeledPair>& labeled, const FinetuneConfig& cfg,
                        const FinetuneOptions& opts)
{
    if (cfg.batch_size == 0) throw ConfigError("fine-tune batch size must be positive");
    if (!(cfg.lr > 0.0)) throw ConfigError("fine-tune learning rate must be positive");
    if (opts.replace_head) net.replace_head(opts.head, opts.out_channels, derive_seed(cfg.seed, 0x4EAD));
    if (opts.freeze_all_but_head)
        net.freeze_all_but_head();
    else
        net.params().set_all_trainable(true);

    for (const auto& p : labeled) {
        if (p.input.rank() != 3 || p.input.dim(0) != net.spec().in_channels)
            throw ShapeError("fine-tune: input " + to_string(p.input.shape()) + " does not match a " +
                             std::to_string(net.spec().in_channels) + "-channel network");
        const std::size_t s = net.spec().head == HeadKind::Upsample2x ? 2 : 1;
        if (p.target.rank() != 3 || p.target.dim(0) != net.spec().out_channels ||
            p.target.dim(1) != s * p.input.dim(1) || p.target.dim(2) != s * p.input.dim(2))
            throw ShapeError("fine-tune: target " + to_string(p.target.shape()) + " does not match the " +
                             head_name(net.spec().head) + " head for input " + to_string(p.input.shape()));
    }

    FinetuneResult result{std::move(net), {}};
    RestorerNet& model = result.net;
    if (labeled.empty()) return result;

    Adam adam(AdamConfig{.lr = cfg.lr});
    const std::size_t k = std::min(cfg.batch_size, labeled.size());
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Rng rng(derive_seed(cfg.seed, 0x6000000 + step));
        std::vector<Tensor> xs, ts;
        for (std::size_t id : distinct_indices(labeled.size(), k, rng)) {
            LabeledPair c = sample_labeled_crop(labeled[id], cfg.crop, rng);
            xs.push_back(std::move(c.input));
            ts.push_back(std::move(c.target));
        }
        Graph g;
        const VarMap bound = model.bind(g);
        Var loss = l1_loss(model.reconstruct(g, g.constant(stack(xs)), bound), g.constant(stack(ts)));
        g.backward(loss);
        adam.step(model.params(), g.gradients());
        result.losses.push_back(loss.value().item());
    }
    return result;
}

} // namespace rcl
