#include "rcl/losses.hpp"

#include "rcl/noise.hpp"
#include "rcl/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rcl {

namespace {

Var flatten(Var v) { return reshape(v, Shape{v.value().size()}); }

void require_same_count(Var a, Var b, const char* what)
{
    if (a.value().size() != b.value().size())
        throw ShapeError(std::string(what) + ": sample counts differ (" + std::to_string(a.value().size()) +
                         " vs " + std::to_string(b.value().size()) + ")");
}

// Sample mean and unbiased variance as graph nodes.
std::pair<Var, Var> moments(Var x)
{
    const double n = static_cast<double>(x.value().size());
    Var mu = mean(x);
    Var var = scale(sub(mean(square(x)), square(mu)), n / (n - 1.0));
    return {mu, var};
}

bool is_constant(const Tensor& t)
{
    const auto [lo, hi] = std::minmax_element(t.values().begin(), t.values().end());
    return *lo == *hi;
}

double median_pairwise_distance(const std::vector<double>& z)
{
    std::vector<double> d;
    d.reserve(z.size() * (z.size() - 1) / 2);
    for (std::size_t i = 0; i < z.size(); ++i)
        for (std::size_t j = i + 1; j < z.size(); ++j) d.push_back(std::abs(z[i] - z[j]));
    if (d.empty()) return 0.0;
    const std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<long>(mid), d.end());
    const double upper = d[mid];
    if (d.size() % 2) return upper;
    const double lower = *std::max_element(d.begin(), d.begin() + static_cast<long>(mid));
    return 0.5 * (lower + upper);
}

// Mean of the Gaussian kernel matrix k(u_i, v_j) over all (i, j).
Var kernel_mean(Var u, Var v, double bandwidth)
{
    const std::size_t m = u.value().size();
    std::vector<std::size_t> rows(m * m), cols(m * m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            rows[i * m + j] = i;
            cols[i * m + j] = j;
        }
    Var diff = sub(gather(u, std::move(rows)), gather(v, std::move(cols)));
    return mean(exp(scale(square(diff), -1.0 / (2.0 * bandwidth * bandwidth))));
}

} // namespace

Var mosaic(Var rgb)
{
    const Shape& s = rgb.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] % 2 || s[3] % 2)
        throw ShapeError("mosaic: expected [N,3,H,W] with even H, W, got " + to_string(s));
    const std::size_t N = s[0], H = s[2], W = s[3];
    std::vector<std::size_t> idx;
    idx.reserve(N * H * W);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) idx.push_back(((n * 3 + bayer_channel(y, x)) * H + y) * W + x);
    return reshape(gather(rgb, std::move(idx)), Shape{N, 1, H, W});
}

Var residual(Var x, Var f_out, ResidualMode mode)
{
    switch (mode) {
    case ResidualMode::Direct:
    case ResidualMode::ResidualNet:
        if (x.shape() != f_out.shape())
            throw ShapeError("residual: input " + to_string(x.shape()) + " vs output " + to_string(f_out.shape()));
        return mode == ResidualMode::Direct ? flatten(sub(x, f_out)) : flatten(f_out);
    case ResidualMode::Mosaic: {
        const Shape& xs = x.shape();
        const Shape& fs = f_out.shape();
        if (xs.size() != 4 || fs.size() != 4 || xs[1] != 1 || fs[1] != 3 || xs[0] != fs[0] || xs[2] != fs[2] ||
            xs[3] != fs[3])
            throw ShapeError("residual (mosaic): need [N,1,H,W] input and [N,3,H,W] output, got " + to_string(xs) +
                             " and " + to_string(fs));
        return flatten(sub(x, mosaic(f_out)));
    }
    }
    throw std::invalid_argument("residual: unknown mode");
}

const char* distance_name(Distance d)
{
    switch (d) {
    case Distance::EMD: return "emd";
    case Distance::BD: return "bd";
    case Distance::MMD: return "mmd";
    }
    return "?";
}

Distance parse_distance(const std::string& s)
{
    if (s == "emd") return Distance::EMD;
    if (s == "bd") return Distance::BD;
    if (s == "mmd") return Distance::MMD;
    throw std::invalid_argument("unknown distance '" + s + "' (expected emd, bd or mmd)");
}

Var emd(Var a, Var b)
{
    require_same_count(a, b, "emd");
    return mean(abs(sub(sort(a), sort(b))));
}

Var bd(Var a, Var b)
{
    require_same_count(a, b, "bd");
    if (a.value().size() < 2) throw DegenerateInputError("bd: need at least two samples");
    if (is_constant(a.value()) || is_constant(b.value()))
        throw DegenerateInputError("bd: zero sample variance (constant residual)");
    auto [mp, vp] = moments(flatten(a));
    auto [mq, vq] = moments(flatten(b));
    if (!(vp.value().item() > 0.0) || !(vq.value().item() > 0.0))
        throw DegenerateInputError("bd: non-positive sample variance");
    Graph& g = a.graph();
    Var lp = log(vp), lq = log(vq);
    Var ratios = add(exp(sub(lp, lq)), exp(sub(lq, lp)));
    Var spread = scale(log(scale(add(ratios, g.constant(Tensor::scalar(2.0))), 0.25)), 0.25);
    Var shift = scale(mul(square(sub(mp, mq)), exp(scale(log(add(vp, vq)), -1.0))), 0.25);
    return add(spread, shift);
}

Var mmd(Var a, Var b, std::size_t max_samples, std::uint64_t seed)
{
    require_same_count(a, b, "mmd");
    const std::size_t n = a.value().size();
    Var sa = flatten(a), sb = flatten(b);
    if (max_samples > 0 && n > max_samples) {
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        Rng rng(seed);
        for (std::size_t i = 0; i < max_samples; ++i) std::swap(perm[i], perm[i + rng.index(n - i)]);
        perm.resize(max_samples);
        std::sort(perm.begin(), perm.end());
        sa = gather(sa, perm);
        sb = gather(sb, perm);
    }
    std::vector<double> pooled(sa.value().values());
    pooled.insert(pooled.end(), sb.value().values().begin(), sb.value().values().end());
    const double h = std::max(median_pairwise_distance(pooled), 1e-6);
    return sub(add(kernel_mean(sa, sa, h), kernel_mean(sb, sb, h)), scale(kernel_mean(sa, sb, h), 2.0));
}

Var distance(Var a, Var b, const DistanceConfig& cfg)
{
    switch (cfg.kind) {
    case Distance::EMD: return emd(a, b);
    case Distance::BD: return bd(a, b);
    case Distance::MMD: return mmd(a, b, cfg.mmd_max_samples, cfg.mmd_seed);
    }
    throw std::invalid_argument("unknown distance kind");
}

double distance_value(const Tensor& a, const Tensor& b, const DistanceConfig& cfg)
{
    Graph g;
    return distance(g.constant(a), g.constant(b), cfg).value().item();
}

Var contrastive_loss(Var query, Var positive, const std::vector<Var>& negatives, const DistanceConfig& cfg,
                     double tau, LossCounters* counters)
{
    if (negatives.empty()) throw std::invalid_argument("contrastive_loss: at least one negative is required");
    if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
    std::vector<Var> logits;
    logits.reserve(negatives.size() + 1);
    logits.push_back(reshape(distance(query, positive, cfg), Shape{1}));
    for (const Var& neg : negatives) logits.push_back(reshape(distance(query, neg, cfg), Shape{1}));
    if (counters) counters->distance_evals += logits.size();
    Var z = scale(concat(logits, 0), -cfg.scale / tau);
    return sub(logsumexp(z), reshape(slice(z, 0, 0, 1), Shape{}));
}

Var consistency_loss(Var x, Var f_out, const FeatureEncoder& enc)
{
    if (x.shape() != f_out.shape())
        throw ShapeError("consistency_loss: input " + to_string(x.shape()) + " vs output " + to_string(f_out.shape()));
    Graph& g = x.graph();
    Var d = sub(enc.features(g, x), enc.features(g, f_out));
    return scale(sum(square(d)), 1.0 / static_cast<double>(x.shape()[0]));
}

Var jdd_consistency_loss(Var x_raw, Var f_out_rgb)
{
    const Shape& xs = x_raw.shape();
    const Shape& fs = f_out_rgb.shape();
    if (xs.size() != 4 || fs.size() != 4 || xs[1] != 1 || fs[1] != 3 || xs[0] != fs[0] || xs[2] != fs[2] ||
        xs[3] != fs[3])
        throw ShapeError("jdd_consistency_loss: need [N,1,H,W] raw and [N,3,H,W] rgb, got " + to_string(xs) +
                         " and " + to_string(fs));
    return mean(abs(sub(x_raw, mosaic(f_out_rgb))));
}

Var total_loss(Var contrastive, Var consistency, double alpha)
{
    if (!(alpha >= 0.0)) throw std::invalid_argument("total_loss: alpha must be non-negative");
    return add(scale(contrastive, alpha), consistency);
}

Var l1_loss(Var a, Var b)
{
    if (a.shape() != b.shape())
        throw ShapeError("l1_loss: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    return mean(abs(sub(a, b)));
}

Var n2n_loss(Graph& g, Var x1, Var x2, const RestorerNet& net, const VarMap& bound)
{
    return l1_loss(x2, net.reconstruct(g, x1, bound));
}

std::vector<std::size_t> n2s_mask_indices(const Shape& shape, std::size_t phase)
{
    if (shape.size() != 4) throw ShapeError("n2s mask: expected [N,C,H,W], got " + to_string(shape));
    if (phase > 3) throw std::invalid_argument("n2s mask: phase must be in [0, 4)");
    const std::size_t py = phase / 2, px = phase % 2;
    std::vector<std::size_t> idx;
    for (std::size_t p = 0; p < shape[0] * shape[1]; ++p)
        for (std::size_t y = py; y < shape[2]; y += 2)
            for (std::size_t x = px; x < shape[3]; x += 2) idx.push_back((p * shape[2] + y) * shape[3] + x);
    return idx;
}

Tensor n2s_infill(const Tensor& x, std::size_t phase)
{
    Tensor out = x;
    const std::size_t H = x.dim(2), W = x.dim(3);
    for (std::size_t i : n2s_mask_indices(x.shape(), phase)) {
        const std::size_t plane = i / (H * W) * (H * W);
        const std::size_t y = (i % (H * W)) / W, xx = i % W;
        double acc = 0.0;
        int count = 0;
        if (y > 0) acc += x[plane + (y - 1) * W + xx], ++count;
        if (y + 1 < H) acc += x[plane + (y + 1) * W + xx], ++count;
        if (xx > 0) acc += x[plane + y * W + xx - 1], ++count;
        if (xx + 1 < W) acc += x[plane + y * W + xx + 1], ++count;
        out[i] = acc / count;
    }
    return out;
}

Var n2s_masked_loss(Graph& g, Var x, const RestorerNet& net, const VarMap& bound, std::size_t phase)
{
    Var infilled = g.constant(n2s_infill(x.value(), phase));
    Var recon = net.reconstruct(g, infilled, bound);
    if (recon.shape() != x.shape())
        throw ShapeError("n2s_masked_loss: network output " + to_string(recon.shape()) + " vs input " +
                         to_string(x.shape()));
    return mean(abs(gather(sub(recon, x), n2s_mask_indices(x.shape(), phase))));
}

} // namespace rcl
