#include "rcl/eval.hpp"

#include <charconv>
#include <cmath>
#include <numeric>

namespace rcl {

namespace {

void require_same_shape(const Tensor& x, const Tensor& y, const char* what)
{
    if (x.shape() != y.shape())
        throw ShapeError(std::string(what) + ": " + to_string(x.shape()) + " vs " + to_string(y.shape()));
}

Tensor grayscale(const Tensor& x)
{
    if (x.rank() != 3) throw ShapeError("ssim: expected [C,H,W], got " + to_string(x.shape()));
    const std::size_t C = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor g(Shape{x.dim(1), x.dim(2)});
    for (std::size_t i = 0; i < hw; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c) acc += x[c * hw + i];
        g[i] = acc / static_cast<double>(C);
    }
    return g;
}

double mean_of(const std::vector<double>& v)
{
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace

double psnr(const Tensor& x, const Tensor& y)
{
    require_same_shape(x, y, "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) se += (x[i] - y[i]) * (x[i] - y[i]);
    const double mse = se / static_cast<double>(x.size());
    if (mse == 0.0) return kInfinitePsnr;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Tensor& x, const Tensor& y)
{
    constexpr std::size_t win = 8, stride = 4;
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03, c3 = c2 / 2;
    require_same_shape(x, y, "ssim");
    const Tensor gx = grayscale(x), gy = grayscale(y);
    const std::size_t H = gx.dim(0), W = gx.dim(1);
    if (H < win || W < win) throw ShapeError("ssim: image " + to_string(x.shape()) + " smaller than the 8x8 window");

    const double n = win * win;
    double total = 0.0;
    std::size_t windows = 0;
    for (std::size_t y0 = 0; y0 + win <= H; y0 += stride)
        for (std::size_t x0 = 0; x0 + win <= W; x0 += stride) {
            double mx = 0.0, my = 0.0;
            for (std::size_t r = 0; r < win; ++r)
                for (std::size_t c = 0; c < win; ++c) {
                    mx += gx[(y0 + r) * W + x0 + c];
                    my += gy[(y0 + r) * W + x0 + c];
                }
            mx /= n;
            my /= n;
            double vx = 0.0, vy = 0.0, cov = 0.0;
            for (std::size_t r = 0; r < win; ++r)
                for (std::size_t c = 0; c < win; ++c) {
                    const double dx = gx[(y0 + r) * W + x0 + c] - mx;
                    const double dy = gy[(y0 + r) * W + x0 + c] - my;
                    vx += dx * dx;
                    vy += dy * dy;
                    cov += dx * dy;
                }
            vx /= n - 1;
            vy /= n - 1;
            cov /= n - 1;
            const double sxy = std::sqrt(vx * vy);
            const double l = (2 * mx * my + c1) / (mx * mx + my * my + c1);
            const double con = (2 * sxy + c2) / (vx + vy + c2);
            const double str = (cov + c3) / (sxy + c3);
            total += l * con * str;
            ++windows;
        }
    return total / static_cast<double>(windows);
}

std::string format_metric(double v)
{
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

const char* task_name(Task t)
{
    switch (t) {
    case Task::Denoise: return "denoise";
    case Task::Sr2x: return "sr2x";
    case Task::JDenSr2x: return "jdensr2x";
    case Task::Jdd: return "jdd";
    }
    return "?";
}

Task parse_task(const std::string& s)
{
    for (auto t : {Task::Denoise, Task::Sr2x, Task::JDenSr2x, Task::Jdd})
        if (s == task_name(t)) return t;
    throw std::invalid_argument("unknown task '" + s + "' (expected denoise, sr2x, jdensr2x or jdd)");
}

HeadKind task_head(Task t)
{
    return t == Task::Sr2x || t == Task::JDenSr2x ? HeadKind::Upsample2x : HeadKind::Identity;
}

std::size_t task_input_channels(Task t) { return t == Task::Jdd ? 1 : 3; }

LabeledPair make_task_pair(const ImageRecord& r, Task t)
{
    switch (t) {
    case Task::Denoise: return {r.noisy, r.clean};
    case Task::Sr2x: return {downsample2x(r.clean), r.clean};
    case Task::JDenSr2x: {
        Rng rng(derive_seed(r.noise_seed, 2));
        return {apply_nlf_noise(downsample2x(r.clean), r.params, rng), r.clean};
    }
    case Task::Jdd: return {mosaic(r.noisy), r.clean};
    }
    throw std::invalid_argument("unknown task");
}

std::vector<LabeledPair> make_task_pairs(const Dataset& data, Task t)
{
    std::vector<LabeledPair> out;
    out.reserve(data.size());
    for (const auto& r : data) out.push_back(make_task_pair(r, t));
    return out;
}

MetricsReport evaluate(const RestorerNet& net, const std::vector<LabeledPair>& test, const std::string& task,
                       const std::string& method)
{
    MetricsReport rep;
    rep.task = task;
    rep.method = method;
    for (const auto& p : test) {
        const Shape& s = p.input.shape();
        Tensor out = net.reconstruct(p.input.reshaped({1, s[0], s[1], s[2]}));
        out = out.reshaped(Shape(out.shape().begin() + 1, out.shape().end()));
        rep.psnr.push_back(psnr(out, p.target));
        rep.ssim.push_back(ssim(out, p.target));
    }
    rep.psnr_mean = mean_of(rep.psnr);
    rep.ssim_mean = mean_of(rep.ssim);
    return rep;
}

MetricsReport mean_report(const std::vector<MetricsReport>& trials)
{
    if (trials.empty()) throw std::invalid_argument("mean_report: no trials");
    MetricsReport m = trials.front();
    const std::size_t T = trials.size();
    for (std::size_t i = 0; i < m.psnr.size(); ++i) {
        double p = 0.0, s = 0.0;
        for (const auto& t : trials) {
            p += t.psnr.at(i);
            s += t.ssim.at(i);
        }
        m.psnr[i] = p / static_cast<double>(T);
        m.ssim[i] = s / static_cast<double>(T);
    }
    std::vector<double> pm, sm;
    for (const auto& t : trials) {
        pm.push_back(t.psnr_mean);
        sm.push_back(t.ssim_mean);
    }
    m.psnr_mean = mean_of(pm);
    m.ssim_mean = mean_of(sm);
    return m;
}

ProxyResult proxy_evaluate(const ModelParams& pretrained, Task task, const std::vector<LabeledPair>& train,
                           const std::vector<LabeledPair>& test, std::size_t trials, const FinetuneConfig& cfg,
                           const std::string& method)
{
    if (trials == 0) throw std::invalid_argument("proxy_evaluate: trials must be at least 1");
    const RestorerNet base = RestorerNet::from_params(pretrained);
    if (base.spec().in_channels != task_input_channels(task))
        throw std::invalid_argument(std::string("task ") + task_name(task) + " needs a " +
                                    std::to_string(task_input_channels(task)) + "-channel network, checkpoint has " +
                                    std::to_string(base.spec().in_channels));
    if (base.spec().arch == Arch::DncnnSmall && task_head(task) != HeadKind::Identity)
        throw std::invalid_argument(std::string("task ") + task_name(task) + " needs an upsampling head, which " +
                                    "dncnn-small does not support");

    ProxyResult res;
    for (std::size_t t = 0; t < trials; ++t) {
        FinetuneConfig c = cfg;
        c.seed = derive_seed(cfg.seed, t);
        FinetuneOptions opts;
        opts.freeze_all_but_head = true;
        opts.replace_head = true;
        opts.head = task_head(task);
        opts.out_channels = 3;
        FinetuneResult ft = finetune(base, train, c, opts);
        MetricsReport rep = evaluate(ft.net, test, task_name(task), method);
        rep.seed = c.seed;
        rep.trial = t;
        res.trials.push_back(std::move(rep));
        res.finetuned.push_back(ft.net.params());
    }
    res.mean = mean_report(res.trials);
    return res;
}

const char* phase_name(DensityPhase p)
{
    switch (p) {
    case DensityPhase::TrueNoise: return "true-noise";
    case DensityPhase::PreTraining: return "pre-training";
    case DensityPhase::PostTraining: return "post-training";
    }
    return "?";
}

double DensityRecord::positive_fraction() const
{
    if (values.empty()) return 0.0;
    std::size_t pos = 0;
    for (double v : values) pos += v > 0.0;
    return static_cast<double>(pos) / static_cast<double>(values.size());
}

double DensityRecord::mean() const { return mean_of(values); }

namespace {

struct Triple {
    std::size_t anchor_img, neg_img;
    std::size_t ya, xa, yp, xp, yn, xn;
};

Tensor noise_of(const ImageRecord& r)
{
    Tensor n = r.noisy;
    for (std::size_t i = 0; i < n.size(); ++i) n[i] -= r.clean[i];
    return n;
}

} // namespace

DensityRecord density_analysis(const RestorerNet* net, const Dataset& data, std::size_t n_triples,
                               std::size_t crop_size, double overlap_min, std::uint64_t seed, DensityPhase phase)
{
    DensityRecord rec;
    rec.phase = phase;
    if (n_triples == 0) return rec;
    if (data.size() < 2) throw std::invalid_argument("density analysis needs at least two images");
    if (net && net->spec().in_channels != data[0].noisy.dim(0))
        throw ShapeError("density analysis: network input channels do not match the dataset");

    Rng rng(seed);
    std::vector<Triple> triples(n_triples);
    for (auto& t : triples) {
        t.anchor_img = rng.index(data.size());
        t.neg_img = rng.index(data.size() - 1);
        if (t.neg_img >= t.anchor_img) ++t.neg_img;
        const Tensor& img = data[t.anchor_img].noisy;
        CropPair p = sample_positive_pair(img, crop_size, overlap_min, rng);
        t.ya = p.ya;
        t.xa = p.xa;
        t.yp = p.yb;
        t.xp = p.xb;
        const Tensor& neg = data[t.neg_img].noisy;
        t.yn = rng.index(neg.dim(1) - crop_size + 1);
        t.xn = rng.index(neg.dim(2) - crop_size + 1);
    }

    DistanceConfig emd_cfg;
    emd_cfg.kind = Distance::EMD;
    rec.values.resize(n_triples);
    constexpr std::size_t chunk = 32;
    for (std::size_t start = 0; start < n_triples; start += chunk) {
        const std::size_t end = std::min(n_triples, start + chunk);
        std::vector<Tensor> res;
        if (!net) {
            for (std::size_t i = start; i < end; ++i) {
                const Triple& t = triples[i];
                const Tensor na = noise_of(data[t.anchor_img]), nn = noise_of(data[t.neg_img]);
                res.push_back(crop(na, t.ya, t.xa, crop_size, crop_size));
                res.push_back(crop(na, t.yp, t.xp, crop_size, crop_size));
                res.push_back(crop(nn, t.yn, t.xn, crop_size, crop_size));
            }
        } else {
            std::vector<Tensor> xs;
            for (std::size_t i = start; i < end; ++i) {
                const Triple& t = triples[i];
                xs.push_back(crop(data[t.anchor_img].noisy, t.ya, t.xa, crop_size, crop_size));
                xs.push_back(crop(data[t.anchor_img].noisy, t.yp, t.xp, crop_size, crop_size));
                xs.push_back(crop(data[t.neg_img].noisy, t.yn, t.xn, crop_size, crop_size));
            }
            const Tensor out = net->forward(stack(xs));
            for (std::size_t k = 0; k < xs.size(); ++k) {
                Tensor r = unstack(out, k);
                if (residual_mode(*net) == ResidualMode::Direct)
                    for (std::size_t e = 0; e < r.size(); ++e) r[e] = xs[k][e] - r[e];
                res.push_back(std::move(r));
            }
        }
        for (std::size_t i = start; i < end; ++i) {
            const std::size_t k = 3 * (i - start);
            rec.values[i] = distance_value(res[k], res[k + 2], emd_cfg) - distance_value(res[k], res[k + 1], emd_cfg);
        }
    }
    return rec;
}

std::vector<std::size_t> label_order(std::size_t pool, std::uint64_t seed)
{
    std::vector<std::size_t> order(pool);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, 0x1ABE1));
    for (std::size_t i = 0; i + 1 < pool; ++i) std::swap(order[i], order[i + rng.index(pool - i)]);
    return order;
}

std::vector<SweepRow> label_efficiency_sweep(const ModelParams& pretrained, const std::vector<LabeledPair>& pool,
                                             const std::vector<LabeledPair>& test,
                                             const std::vector<std::size_t>& counts, const FinetuneConfig& cfg,
                                             Arch arch)
{
    for (std::size_t k : counts)
        if (k > pool.size())
            throw InsufficientLabelsError("label count " + std::to_string(k) + " exceeds the labeled pool of " +
                                          std::to_string(pool.size()));
    const std::vector<std::size_t> order = label_order(pool.size(), cfg.seed);
    const RestorerNet base = RestorerNet::from_params(pretrained);
    FinetuneOptions full;
    full.freeze_all_but_head = false;
    full.replace_head = false;

    std::vector<SweepRow> rows;
    for (std::size_t k : counts) {
        std::vector<LabeledPair> subset;
        for (std::size_t i = 0; i < k; ++i) subset.push_back(pool[order[i]]);
        SweepRow row;
        row.count = k;
        if (k > 0) {
            NetSpec spec = base.spec();
            spec.arch = arch;
            RestorerNet scratch(spec, init_seed(cfg.seed));
            row.supervised = evaluate(finetune(std::move(scratch), subset, cfg, full).net, test, "denoise", "SL");
        }
        row.rcl = evaluate(finetune(base, subset, cfg, full).net, test, "denoise", "RCL+SL");
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace rcl
