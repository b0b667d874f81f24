#include "rcl/noise.hpp"

#include "rcl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace rcl {

void NoiseRange::validate() const
{
    if (!(sigma_min >= 0.0) || !(sigma_max >= sigma_min) || !std::isfinite(sigma_max))
        throw std::invalid_argument("invalid noise range: need 0 <= sigma_min <= sigma_max");
}

NoiseParams sample_nlf_params(const NoiseRange& range, Rng& rng)
{
    range.validate();
    // sqrt(lambda) = sigma / sqrt 2 with sigma uniform on the range; squaring
    // sigma directly keeps lambda = s^2 / 2 exact for a degenerate range.
    const double s_shot = rng.uniform(range.sigma_min, range.sigma_max);
    const double s_read = rng.uniform(range.sigma_min, range.sigma_max);
    return {s_shot * s_shot / 2.0, s_read * s_read / 2.0};
}

Tensor apply_nlf_noise(const Tensor& y, const NoiseParams& p, Rng& rng)
{
    Tensor out = y;
    if (p.lambda_shot == 0.0 && p.lambda_read == 0.0) return out;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double var = std::max(0.0, p.variance(y[i]));
        out[i] += std::sqrt(var) * rng.normal();
    }
    return out;
}

NoisyPair make_noisy_pair(const Tensor& y, const NoiseRange& range, Rng& rng)
{
    NoisyPair pair;
    pair.params = sample_nlf_params(range, rng);
    pair.first = apply_nlf_noise(y, pair.params, rng);
    pair.second = apply_nlf_noise(y, pair.params, rng);
    return pair;
}

namespace {

struct Layout {
    std::size_t batch, channels, height, width;
    bool batched;
};

Layout image_layout(const Tensor& t, std::size_t expected_channels, const char* op)
{
    Layout l{};
    if (t.rank() == 3) {
        l = {1, t.dim(0), t.dim(1), t.dim(2), false};
    } else if (t.rank() == 4) {
        l = {t.dim(0), t.dim(1), t.dim(2), t.dim(3), true};
    } else {
        throw ShapeError(std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " + to_string(t.shape()));
    }
    if (l.channels != expected_channels)
        throw ShapeError(std::string(op) + ": expected " + std::to_string(expected_channels) +
                         " channels, got " + to_string(t.shape()));
    if (l.height % 2 || l.width % 2)
        throw ShapeError(std::string(op) + ": height and width must be even, got " + to_string(t.shape()));
    return l;
}

Shape with_channels(const Layout& l, std::size_t c)
{
    return l.batched ? Shape{l.batch, c, l.height, l.width} : Shape{c, l.height, l.width};
}

} // namespace

Tensor mosaic(const Tensor& rgb)
{
    const Layout l = image_layout(rgb, 3, "mosaic");
    Tensor raw(with_channels(l, 1));
    const std::size_t hw = l.height * l.width;
    for (std::size_t n = 0; n < l.batch; ++n)
        for (std::size_t y = 0; y < l.height; ++y)
            for (std::size_t x = 0; x < l.width; ++x)
                raw[n * hw + y * l.width + x] = rgb[(n * 3 + bayer_channel(y, x)) * hw + y * l.width + x];
    return raw;
}

Tensor demosaic_bilinear(const Tensor& raw)
{
    const Layout l = image_layout(raw, 1, "demosaic_bilinear");
    Tensor rgb(with_channels(l, 3));
    const long H = static_cast<long>(l.height), W = static_cast<long>(l.width);
    const std::size_t hw = l.height * l.width;
    static constexpr long kCross[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
    static constexpr long kDiag[4][2] = {{-1, -1}, {-1, 1}, {1, -1}, {1, 1}};

    for (std::size_t n = 0; n < l.batch; ++n) {
        const double* src = raw.ptr() + n * hw;
        for (long y = 0; y < H; ++y)
            for (long x = 0; x < W; ++x) {
                const std::size_t site = bayer_channel(y, x);
                for (std::size_t c = 0; c < 3; ++c) {
                    double& dst = rgb[(n * 3 + c) * hw + y * W + x];
                    if (c == site) {
                        dst = src[y * W + x];
                        continue;
                    }
                    for (const auto* ring : {kCross, kDiag}) {
                        double acc = 0.0;
                        int count = 0;
                        for (int k = 0; k < 4; ++k) {
                            const long sy = y + ring[k][0], sx = x + ring[k][1];
                            if (sy < 0 || sx < 0 || sy >= H || sx >= W) continue;
                            if (bayer_channel(sy, sx) != c) continue;
                            acc += src[sy * W + sx];
                            ++count;
                        }
                        if (count) {
                            dst = acc / count;
                            break;
                        }
                    }
                }
            }
    }
    return rgb;
}

namespace {

// Bilinear resample of a (gh x gw) grid onto (H x W), corners aligned.
void add_octave(std::vector<double>& plane, std::size_t H, std::size_t W, std::size_t cells, double weight,
                Rng& rng)
{
    const std::size_t g = cells + 1;
    std::vector<double> grid(g * g);
    for (auto& v : grid) v = rng.uniform();
    for (std::size_t y = 0; y < H; ++y) {
        const double fy = static_cast<double>(y) * cells / static_cast<double>(H - 1);
        const std::size_t y0 = std::min(static_cast<std::size_t>(fy), cells - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < W; ++x) {
            const double fx = static_cast<double>(x) * cells / static_cast<double>(W - 1);
            const std::size_t x0 = std::min(static_cast<std::size_t>(fx), cells - 1);
            const double tx = fx - static_cast<double>(x0);
            const double v = (1 - ty) * ((1 - tx) * grid[y0 * g + x0] + tx * grid[y0 * g + x0 + 1]) +
                             ty * ((1 - tx) * grid[(y0 + 1) * g + x0] + tx * grid[(y0 + 1) * g + x0 + 1]);
            plane[y * W + x] += weight * v;
        }
    }
}

} // namespace

Tensor gen_procedural_image(std::uint64_t seed, std::size_t height, std::size_t width)
{
    if (height < 16 || width < 16) throw std::invalid_argument("procedural images need H, W >= 16");
    Rng rng(seed);
    const std::size_t hw = height * width;
    Tensor img(Shape{3, height, width});

    const double contrast = rng.uniform(0.4, 1.0);
    const double brightness = rng.uniform(0.0, 1.0 - contrast);
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double> plane(hw, 0.0);
        double total = 0.0;
        for (std::size_t o = 0; o < 3; ++o) {
            const double weight = std::pow(0.5, static_cast<double>(o));
            add_octave(plane, height, width, std::size_t{2} << o, weight, rng);
            total += weight;
        }
        for (std::size_t i = 0; i < hw; ++i) img[c * hw + i] = brightness + contrast * plane[i] / total;
    }

    const std::size_t rects = 2 + rng.index(4);
    for (std::size_t r = 0; r < rects; ++r) {
        const std::size_t rh = 4 + rng.index(height / 2), rw = 4 + rng.index(width / 2);
        const std::size_t y0 = rng.index(height - std::min(rh, height - 1));
        const std::size_t x0 = rng.index(width - std::min(rw, width - 1));
        const double color[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
        const double alpha = rng.uniform(0.5, 1.0);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = y0; y < std::min(height, y0 + rh); ++y)
                for (std::size_t x = x0; x < std::min(width, x0 + rw); ++x) {
                    double& v = img[c * hw + y * width + x];
                    v = (1 - alpha) * v + alpha * color[c];
                }
    }

    // One straight edge: brighten or darken the half-plane on one side.
    const double angle = rng.uniform(0.0, 6.283185307179586);
    const double cy = rng.uniform(0.0, static_cast<double>(height));
    const double cx = rng.uniform(0.0, static_cast<double>(width));
    const double shift = rng.uniform(-0.25, 0.25);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            if ((static_cast<double>(y) - cy) * std::cos(angle) + (static_cast<double>(x) - cx) * std::sin(angle) > 0)
                for (std::size_t c = 0; c < 3; ++c) img[c * hw + y * width + x] += shift;

    for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i], 0.0, 1.0);
    return img;
}

Tensor downsample2x(const Tensor& image)
{
    if (image.rank() != 3 || image.dim(1) % 2 || image.dim(2) % 2)
        throw ShapeError("downsample2x: expected [C,H,W] with even H, W, got " + to_string(image.shape()));
    const Tensor in = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
    Tensor out(Shape{1, image.dim(0), image.dim(1) / 2, image.dim(2) / 2});
    kernels::avgpool2x_forward(in, out);
    return out.reshaped({image.dim(0), image.dim(1) / 2, image.dim(2) / 2});
}

} // namespace rcl
