#include "helpers.hpp"
#include "rcl/losses.hpp"
#include "rcl/noise.hpp"
#include "rcl/train.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace rcl;
using testing::random_tensor;

namespace {

double sample_variance(const std::vector<double>& v)
{
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

std::vector<double> noise_samples(double y, const NoiseParams& p, std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    const Tensor out = apply_nlf_noise(Tensor(Shape{n}, y), p, rng);
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = out[i] - y;
    return d;
}

} // namespace

TEST_CASE("sample_nlf_params")
{
    Rng rng(1);
    const double s = 10.0 / 255.0;
    const NoiseParams p = sample_nlf_params({s, s}, rng);
    CHECK(p.lambda_shot == s * s / 2);
    CHECK(p.lambda_read == s * s / 2);
    CHECK(p.variance(1.0) == doctest::Approx(s * s).epsilon(1e-15));

    const NoiseParams z = sample_nlf_params({0, 0}, rng);
    CHECK(z.lambda_shot == 0.0);
    CHECK(z.lambda_read == 0.0);
    CHECK_THROWS_AS(sample_nlf_params({0.2, 0.1}, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_nlf_params({-0.1, 0.1}, rng), std::invalid_argument);
}

TEST_CASE("sqrt(lambda) is uniform on [0, sigma_max / sqrt 2]")
{
    const NoiseRange range = NoiseRange::from_8bit(0, 20);
    const double b = 20.0 / (255.0 * std::sqrt(2.0));
    Rng rng(2);
    const std::size_t n = 100000;
    std::vector<double> shot(n), read(n);
    for (std::size_t i = 0; i < n; ++i) {
        const NoiseParams p = sample_nlf_params(range, rng);
        shot[i] = std::sqrt(p.lambda_shot);
        read[i] = std::sqrt(p.lambda_read);
    }
    for (auto* v : {&shot, &read}) {
        std::sort(v->begin(), v->end());
        double ks = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double cdf = (*v)[i] / b;
            ks = std::max({ks, std::abs(cdf - static_cast<double>(i) / n), std::abs(cdf - static_cast<double>(i + 1) / n)});
        }
        CHECK(ks < 0.01);
        CHECK(v->front() >= 0.0);
        CHECK(v->back() <= b);
    }
}

TEST_CASE("apply_nlf_noise")
{
    Rng rng(3);
    const Tensor y = random_tensor({3, 8, 8}, rng, 0, 1);
    CHECK(bit_equal(apply_nlf_noise(y, {0, 0}, rng), y));

    const auto d = noise_samples(0.5, {0.01, 0.0004}, 100000, 4);
    CHECK(std::abs(sample_variance(d) - 0.0054) < 0.03 * 0.0054);

    const double v1 = sample_variance(noise_samples(1.0, {0.02, 0.0}, 100000, 5));
    const double vh = sample_variance(noise_samples(0.5, {0.02, 0.0}, 100000, 6));
    CHECK(std::abs(v1 / vh - 2.0) < 0.1);

    // Zero-mean per image.
    const NoiseParams p{0.01, 0.001};
    const Tensor img = random_tensor({3, 64, 64}, rng, 0, 1);
    const Tensor noisy = apply_nlf_noise(img, p, rng);
    double m = 0, var = 0;
    for (std::size_t i = 0; i < img.size(); ++i) {
        m += noisy[i] - img[i];
        var += p.variance(img[i]);
    }
    const double N = static_cast<double>(img.size());
    CHECK(std::abs(m / N) < 3 * std::sqrt(var / N) / std::sqrt(N));
}

TEST_CASE("noise variance matches the level function at several intensities")
{
    const NoiseParams p{0.004, 0.0005};
    std::uint64_t seed = 10;
    for (double y : {0.1, 0.5, 1.0}) {
        const double v = sample_variance(noise_samples(y, p, 100000, seed++));
        CHECK(std::abs(v / p.variance(y) - 1.0) < 0.05);
    }
}

TEST_CASE("make_noisy_pair")
{
    Rng rng(7);
    const Tensor y = random_tensor({3, 8, 8}, rng, 0, 1);
    const NoisyPair zero = make_noisy_pair(y, {0, 0}, rng);
    CHECK(bit_equal(zero.first, y));
    CHECK(bit_equal(zero.second, y));

    const NoiseRange range = NoiseRange::from_8bit(10, 10);
    const Tensor flat(Shape{1, 100, 100}, 0.4);
    const NoisyPair p = make_noisy_pair(flat, range, rng);
    CHECK_FALSE(bit_equal(p.first, p.second));
    std::vector<double> diff(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) diff[i] = p.first[i] - p.second[i];
    double m = 0;
    for (double d : diff) m += d;
    m /= static_cast<double>(diff.size());
    const double var = sample_variance(diff);
    CHECK(std::abs(m) < 3 * std::sqrt(var / static_cast<double>(diff.size())));
    CHECK(std::abs(var / (2 * p.params.variance(0.4)) - 1.0) < 0.05);
}

TEST_CASE("mosaic follows RGGB")
{
    Tensor rgb(Shape{3, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) {
        rgb[i] = 0.2;
        rgb[16 + i] = 0.4;
        rgb[32 + i] = 0.6;
    }
    const Tensor raw = mosaic(rgb);
    CHECK(raw.shape() == Shape{1, 4, 4});
    CHECK(raw[0] == 0.2);
    CHECK(raw[1] == 0.4);
    CHECK(raw[4] == 0.4);
    CHECK(raw[5] == 0.6);

    const Tensor tile(Shape{3, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    const Tensor t = mosaic(tile);
    CHECK(t == Tensor(Shape{1, 2, 2}, {1, 6, 7, 12}));

    // Re-selecting the already selected values changes nothing.
    Tensor again(Shape{3, 2, 2});
    for (std::size_t yx = 0; yx < 4; ++yx) again[bayer_channel(yx / 2, yx % 2) * 4 + yx] = t[yx];
    CHECK(bit_equal(mosaic(again), t));

    CHECK_THROWS_AS(mosaic(Tensor(Shape{3, 3, 4})), ShapeError);
    CHECK_THROWS_AS(demosaic_bilinear(Tensor(Shape{1, 4, 5})), ShapeError);
    CHECK(mosaic(Tensor(Shape{2, 3, 4, 4})).shape() == Shape{2, 1, 4, 4});
}

TEST_CASE("demosaic_bilinear")
{
    Tensor rgb(Shape{3, 6, 8});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 48; ++i) rgb[c * 48 + i] = 0.1 + 0.3 * static_cast<double>(c);
    const Tensor d = demosaic_bilinear(mosaic(rgb));
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(d[i] == doctest::Approx(rgb[i]).epsilon(1e-15));

    Rng rng(8);
    const Tensor raw = random_tensor({1, 8, 10}, rng, 0, 1);
    CHECK(bit_equal(mosaic(demosaic_bilinear(raw)), raw));

    // Affine field a + b y + c x in every channel: interior reconstructed exactly.
    const std::size_t H = 12, W = 12;
    Tensor lin(Shape{3, H, W});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                lin[(c * H + y) * W + x] = 0.1 * (c + 1) + 0.03 * y - 0.02 * x;
    const Tensor rec = demosaic_bilinear(mosaic(lin));
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 2; y < H - 2; ++y)
            for (std::size_t x = 2; x < W - 2; ++x)
                CHECK(rec[(c * H + y) * W + x] == doctest::Approx(lin[(c * H + y) * W + x]).epsilon(1e-12));
}

TEST_CASE("procedural images")
{
    const Tensor a = gen_procedural_image(5, 32, 48);
    CHECK(a.shape() == Shape{3, 32, 48});
    CHECK(bit_equal(a, gen_procedural_image(5, 32, 48)));
    for (double v : a.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    for (std::uint64_t s = 0; s < 50; ++s) {
        const Tensor p = gen_procedural_image(100 + 2 * s, 32, 32), q = gen_procedural_image(101 + 2 * s, 32, 32);
        double mad = 0;
        for (std::size_t i = 0; i < p.size(); ++i) mad += std::abs(p[i] - q[i]);
        CHECK(mad / static_cast<double>(p.size()) > 0.01);
    }
    CHECK_THROWS(gen_procedural_image(1, 8, 32));
}

TEST_CASE("true-noise residuals separate instances")
{
    const Dataset data = synthesize_dataset(64, 64, 64, NoiseRange{}, 42);
    Rng rng(9);
    DistanceConfig emd_cfg;
    std::size_t positive = 0;
    double pos_sum = 0, neg_sum = 0;
    const std::size_t trials = 200;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t i = rng.index(data.size());
        std::size_t j = rng.index(data.size() - 1);
        if (j >= i) ++j;
        Tensor ni = data[i].noisy, nj = data[j].noisy;
        for (std::size_t k = 0; k < ni.size(); ++k) {
            ni[k] -= data[i].clean[k];
            nj[k] -= data[j].clean[k];
        }
        const CropPair pp = sample_positive_pair(ni, 32, 0.25, rng);
        const CropPair neg = sample_positive_pair(nj, 32, 0.25, rng);
        const double dp = distance_value(pp.a, pp.b, emd_cfg), dn = distance_value(pp.a, neg.b, emd_cfg);
        pos_sum += dp;
        neg_sum += dn;
        if (dn - dp > 0) ++positive;
    }
    CHECK(neg_sum > pos_sum);
    CHECK(static_cast<double>(positive) / trials > 0.7);
}

TEST_CASE("downsample2x averages 2x2 blocks")
{
    const Tensor img(Shape{1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    const Tensor d = downsample2x(img);
    CHECK(d == Tensor(Shape{1, 1, 2}, {3.5, 5.5}));
}
