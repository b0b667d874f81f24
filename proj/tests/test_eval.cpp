#include "helpers.hpp"
#include "rcl/eval.hpp"

#include <doctest.h>

#include <cmath>

using namespace rcl;
using testing::random_tensor;

TEST_CASE("psnr examples")
{
    Rng rng(1);
    const Tensor x = random_tensor({3, 8, 8}, rng, 0, 1);
    CHECK(psnr(x, x) == kInfinitePsnr);
    CHECK(format_metric(psnr(x, x)) == "inf");
    CHECK(psnr(Tensor(Shape{3, 8, 8}, 0.0), Tensor(Shape{3, 8, 8}, 1.0)) == 0.0);

    // Alternating +-sqrt(0.1): MSE = 0.1 exactly representable up to rounding.
    Tensor a(Shape{1, 4, 4}, 0.5), b = a;
    const double d = std::sqrt(0.1);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += (i % 2 ? d : -d);
    CHECK(std::abs(psnr(a, b) - 10.0) < 1e-12);
    CHECK_THROWS_AS(psnr(a, Tensor(Shape{1, 4, 2})), ShapeError);
}

TEST_CASE("psnr decreases with noise variance")
{
    Rng rng(2);
    const Tensor y = random_tensor({3, 16, 16}, rng, 0, 1);
    double prev = kInfinitePsnr;
    for (double sigma : {0.01, 0.05, 0.2}) {
        double mean = 0;
        for (int t = 0; t < 20; ++t) mean += psnr(apply_nlf_noise(y, {0, sigma * sigma}, rng), y);
        mean /= 20;
        CHECK(mean < prev);
        prev = mean;
    }
}

TEST_CASE("ssim examples")
{
    Rng rng(3);
    for (int i = 0; i < 10; ++i) {
        const Tensor x = random_tensor({3, 16, 16}, rng, 0, 1), y = random_tensor({3, 16, 16}, rng, 0, 1);
        CHECK(ssim(x, x) == 1.0);
        CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-14));
        CHECK(ssim(x, y) < 1.0);
        CHECK(ssim(x, y) >= -1.0);
    }
    // Constant images: only the luminance term departs from 1.
    const double mx = 0.2, my = 0.6, c1 = 1e-4;
    const double l = (2 * mx * my + c1) / (mx * mx + my * my + c1);
    CHECK(ssim(Tensor(Shape{1, 8, 8}, mx), Tensor(Shape{1, 8, 8}, my)) == doctest::Approx(l).epsilon(1e-14));
    CHECK_THROWS_AS(ssim(Tensor(Shape{1, 4, 8}), Tensor(Shape{1, 4, 8})), ShapeError);
    CHECK_THROWS_AS(ssim(Tensor(Shape{1, 8, 8}), Tensor(Shape{1, 8, 9})), ShapeError);
}

TEST_CASE("task pairs")
{
    const Dataset data = synthesize_dataset(2, 32, 32, NoiseRange{}, 1);
    const LabeledPair dn = make_task_pair(data[0], Task::Denoise);
    CHECK(bit_equal(dn.input, data[0].noisy));
    CHECK(bit_equal(dn.target, data[0].clean));
    const LabeledPair sr = make_task_pair(data[0], Task::Sr2x);
    CHECK(bit_equal(sr.input, downsample2x(data[0].clean)));
    const LabeledPair js = make_task_pair(data[0], Task::JDenSr2x);
    CHECK(js.input.shape() == Shape{3, 16, 16});
    CHECK_FALSE(bit_equal(js.input, sr.input));
    const LabeledPair jdd = make_task_pair(data[0], Task::Jdd);
    CHECK(bit_equal(jdd.input, mosaic(data[0].noisy)));
    CHECK(bit_equal(jdd.target, data[0].clean));
    CHECK(parse_task("jdensr2x") == Task::JDenSr2x);
    CHECK(task_head(Task::Sr2x) == HeadKind::Upsample2x);
    CHECK(task_input_channels(Task::Jdd) == 1);
    CHECK_THROWS(parse_task("deblur"));
}

TEST_CASE("evaluate averages per-image metrics")
{
    const Dataset data = synthesize_dataset(3, 32, 32, NoiseRange{}, 4);
    const auto test = make_task_pairs(data, Task::Denoise);
    NetSpec s;
    s.arch = Arch::DncnnSmall;
    const RestorerNet identity(s, 1, Init::Zero);
    const MetricsReport r = evaluate(identity, test, "denoise", "identity");
    REQUIRE(r.psnr.size() == 3);
    double m = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(r.psnr[i] == psnr(data[i].noisy, data[i].clean));
        m += r.psnr[i];
    }
    CHECK(r.psnr_mean == doctest::Approx(m / 3).epsilon(1e-14));

    const Dataset clean = synthesize_dataset(2, 32, 32, NoiseRange{0, 0}, 4);
    const MetricsReport inf = evaluate(identity, make_task_pairs(clean, Task::Denoise), "denoise", "identity");
    CHECK(inf.psnr_mean == kInfinitePsnr);
    CHECK(inf.ssim_mean == 1.0);
}

TEST_CASE("proxy evaluation freezes the backbone and is deterministic")
{
    const Dataset data = synthesize_dataset(6, 32, 32, NoiseRange{}, 5);
    const auto pairs = make_task_pairs(data, Task::Denoise);
    const std::vector<LabeledPair> train(pairs.begin(), pairs.begin() + 4), test(pairs.begin() + 4, pairs.end());
    const RestorerNet net(NetSpec{}, 9);
    FinetuneConfig fc;
    fc.steps = 5;
    fc.crop = 16;
    const ProxyResult a = proxy_evaluate(net.params(), Task::Denoise, train, test, 2, fc);
    const ProxyResult b = proxy_evaluate(net.params(), Task::Denoise, train, test, 2, fc);
    REQUIRE(a.trials.size() == 2);
    CHECK(a.trials[0].psnr == b.trials[0].psnr);
    CHECK(a.trials[0].seed != a.trials[1].seed);
    CHECK(a.mean.psnr_mean == doctest::Approx((a.trials[0].psnr_mean + a.trials[1].psnr_mean) / 2));
    for (const auto& p : a.finetuned)
        for (const auto& e : net.params().entries()) {
            if (e.name.rfind("head.", 0) == 0) continue;
            CHECK(bit_equal(e.tensor, p.get(e.name)));
        }

    // A raw-input task needs a 1-channel network.
    CHECK_THROWS(proxy_evaluate(net.params(), Task::Jdd, make_task_pairs(data, Task::Jdd), test, 1, fc));

    // SR swaps in an upsampling head.
    const auto sr = make_task_pairs(data, Task::Sr2x);
    const ProxyResult up = proxy_evaluate(net.params(), Task::Sr2x, {sr[0], sr[1]}, {sr[4]}, 1, fc);
    CHECK(RestorerNet::from_params(up.finetuned[0]).spec().head == HeadKind::Upsample2x);
}

TEST_CASE("density analysis")
{
    const Dataset data = synthesize_dataset(16, 64, 64, NoiseRange{}, 6);
    const DensityRecord truth = density_analysis(nullptr, data, 200, 32, 0.25, 1, DensityPhase::TrueNoise);
    CHECK(truth.values.size() == 200);
    CHECK(truth.positive_fraction() > 0.7);
    for (double v : truth.values) CHECK(std::isfinite(v));
    CHECK(density_analysis(nullptr, data, 0, 32, 0.25, 1, DensityPhase::TrueNoise).values.empty());

    const RestorerNet net(NetSpec{}, 2);
    const DensityRecord a = density_analysis(&net, data, 20, 32, 0.25, 3, DensityPhase::PreTraining);
    const DensityRecord b = density_analysis(&net, data, 20, 32, 0.25, 3, DensityPhase::PreTraining);
    CHECK(a.values == b.values);
    CHECK(std::string(phase_name(DensityPhase::PostTraining)) == "post-training");

    // An identity network leaves no residual at all.
    NetSpec s;
    s.arch = Arch::DncnnSmall;
    const RestorerNet identity(s, 1, Init::Zero);
    for (double v : density_analysis(&identity, data, 10, 32, 0.25, 3, DensityPhase::PreTraining).values) CHECK(v == 0.0);
}

TEST_CASE("label subsets are nested prefixes")
{
    const auto o = label_order(20, 7);
    CHECK(o.size() == 20);
    CHECK(o == label_order(20, 7));
    CHECK(o != label_order(20, 8));
    std::vector<bool> seen(20, false);
    for (std::size_t i : o) seen[i] = true;
    for (bool s : seen) CHECK(s);
}

TEST_CASE("label-efficiency sweep")
{
    const Dataset data = synthesize_dataset(8, 32, 32, NoiseRange{}, 7);
    const auto pairs = make_task_pairs(data, Task::Denoise);
    const std::vector<LabeledPair> pool(pairs.begin(), pairs.begin() + 6), test(pairs.begin() + 6, pairs.end());
    const RestorerNet net(NetSpec{}, 1);
    FinetuneConfig fc;
    fc.steps = 3;
    fc.crop = 16;
    const auto rows = label_efficiency_sweep(net.params(), pool, test, {0, 2, 4}, fc);
    REQUIRE(rows.size() == 3);
    CHECK_FALSE(rows[0].supervised.has_value());
    CHECK(rows[0].rcl.psnr_mean == evaluate(net, test, "denoise", "rcl").psnr_mean);
    CHECK(rows[1].supervised.has_value());
    CHECK(rows[2].count == 4);
    CHECK_THROWS_AS(label_efficiency_sweep(net.params(), pool, test, {7}, fc), InsufficientLabelsError);
}
