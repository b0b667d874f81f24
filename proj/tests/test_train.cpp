#include "helpers.hpp"
#include "rcl/train.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using namespace rcl;
using testing::random_tensor;

namespace {

double overlap_fraction(const CropPair& p, std::size_t crop)
{
    auto overlap1d = [&](std::size_t a, std::size_t b) {
        const std::size_t lo = std::max(a, b), hi = std::min(a, b) + crop;
        return hi > lo ? hi - lo : 0;
    };
    return static_cast<double>(overlap1d(p.ya, p.yb) * overlap1d(p.xa, p.xb)) / static_cast<double>(crop * crop);
}

TrainConfig small_config()
{
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.crop = 16;
    cfg.steps = 10;
    return cfg;
}

double mean_of(const std::vector<double>& v, std::size_t begin, std::size_t end)
{
    return std::accumulate(v.begin() + begin, v.begin() + end, 0.0) / static_cast<double>(end - begin);
}

} // namespace

TEST_CASE("positive pairs overlap by at least overlap_min")
{
    Rng rng(1);
    const Tensor img = random_tensor({3, 64, 48}, rng);
    for (int i = 0; i < 10000; ++i) {
        const CropPair p = sample_positive_pair(img, 16, 0.25, rng);
        REQUIRE(overlap_fraction(p, 16) >= 0.25);
        CHECK(bit_equal(p.a, crop(img, p.ya, p.xa, 16, 16)));
    }
    const Tensor exact = random_tensor({3, 16, 16}, rng);
    const CropPair same = sample_positive_pair(exact, 16, 0.9, rng);
    CHECK(bit_equal(same.a, same.b));
    CHECK(bit_equal(same.a, exact));

    CHECK_THROWS_AS(sample_positive_pair(img, 16, 1.0, rng), ConfigError);
    CHECK_THROWS_AS(sample_positive_pair(img, 128, 0.25, rng), ShapeError);

    for (int i = 0; i < 100; ++i) {
        const CropPair p = sample_positive_pair(img, 16, 0.25, rng, 2);
        CHECK(p.ya % 2 == 0);
        CHECK(p.xb % 2 == 0);
    }
}

TEST_CASE("dataset synthesis is deterministic and uses per-image noise")
{
    const Dataset a = synthesize_dataset(6, 32, 32, NoiseRange{}, 5), b = synthesize_dataset(6, 32, 32, NoiseRange{}, 5);
    REQUIRE(a.size() == 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(bit_equal(a[i].noisy, b[i].noisy));
        CHECK(a[i].params == b[i].params);
        Rng r(a[i].noise_seed);
        CHECK(bit_equal(apply_nlf_noise(a[i].clean, a[i].params, r), a[i].noisy));
    }
    CHECK_FALSE(a[0].params == a[1].params);
    CHECK_FALSE(bit_equal(second_view(a[0]), a[0].noisy));
}

TEST_CASE("batches hold distinct instances")
{
    const Dataset data = synthesize_dataset(10, 32, 32, NoiseRange{}, 2);
    TrainConfig cfg = small_config();
    cfg.batch_size = 8;
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const TrainBatch b = sample_batch(data, cfg, rng);
        CHECK(b.pairs.size() == 8);
        CHECK(b.negatives() == 7);
        std::set<std::size_t> ids;
        for (const auto& p : b.pairs) ids.insert(p.instance_id);
        CHECK(ids.size() == 8);
        b.validate();
    }
    TrainBatch bad = sample_batch(data, cfg, rng);
    bad.pairs[1].instance_id = bad.pairs[0].instance_id;
    CHECK_THROWS(bad.validate());

    cfg.batch_size = 11;
    CHECK_THROWS(sample_batch(data, cfg, rng));
}

TEST_CASE("rcl_step performs (N+1)^2 distance evaluations and 2N+2 forward passes")
{
    const Dataset data = synthesize_dataset(10, 32, 32, NoiseRange{}, 4);
    FeatureEncoder enc(7);
    for (std::size_t P : {4, 8}) {
        TrainConfig cfg = small_config();
        cfg.batch_size = P;
        RestorerNet net = make_initial_net(cfg);
        Rng rng(5);
        const StepResult r = rcl_step(sample_batch(data, cfg, rng), net, enc, cfg);
        CHECK(r.distance_evals == P * P);
        CHECK(r.forward_passes == 2 * P);
        CHECK(r.loss == doctest::Approx(cfg.alpha * r.contrastive + r.consistency).epsilon(1e-14));
        CHECK(r.grads.size() == net.params().size());
    }
}

TEST_CASE("rcl_step with alpha = 0 returns the consistency loss and is deterministic")
{
    const Dataset data = synthesize_dataset(6, 32, 32, NoiseRange{}, 4);
    FeatureEncoder enc(7);
    TrainConfig cfg = small_config();
    cfg.alpha = 0.0;
    RestorerNet net = make_initial_net(cfg);
    Rng r1(6), r2(6);
    const TrainBatch batch = sample_batch(data, cfg, r1);
    const StepResult a = rcl_step(batch, net, enc, cfg);
    CHECK(a.loss == a.consistency);
    CHECK(a.distance_evals == 0);

    // Consistency averaged over all crops.
    std::vector<Tensor> crops;
    for (const auto& p : batch.pairs) {
        crops.push_back(p.a);
        crops.push_back(p.b);
    }
    const Tensor X = stack(crops);
    const Tensor fx = enc.encode(X), ff = enc.encode(net.forward(X));
    double s = 0;
    for (std::size_t i = 0; i < fx.size(); ++i) s += (fx[i] - ff[i]) * (fx[i] - ff[i]);
    CHECK(a.consistency == doctest::Approx(s / static_cast<double>(crops.size())).epsilon(1e-12));

    cfg.alpha = 1e-3;
    const StepResult b1 = rcl_step(sample_batch(data, cfg, r2), net, enc, cfg);
    Rng r3(6);
    const StepResult b2 = rcl_step(sample_batch(data, cfg, r3), net, enc, cfg);
    CHECK(b1.loss == b2.loss);
    for (const auto& [name, g] : b1.grads) CHECK(bit_equal(g, b2.grads.at(name)));
}

TEST_CASE("the full objective gradient matches finite differences")
{
    // Micro-batch of two 8x8 pairs; probe a random subset of parameter entries.
    const Dataset data = synthesize_dataset(4, 16, 16, NoiseRange{}, 8);
    FeatureEncoder enc(7);
    for (Distance kind : {Distance::EMD, Distance::BD}) {
        TrainConfig cfg;
        cfg.batch_size = 2;
        cfg.crop = 8;
        cfg.alpha = 0.5;
        cfg.distance.kind = kind;
        RestorerNet net = make_initial_net(cfg);
        Rng rng(9);
        const TrainBatch batch = sample_batch(data, cfg, rng);
        const StepResult base = rcl_step(batch, net, enc, cfg);
        double scale = 0;
        for (const auto& [n, g] : base.grads)
            for (double v : g.values()) scale = std::max(scale, std::abs(v));
        const double floor = std::max(1e-7, 1e-3 * scale), h = 1e-5, tol = 1e-4;

        std::size_t checked = 0;
        double worst = 0;
        for (auto& e : net.params().entries()) {
            for (int k = 0; k < 6; ++k) {
                const std::size_t i = rng.index(e.tensor.size());
                const double x0 = e.tensor[i];
                e.tensor[i] = x0 + h;
                const double fp = rcl_step(batch, net, enc, cfg).loss;
                e.tensor[i] = x0 - h;
                const double fm = rcl_step(batch, net, enc, cfg).loss;
                e.tensor[i] = x0;
                const double num = (fp - fm) / (2 * h), ana = base.grads.at(e.name)[i];
                const double denom = std::max({std::abs(num), std::abs(ana), floor});
                if (std::abs(fp - 2 * base.loss + fm) / h > tol * denom) continue;
                ++checked;
                worst = std::max(worst, std::abs(num - ana) / denom);
            }
        }
        CAPTURE(distance_name(kind));
        CHECK(checked > 50);
        CHECK(worst < tol);
    }
}

TEST_CASE("config validation")
{
    TrainConfig cfg;
    cfg.validate();
    auto bad = [](auto mutate) {
        TrainConfig c;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), ConfigError);
    };
    bad([](TrainConfig& c) { c.crop = 30; });
    bad([](TrainConfig& c) { c.crop = 20; });
    bad([](TrainConfig& c) { c.batch_size = 1; });
    bad([](TrainConfig& c) { c.tau = 0; });
    bad([](TrainConfig& c) { c.overlap_min = 1.0; });
    bad([](TrainConfig& c) {
        c.domain = Domain::Raw;
        c.mode = PretrainMode::N2N;
    });
    bad([](TrainConfig& c) {
        c.domain = Domain::Raw;
        c.arch = Arch::DncnnSmall;
    });
    CHECK(parse_mode("consistency-only") == PretrainMode::ConsistencyOnly);
    CHECK_THROWS_AS(parse_mode("simclr"), ConfigError);
}

TEST_CASE("pretrain: zero steps return the initial parameters")
{
    const Dataset data = synthesize_dataset(6, 32, 32, NoiseRange{}, 1);
    TrainConfig cfg = small_config();
    cfg.steps = 0;
    const PretrainResult r = pretrain(data, cfg);
    CHECK(bit_equal(r.params, make_initial_net(cfg).params()));
    CHECK(r.losses.empty());
    CHECK_THROWS(pretrain(Dataset{}, small_config()));
}

TEST_CASE("pretrain is deterministic")
{
    const Dataset data = synthesize_dataset(6, 32, 32, NoiseRange{}, 1);
    TrainConfig cfg = small_config();
    cfg.steps = 3;
    const PretrainResult a = pretrain(data, cfg), b = pretrain(data, cfg);
    CHECK(bit_equal(a.params, b.params));
    CHECK(a.losses == b.losses);
    cfg.seed = 2;
    CHECK_FALSE(bit_equal(pretrain(data, cfg).params, a.params));
}

TEST_CASE("n2n on noise-free data fits the clean targets")
{
    const Dataset data = synthesize_dataset(16, 32, 32, NoiseRange{0, 0}, 3);
    TrainConfig cfg = small_config();
    cfg.mode = PretrainMode::N2N;
    cfg.arch = Arch::DncnnSmall;
    cfg.steps = 300;
    const PretrainResult r = pretrain(data, cfg);
    CHECK(mean_of(r.losses, 280, 300) < 1e-3);
}

TEST_CASE("baseline modes run")
{
    const Dataset data = synthesize_dataset(6, 32, 32, NoiseRange{}, 1);
    for (PretrainMode m : {PretrainMode::N2S, PretrainMode::Supervised, PretrainMode::ConsistencyOnly}) {
        TrainConfig cfg = small_config();
        cfg.mode = m;
        cfg.steps = 4;
        CAPTURE(mode_name(m));
        const PretrainResult r = pretrain(data, cfg);
        CHECK(r.losses.size() == 4);
        for (double l : r.losses) CHECK(std::isfinite(l));
    }
    TrainConfig raw = small_config();
    raw.domain = Domain::Raw;
    raw.steps = 2;
    const PretrainResult r = pretrain(data, raw);
    CHECK(RestorerNet::from_params(r.params).spec().in_channels == 1);
}

TEST_CASE("rcl pretraining reduces the loss")
{
    const Dataset data = synthesize_dataset(16, 32, 32, NoiseRange{}, 11);
    TrainConfig cfg = small_config();
    cfg.steps = 200;
    const PretrainResult r = pretrain(data, cfg);
    CHECK(mean_of(r.losses, 100, 200) < mean_of(r.losses, 0, 100));
}

TEST_CASE("frozen fine-tuning changes only the head")
{
    const Dataset data = synthesize_dataset(4, 32, 32, NoiseRange{}, 2);
    std::vector<LabeledPair> labeled;
    for (const auto& r : data) labeled.push_back({r.noisy, r.clean});
    const RestorerNet net(NetSpec{}, 3);
    FinetuneConfig fc;
    fc.steps = 200;
    fc.crop = 16;
    const FinetuneResult res = finetune(net.params(), labeled, fc, FinetuneOptions{});
    for (const auto& e : net.params().entries()) {
        if (e.name == "head.w" || e.name == "head.b") {
            CHECK_FALSE(bit_equal(e.tensor, res.net.params().get(e.name)));
            continue;
        }
        CHECK(bit_equal(e.tensor, res.net.params().get(e.name)));
    }
    CHECK(res.losses.size() == 200);
    CHECK(mean_of(res.losses, 180, 200) < mean_of(res.losses, 0, 20));

    // No labels: fresh head, nothing trained.
    const FinetuneResult empty = finetune(net.params(), {}, fc, FinetuneOptions{});
    CHECK(empty.losses.empty());
    RestorerNet fresh = net;
    fresh.replace_head(HeadKind::Identity, 3, derive_seed(fc.seed, 0x4EAD));
    CHECK(bit_equal(empty.net.params(), fresh.params()));
    CHECK_FALSE(bit_equal(empty.net.params().get("head.w"), net.params().get("head.w")));

    // Full fine-tuning moves the backbone too.
    FinetuneOptions full;
    full.freeze_all_but_head = false;
    fc.steps = 3;
    const FinetuneResult all = finetune(net.params(), labeled, fc, full);
    CHECK_FALSE(bit_equal(all.net.params().get("enc1.conv1.w"), net.params().get("enc1.conv1.w")));
}

TEST_CASE("fine-tuning rejects a mismatched task head")
{
    const Dataset data = synthesize_dataset(2, 32, 32, NoiseRange{}, 2);
    std::vector<LabeledPair> sr;
    for (const auto& r : data) sr.push_back({downsample2x(r.noisy), r.clean});
    FinetuneConfig fc;
    fc.steps = 2;
    fc.crop = 16;
    const RestorerNet net(NetSpec{}, 3);
    CHECK_THROWS_AS(finetune(net.params(), sr, fc, FinetuneOptions{}), ShapeError);
    FinetuneOptions up;
    up.head = HeadKind::Upsample2x;
    const FinetuneResult ok = finetune(net.params(), sr, fc, up);
    CHECK(ok.net.spec().head == HeadKind::Upsample2x);

    Rng rng(1);
    const LabeledPair c = sample_labeled_crop(sr[0], 16, rng);
    CHECK(c.input.shape() == Shape{3, 8, 8});
    CHECK(c.target.shape() == Shape{3, 16, 16});
}
