#include "rcl/commands.hpp"

#include "rcl/checkpoint.hpp"
#include "rcl/io.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace rcl {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& file, const std::string& text)
{
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + file.string() + "' for writing");
    out << text;
    if (!out) throw std::runtime_error("write to '" + file.string() + "' failed");
}

void echo_config(const RunConfig& cfg, const fs::path& out)
{
    fs::create_directories(out);
    write_text(out / "config.resolved", cfg.resolved_text());
}

fs::path required_path(const RunConfig& cfg, const std::string& key, const char* what)
{
    const fs::path p = cfg.path(key);
    if (p.empty()) throw MissingArtifactError(std::string(what) + " not configured (set '" + key + "')");
    if (!fs::exists(p)) throw MissingArtifactError(std::string(what) + " '" + p.string() + "' does not exist");
    return p;
}

Dataset dataset_of(const RunConfig& cfg) { return load_dataset(required_path(cfg, "dataset", "dataset")); }

ModelParams checkpoint_of(const RunConfig& cfg, const std::string& key)
{
    return load_checkpoint(required_path(cfg, key, "checkpoint"));
}

FeatureEncoder encoder_of(const RunConfig& cfg)
{
    const fs::path w = cfg.path("model.encoder_weights");
    if (w.empty()) return FeatureEncoder(cfg.integer("model.encoder_seed"));
    return FeatureEncoder(load_checkpoint(required_path(cfg, "model.encoder_weights", "encoder weights")));
}

std::string hex(std::uint64_t v)
{
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

// Labeled training subset (seeded prefix) and the test set: the configured
// test dataset, or else every pool image outside the largest subset.
struct Split {
    std::vector<LabeledPair> pool, train, test;
    std::vector<std::size_t> order;
};

Split split_of(const RunConfig& cfg, const Dataset& data, Task task, std::size_t labels)
{
    Split s;
    s.pool = make_task_pairs(data, task);
    if (labels > s.pool.size())
        throw InsufficientLabelsError("requested " + std::to_string(labels) + " labels but the pool has only " +
                                      std::to_string(s.pool.size()) + " images");
    s.order = label_order(s.pool.size(), cfg.integer("seed"));
    for (std::size_t i = 0; i < labels; ++i) s.train.push_back(s.pool[s.order[i]]);
    if (!cfg.path("eval.test_dataset").empty()) {
        s.test = make_task_pairs(load_dataset(required_path(cfg, "eval.test_dataset", "test dataset")), task);
    } else {
        for (std::size_t i = labels; i < s.order.size(); ++i) s.test.push_back(s.pool[s.order[i]]);
    }
    if (s.test.empty()) throw std::invalid_argument("no test images left (set 'eval.test_dataset')");
    return s;
}

void write_metrics(const fs::path& out, const std::vector<MetricsReport>& trials, const MetricsReport* mean)
{
    std::ofstream m(out / "metrics.csv"), p(out / "per_image.csv");
    m << "task,method,trial,seed,psnr_mean,ssim_mean\n";
    p << "task,method,trial,image,psnr,ssim\n";
    for (const auto& r : trials) {
        m << r.task << ',' << r.method << ',' << r.trial << ',' << r.seed << ',' << format_metric(r.psnr_mean) << ','
          << format_metric(r.ssim_mean) << '\n';
        for (std::size_t i = 0; i < r.psnr.size(); ++i)
            p << r.task << ',' << r.method << ',' << r.trial << ',' << i << ',' << format_metric(r.psnr[i]) << ','
              << format_metric(r.ssim[i]) << '\n';
    }
    if (mean)
        m << mean->task << ',' << mean->method << ",mean,," << format_metric(mean->psnr_mean) << ','
          << format_metric(mean->ssim_mean) << '\n';
    if (!m || !p) throw std::runtime_error("writing metrics to '" + out.string() + "' failed");
}

void write_losses(const fs::path& file, const std::vector<double>& losses)
{
    std::ofstream out(file);
    out << "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << format_double(losses[i]) << '\n';
    if (!out) throw std::runtime_error("writing '" + file.string() + "' failed");
}

Tensor crop_to_multiple_of_4(const Tensor& img)
{
    const std::size_t h = img.dim(1) / 4 * 4, w = img.dim(2) / 4 * 4;
    if (h == 0 || w == 0) throw FormatError("image " + to_string(img.shape()) + " is smaller than 4x4");
    return crop(img, 0, 0, h, w);
}

} // namespace

std::uint64_t backbone_hash(const ModelParams& params)
{
    ModelParams body;
    for (const auto& e : params.entries())
        if (e.name != "head.w" && e.name != "head.b") body.add(e.name, e.tensor);
    return checkpoint_hash(body);
}

void cmd_simulate(const RunConfig& cfg, const fs::path& out, std::ostream& log)
{
    echo_config(cfg, out);
    const NoiseRange range = cfg.noise();
    const std::uint64_t seed = cfg.integer("seed");
    Dataset data;
    if (!cfg.path("sim.png_dir").empty()) {
        const fs::path dir = required_path(cfg, "sim.png_dir", "PNG directory");
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw MissingArtifactError("no .png files in '" + dir.string() + "'");
        for (std::size_t i = 0; i < files.size(); ++i) {
            Tensor img = crop_to_multiple_of_4(load_png(files[i]));
            if (!data.empty() && img.dim(0) != data[0].clean.dim(0))
                throw FormatError("'" + files[i].string() + "' has a different channel count");
            data.push_back(make_record(std::move(img), range, derive_seed(seed, 2 * i + 1)));
        }
    } else {
        const std::size_t count = cfg.integer("sim.count");
        if (count == 0) throw ConfigError("sim.count must be positive");
        data = synthesize_dataset(count, cfg.integer("sim.height"), cfg.integer("sim.width"), range, seed);
    }
    save_dataset(data, out);
    log << "simulate: wrote " << data.size() << " images to " << out.string() << "\n";
}

void cmd_pretrain(const RunConfig& cfg, const fs::path& out, std::ostream& log)
{
    echo_config(cfg, out);
    const Dataset data = dataset_of(cfg);
    const TrainConfig tc = cfg.train();
    const std::size_t every = std::max<std::size_t>(1, tc.steps / 20);
    PretrainResult res = pretrain(data, tc, encoder_of(cfg), [&](std::size_t step, double loss) {
        if ((step + 1) % every == 0) log << "pretrain: step " << step + 1 << "/" << tc.steps << " loss " << loss << "\n";
    });
    save_checkpoint(res.params, out / "checkpoint.rcl");
    write_losses(out / "loss.csv", res.losses);
    log << "pretrain: mode " << mode_name(tc.mode) << ", checkpoint hash " << hex(checkpoint_hash(res.params)) << "\n";
}

void cmd_finetune(const RunConfig& cfg, const fs::path& out, std::ostream& log)
{
    echo_config(cfg, out);
    const ModelParams base = checkpoint_of(cfg, "finetune.checkpoint");
    const Task task = cfg.task();
    const Split split = split_of(cfg, dataset_of(cfg), task, cfg.integer("finetune.labels"));
    const bool frozen = cfg.flag("finetune.frozen");
    const RestorerNet net = RestorerNet::from_params(base);

    FinetuneOptions opts;
    opts.freeze_all_but_head = frozen;
    opts.head = task_head(task);
    opts.replace_head = frozen || net.spec().head != opts.head;
    FinetuneResult ft = finetune(net, split.train, cfg.finetune(), opts);

    save_checkpoint(ft.net.params(), out / "checkpoint.rcl");
    write_losses(out / "finetune_loss.csv", ft.losses);
    MetricsReport rep = evaluate(ft.net, split.test, task_name(task), frozen ? "proxy" : "full-finetune");
    rep.seed = cfg.integer("seed");
    write_metrics(out, {rep}, nullptr);
    log << "finetune: " << split.train.size() << " labels, psnr " << format_metric(rep.psnr_mean) << " ssim "
        << format_metric(rep.ssim_mean) << "\n"
        << "finetune: backbone hash before " << hex(backbone_hash(base)) << " after "
        << hex(backbone_hash(ft.net.params())) << "\n";
}

void cmd_evaluate(const RunConfig& cfg, const fs::path& out, std::ostream& log)
{
    echo_config(cfg, out);
    const ModelParams params = checkpoint_of(cfg, "eval.checkpoint");
    const Task task = cfg.task();
    const std::size_t trials = cfg.integer("eval.trials");
    if (trials == 0) throw ConfigError("eval.trials must be at least 1");
    const bool direct = cfg.get("eval.protocol") == "direct";
    const Split split = split_of(cfg, dataset_of(cfg), task, direct ? 0 : cfg.integer("finetune.labels"));

    std::vector<MetricsReport> reports;
    MetricsReport mean;
    if (direct) {
        const RestorerNet net = RestorerNet::from_params(params);
        if (net.spec().in_channels != task_input_channels(task) || net.spec().head != task_head(task))
            throw std::invalid_argument(std::string("checkpoint does not fit task ") + task_name(task));
        MetricsReport rep = evaluate(net, split.test, task_name(task), "direct");
        for (std::size_t t = 0; t < trials; ++t) {
            rep.trial = t;
            rep.seed = cfg.integer("seed");
            reports.push_back(rep);
        }
        mean = mean_report(reports);
    } else {
        ProxyResult res = proxy_evaluate(params, task, split.train, split.test, trials, cfg.finetune());
        reports = std::move(res.trials);
        mean = res.mean;
    }
    write_metrics(out, reports, &mean);
    log << "evaluate: " << task_name(task) << " over " << trials << " trials, mean psnr "
        << format_metric(mean.psnr_mean) << " ssim " << format_metric(mean.ssim_mean) << "\n";
}

void cmd_analyze(const RunConfig& cfg, const fs::path& out, std::ostream& log)
{
    echo_config(cfg, out);
    const Dataset data = dataset_of(cfg);
    const std::uint64_t seed = cfg.integer("seed");
    if (cfg.get("analyze.mode") == "density") {
        const ModelParams post = checkpoint_of(cfg, "analyze.checkpoint");
        const std::size_t n = cfg.integer("analyze.triples");
        const std::size_t crop_size = cfg.integer("analyze.crop");
        const double overlap = cfg.number("train.overlap_min");
        const std::uint64_t triple_seed = derive_seed(seed, 0xDE5);
        const RestorerNet pre_net = make_initial_net(cfg.train());
        const RestorerNet post_net = RestorerNet::from_params(post);

        std::ofstream summary(out / "density_summary.csv");
        summary << "phase,triples,positive_fraction,mean\n";
        const std::pair<DensityPhase, const RestorerNet*> phases[] = {
            {DensityPhase::TrueNoise, nullptr}, {DensityPhase::PreTraining, &pre_net}, {DensityPhase::PostTraining, &post_net}};
        for (const auto& [phase, net] : phases) {
            const DensityRecord rec = density_analysis(net, data, n, crop_size, overlap, triple_seed, phase);
            std::ofstream csv(out / (std::string("density_") + phase_name(phase) + ".csv"));
            csv << "phase,value\n";
            for (double v : rec.values) csv << phase_name(phase) << ',' << format_double(v) << '\n';
            summary << phase_name(phase) << ',' << rec.values.size() << ',' << format_double(rec.positive_fraction())
                    << ',' << format_double(rec.mean()) << '\n';
            log << "density " << phase_name(phase) << ": positive fraction " << rec.positive_fraction() << ", mean "
                << rec.mean() << " over " << rec.values.size() << " triples\n";
        }
        return;
    }

    const std::vector<std::size_t> counts = cfg.counts();
    ModelParams pretrained;
    if (!cfg.path("analyze.checkpoint").empty()) {
        pretrained = checkpoint_of(cfg, "analyze.checkpoint");
    } else {
        log << "sweep: no checkpoint given, pretraining on the dataset\n";
        pretrained = pretrain(data, cfg.train(), encoder_of(cfg)).params;
        save_checkpoint(pretrained, out / "pretrained.rcl");
    }
    const std::size_t largest = counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end());
    const Split split = split_of(cfg, data, Task::Denoise, largest);
    const auto rows = label_efficiency_sweep(pretrained, split.pool, split.test, counts, cfg.finetune(), cfg.train().arch);
    std::ofstream csv(out / "sweep.csv");
    csv << "count,sl_psnr,sl_ssim,rcl_psnr,rcl_ssim\n";
    for (const auto& r : rows) {
        csv << r.count << ',';
        if (r.supervised)
            csv << format_metric(r.supervised->psnr_mean) << ',' << format_metric(r.supervised->ssim_mean);
        else
            csv << "-,-";
        csv << ',' << format_metric(r.rcl.psnr_mean) << ',' << format_metric(r.rcl.ssim_mean) << '\n';
        log << "sweep: " << r.count << " labels: SL "
            << (r.supervised ? format_metric(r.supervised->psnr_mean) : std::string("-")) << " dB, RCL+SL "
            << format_metric(r.rcl.psnr_mean) << " dB\n";
    }
}

fs::path run_command(const std::string& command, const fs::path& config, const std::optional<fs::path>& out,
                     const std::optional<std::uint64_t>& seed, std::ostream& log)
{
    RunConfig cfg = RunConfig::load(config);
    if (seed) cfg.set("seed", std::to_string(*seed));

    fs::path dir;
    if (out) {
        dir = *out;
    } else {
        const std::string stem = "runs/" + command + "-" + cfg.get("seed");
        dir = stem;
        for (int i = 1; fs::exists(dir); ++i) dir = stem + "-" + std::to_string(i);
    }

    if (command == "simulate") cmd_simulate(cfg, dir, log);
    else if (command == "pretrain") cmd_pretrain(cfg, dir, log);
    else if (command == "finetune") cmd_finetune(cfg, dir, log);
    else if (command == "evaluate") cmd_evaluate(cfg, dir, log);
    else if (command == "analyze") cmd_analyze(cfg, dir, log);
    else throw ConfigError("unknown command '" + command + "'");
    return dir;
}

} // namespace rcl
