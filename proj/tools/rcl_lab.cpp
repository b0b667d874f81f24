#include "rcl/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

static const char* kFooter = R"(Output files (CSV columns in order):
  simulate   manifest.csv (clean,noisy,lambda_shot,lambda_read,noise_seed), clean/*.rct, noisy/*.rct
  pretrain   checkpoint.rcl, loss.csv (step,loss)
  finetune   checkpoint.rcl, finetune_loss.csv (step,loss),
             metrics.csv (task,method,trial,seed,psnr_mean,ssim_mean),
             per_image.csv (task,method,trial,image,psnr,ssim)
  evaluate   metrics.csv (one row per trial plus a "mean" row), per_image.csv
  analyze    density: density_<phase>.csv (phase,value) for true-noise, pre-training,
             post-training; density_summary.csv (phase,triples,positive_fraction,mean)
             sweep: sweep.csv (count,sl_psnr,sl_ssim,rcl_psnr,rcl_ssim)
Every run also writes config.resolved. Infinite PSNR is written as "inf".)";

int main(int argc, char** argv)
{
    CLI::App app{"Residual contrastive learning lab"};
    app.footer(kFooter);
    std::string command;
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    app.add_option("command", command, "simulate | pretrain | finetune | evaluate | analyze")
        ->required()
        ->check(CLI::IsMember({"simulate", "pretrain", "finetune", "evaluate", "analyze"}));
    app.add_option("--config", config, "key = value configuration file")->required();
    auto* out_opt = app.add_option("--out", out, "run directory (default: runs/<command>-<seed>)");
    auto* seed_opt = app.add_option("--seed", seed, "overrides the config seed");
    CLI11_PARSE(app, argc, argv);

    try {
        const auto dir = rcl::run_command(command, config, out_opt->count() ? std::optional<std::filesystem::path>(out) : std::nullopt,
                                          seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt,
                                          std::cout);
        std::cout << "artifacts in " << dir.string() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "rcl-lab " << command << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}
