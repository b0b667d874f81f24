#pragma once

#include "rcl/config.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

namespace rcl {

// Each command writes its artifacts plus `config.resolved` (every key,
// including the effective seed) into `out`, which is created if needed.
void cmd_simulate(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void cmd_pretrain(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void cmd_finetune(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void cmd_analyze(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);

// Loads the config, applies the --seed override, picks a fresh run directory
// under ./runs when `out` is not given, and dispatches. Returns the run
// directory.
std::filesystem::path run_command(const std::string& command, const std::filesystem::path& config,
                                  const std::optional<std::filesystem::path>& out,
                                  const std::optional<std::uint64_t>& seed, std::ostream& log);

class MissingArtifactError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// FNV-1a hash of every entry except the head, for freeze checks.
std::uint64_t backbone_hash(const ModelParams& params);

} // namespace rcl
