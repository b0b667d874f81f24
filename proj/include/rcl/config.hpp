#pragma once

#include "rcl/eval.hpp"
#include "rcl/train.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rcl {

// Flat `key = value` run configuration. Every key has a default; unknown keys
// and malformed values are rejected at parse time. Path-valued keys are made
// absolute relative to the config file's directory.
class RunConfig {
public:
    RunConfig();
    static RunConfig parse(const std::string& text, const std::filesystem::path& base_dir = {});
    static RunConfig load(const std::filesystem::path& file);

    const std::string& get(const std::string& key) const;
    double number(const std::string& key) const;
    std::uint64_t integer(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::filesystem::path path(const std::string& key) const;
    // Overrides one key (validated the same way as file input).
    void set(const std::string& key, const std::string& value);

    // Every key, one `key = value` line, in schema order.
    std::string resolved_text() const;
    static std::vector<std::string> keys();

    TrainConfig train() const;
    FinetuneConfig finetune() const;
    NoiseRange noise() const;
    Task task() const;
    std::vector<std::size_t> counts() const;

private:
    void validate_value(const std::string& key, const std::string& value) const;
    std::map<std::string, std::string> values_;
};

} // namespace rcl
