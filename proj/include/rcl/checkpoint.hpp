#pragma once

#include "rcl/nn.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcl {

// "RCL1" checkpoint layout, all integers little-endian:
//   magic "RCL1" | version u8 (=1) | entry count u32 |
//   per entry: name length u32, UTF-8 name, rank u32, extents u32 x rank,
//              values f64 x numel
class CheckpointError : public std::runtime_error {
public:
    enum class Kind { CorruptMagic, Truncated, VersionMismatch, Io, Malformed };
    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

inline constexpr std::uint8_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

// Reads/writes whole files; throw std::runtime_error on I/O failure.
std::vector<unsigned char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);

// FNV-1a 64 over the encoded checkpoint; used for determinism checks.
std::uint64_t checkpoint_hash(const ModelParams& params);
std::uint64_t fnv1a64(const std::vector<unsigned char>& bytes);

} // namespace rcl
