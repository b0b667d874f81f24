#pragma once

#include "rcl/train.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rcl {

// "RCT1" tensor file: magic, rank u32, extents u32 x rank, values f64 x numel,
// all little-endian.
std::vector<unsigned char> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<unsigned char>& bytes);
void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// 8-bit grayscale or RGB PNG -> [C,H,W] in [0,1] (C = 1 or 3; alpha dropped).
Tensor load_png(const std::filesystem::path& path);

struct ManifestEntry {
    std::string clean_path;
    std::string noisy_path; // may be empty
    std::optional<NoiseParams> params;
    std::optional<std::uint64_t> noise_seed;
    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

// One line per entry: clean-path,noisy-path,lambda_shot,lambda_read,noise-seed.
// Paths are relative to the manifest's directory; optional fields are empty.
// Lines starting with '#' are comments.
struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;
    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline constexpr const char* kManifestName = "manifest.csv";

void write_manifest(const DatasetManifest& m, const std::filesystem::path& file);
DatasetManifest read_manifest(const std::filesystem::path& file);

// Writes clean/noisy tensors under `dir` plus the manifest.
DatasetManifest save_dataset(const Dataset& data, const std::filesystem::path& dir);
// Accepts a dataset directory or a manifest file. Every entry needs a noisy
// image; all images must share one channel count.
Dataset load_dataset(const std::filesystem::path& path);

// Shortest round-trip decimal text of a double.
std::string format_double(double v);

} // namespace rcl
