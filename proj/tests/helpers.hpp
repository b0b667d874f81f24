#pragma once

#include "rcl/random.hpp"
#include "rcl/tensor.hpp"

#include <filesystem>
#include <string>

namespace testing {

inline rcl::Tensor random_tensor(rcl::Shape shape, rcl::Rng& rng, double lo = -1.0, double hi = 1.0)
{
    rcl::Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("rcl-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace testing
