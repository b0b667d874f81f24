#include "rcl/checkpoint.hpp"

#include "binary.hpp"

#include <fstream>
#include <iterator>

namespace rcl {

std::vector<unsigned char> encode_checkpoint(const ModelParams& params)
{
    detail::ByteWriter w;
    w.bytes("RCL1", 4);
    w.u8(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& e : params.entries()) {
        w.u32(static_cast<std::uint32_t>(e.name.size()));
        w.bytes(e.name.data(), e.name.size());
        w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
        for (auto d : e.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (double v : e.tensor.values()) w.f64(v);
    }
    return w.buffer();
}

ModelParams decode_checkpoint(const std::vector<unsigned char>& bytes)
{
    using Kind = CheckpointError::Kind;
    detail::ByteReader r(bytes);
    try {
        if (r.str(4) != "RCL1") throw CheckpointError(Kind::CorruptMagic, "checkpoint: bad magic bytes");
        const auto version = r.u8();
        if (version != kCheckpointVersion)
            throw CheckpointError(Kind::VersionMismatch,
                                  "checkpoint: version " + std::to_string(version) + ", expected " +
                                      std::to_string(kCheckpointVersion));
        const auto count = r.u32();
        ModelParams params;
        for (std::uint32_t i = 0; i < count; ++i) {
            std::string name = r.str(r.u32());
            const auto rank = r.u32();
            r.need(std::size_t{4} * rank);
            Shape shape(rank);
            for (auto& d : shape) {
                d = r.u32();
                if (d == 0) throw CheckpointError(Kind::Malformed, "checkpoint: zero extent in '" + name + "'");
            }
            const std::size_t n = numel(shape);
            r.need(n * 8);
            std::vector<double> values(n);
            for (auto& v : values) v = r.f64();
            try {
                params.add(std::move(name), Tensor(std::move(shape), std::move(values)));
            } catch (const std::invalid_argument& e) {
                throw CheckpointError(Kind::Malformed, std::string("checkpoint: ") + e.what());
            }
        }
        if (r.remaining() != 0) throw CheckpointError(Kind::Malformed, "checkpoint: trailing bytes");
        return params;
    } catch (const detail::TruncatedInput& e) {
        throw CheckpointError(Kind::Truncated, std::string("checkpoint truncated: ") + e.what());
    }
}

std::vector<unsigned char> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path)
{
    try {
        write_file(path, encode_checkpoint(params));
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::runtime_error& e) {
        throw CheckpointError(CheckpointError::Kind::Io, e.what());
    }
}

ModelParams load_checkpoint(const std::filesystem::path& path)
{
    std::vector<unsigned char> bytes;
    try {
        bytes = read_file(path);
    } catch (const std::runtime_error& e) {
        throw CheckpointError(CheckpointError::Kind::Io, e.what());
    }
    return decode_checkpoint(bytes);
}

std::uint64_t fnv1a64(const std::vector<unsigned char>& bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t checkpoint_hash(const ModelParams& params) { return fnv1a64(encode_checkpoint(params)); }

} // namespace rcl
