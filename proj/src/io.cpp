#include "rcl/io.hpp"

#include "binary.hpp"
#include "rcl/checkpoint.hpp"

#include <png.h>

#include <charconv>
#include <fstream>
#include <sstream>

namespace rcl {

namespace fs = std::filesystem;

std::vector<unsigned char> encode_tensor(const Tensor& t)
{
    detail::ByteWriter w;
    w.bytes("RCT1", 4);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.f64(v);
    return w.buffer();
}

Tensor decode_tensor(const std::vector<unsigned char>& bytes)
{
    detail::ByteReader r(bytes);
    try {
        if (r.str(4) != "RCT1") throw FormatError("tensor file: bad magic bytes");
        const auto rank = r.u32();
        r.need(std::size_t{4} * rank);
        Shape shape(rank);
        for (auto& d : shape)
            if ((d = r.u32()) == 0) throw FormatError("tensor file: zero extent");
        const std::size_t n = numel(shape);
        r.need(n * 8);
        std::vector<double> values(n);
        for (auto& v : values) v = r.f64();
        if (r.remaining()) throw FormatError("tensor file: trailing bytes");
        return Tensor(std::move(shape), std::move(values));
    } catch (const detail::TruncatedInput& e) {
        throw FormatError(std::string("tensor file truncated: ") + e.what());
    }
}

void save_tensor(const Tensor& t, const fs::path& path) { write_file(path, encode_tensor(t)); }

Tensor load_tensor(const fs::path& path)
{
    try {
        return decode_tensor(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

Tensor load_png(const fs::path& path)
{
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw FormatError(path.string() + ": " + image.message);
    const bool color = image.format & PNG_FORMAT_FLAG_COLOR;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const std::size_t C = color ? 3 : 1, H = image.height, W = image.width;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw FormatError(path.string() + ": " + msg);
    }
    Tensor t(Shape{C, H, W});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c) t[(c * H + y) * W + x] = buf[(y * W + x) * C + c] / 255.0;
    return t;
}

std::string format_double(double v)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

namespace {

std::vector<std::string> split(const std::string& line, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

template <class T>
T parse_number(const std::string& s, const std::string& where)
{
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw FormatError(where + ": cannot parse '" + s + "'");
    return v;
}

} // namespace

void write_manifest(const DatasetManifest& m, const fs::path& file)
{
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + file.string() + "' for writing");
    out << "# clean,noisy,lambda_shot,lambda_read,noise_seed\n";
    for (const auto& e : m.entries) {
        out << e.clean_path << ',' << e.noisy_path << ',';
        if (e.params) out << format_double(e.params->lambda_shot) << ',' << format_double(e.params->lambda_read);
        else out << ',';
        out << ',';
        if (e.noise_seed) out << *e.noise_seed;
        out << '\n';
    }
    if (!out) throw std::runtime_error("write to '" + file.string() + "' failed");
}

DatasetManifest read_manifest(const fs::path& file)
{
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open manifest '" + file.string() + "'");
    DatasetManifest m;
    m.root = file.parent_path();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const std::string where = file.string() + ":" + std::to_string(lineno);
        const auto f = split(line, ',');
        if (f.size() != 5) throw FormatError(where + ": expected 5 comma-separated fields");
        if (f[0].empty()) throw FormatError(where + ": missing clean path");
        ManifestEntry e;
        e.clean_path = f[0];
        e.noisy_path = f[1];
        if (!f[2].empty() || !f[3].empty())
            e.params = NoiseParams{parse_number<double>(f[2], where), parse_number<double>(f[3], where)};
        if (!f[4].empty()) e.noise_seed = parse_number<std::uint64_t>(f[4], where);
        m.entries.push_back(std::move(e));
    }
    return m;
}

DatasetManifest save_dataset(const Dataset& data, const fs::path& dir)
{
    fs::create_directories(dir / "clean");
    fs::create_directories(dir / "noisy");
    DatasetManifest m;
    m.root = dir;
    for (std::size_t i = 0; i < data.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%05zu.rct", i);
        ManifestEntry e{std::string("clean/") + name, std::string("noisy/") + name, data[i].params,
                        data[i].noise_seed};
        save_tensor(data[i].clean, dir / e.clean_path);
        save_tensor(data[i].noisy, dir / e.noisy_path);
        m.entries.push_back(std::move(e));
    }
    write_manifest(m, dir / kManifestName);
    return m;
}

Dataset load_dataset(const fs::path& path)
{
    const fs::path file = fs::is_directory(path) ? path / kManifestName : path;
    if (!fs::exists(file)) throw std::runtime_error("dataset manifest '" + file.string() + "' not found");
    const DatasetManifest m = read_manifest(file);
    Dataset data;
    for (const auto& e : m.entries) {
        if (e.noisy_path.empty()) throw FormatError(file.string() + ": entry '" + e.clean_path + "' has no noisy image");
        ImageRecord r;
        r.clean = load_tensor(m.root / e.clean_path);
        r.noisy = load_tensor(m.root / e.noisy_path);
        if (r.clean.shape() != r.noisy.shape() || r.clean.rank() != 3)
            throw FormatError(file.string() + ": clean/noisy shapes differ for '" + e.clean_path + "'");
        if (!data.empty() && r.clean.dim(0) != data[0].clean.dim(0))
            throw FormatError(file.string() + ": images have different channel counts");
        r.params = e.params.value_or(NoiseParams{});
        r.noise_seed = e.noise_seed.value_or(0);
        data.push_back(std::move(r));
    }
    return data;
}

} // namespace rcl
