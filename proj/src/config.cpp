#include "rcl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace rcl {

namespace {

enum class Kind { Int, Real, Bool, Path, Choice, Counts };

struct KeySpec {
    const char* name;
    const char* fallback;
    Kind kind;
    std::vector<std::string> choices = {};
};

const std::vector<KeySpec>& schema()
{
    static const std::vector<KeySpec> s = {
        {"seed", "1", Kind::Int},
        {"dataset", "", Kind::Path},
        {"sim.count", "64", Kind::Int},
        {"sim.height", "64", Kind::Int},
        {"sim.width", "64", Kind::Int},
        {"sim.png_dir", "", Kind::Path},
        {"noise.sigma_min", "0", Kind::Real},
        {"noise.sigma_max", "20", Kind::Real},
        {"model.arch", "unet-small", Kind::Choice, {"unet-small", "dncnn-small"}},
        {"model.domain", "rgb", Kind::Choice, {"rgb", "raw"}},
        {"model.encoder_seed", "7", Kind::Int},
        {"model.encoder_weights", "", Kind::Path},
        {"train.mode", "rcl", Kind::Choice, {"rcl", "n2n", "n2s", "consistency-only", "supervised"}},
        {"train.steps", "2000", Kind::Int},
        {"train.batch", "8", Kind::Int},
        {"train.crop", "32", Kind::Int},
        {"train.overlap_min", "0.25", Kind::Real},
        {"train.lr", "0.001", Kind::Real},
        {"train.alpha", "0.001", Kind::Real},
        {"train.tau", "0.5", Kind::Real},
        {"train.distance", "emd", Kind::Choice, {"emd", "bd", "mmd"}},
        {"train.distance_scale", "100", Kind::Real},
        {"train.mmd_max_samples", "256", Kind::Int},
        {"finetune.checkpoint", "", Kind::Path},
        {"finetune.labels", "4", Kind::Int},
        {"finetune.steps", "300", Kind::Int},
        {"finetune.batch", "4", Kind::Int},
        {"finetune.crop", "32", Kind::Int},
        {"finetune.lr", "0.001", Kind::Real},
        {"finetune.frozen", "true", Kind::Bool},
        {"eval.task", "denoise", Kind::Choice, {"denoise", "sr2x", "jdensr2x", "jdd"}},
        {"eval.checkpoint", "", Kind::Path},
        {"eval.test_dataset", "", Kind::Path},
        {"eval.trials", "5", Kind::Int},
        {"eval.protocol", "proxy", Kind::Choice, {"proxy", "direct"}},
        {"analyze.mode", "density", Kind::Choice, {"density", "sweep"}},
        {"analyze.triples", "500", Kind::Int},
        {"analyze.crop", "32", Kind::Int},
        {"analyze.checkpoint", "", Kind::Path},
        {"analyze.counts", "4,32", Kind::Counts},
    };
    return s;
}

const KeySpec* find_key(const std::string& key)
{
    for (const auto& k : schema())
        if (key == k.name) return &k;
    return nullptr;
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
bool parse_full(const std::string& s, T& v)
{
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc() && p == s.data() + s.size();
}

std::vector<std::size_t> parse_counts(const std::string& s)
{
    std::vector<std::size_t> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        std::size_t v = 0;
        if (!parse_full(trim(item), v)) throw ConfigError("bad label count '" + item + "'");
        out.push_back(v);
    }
    return out;
}

} // namespace

RunConfig::RunConfig()
{
    for (const auto& k : schema()) values_[k.name] = k.fallback;
}

void RunConfig::validate_value(const std::string& key, const std::string& value) const
{
    const KeySpec* k = find_key(key);
    if (!k) throw ConfigError("unknown config key '" + key + "'");
    auto bad = [&](const char* what) { throw ConfigError("config key '" + key + "': " + what + ", got '" + value + "'"); };
    switch (k->kind) {
    case Kind::Int: {
        std::uint64_t v;
        if (!parse_full(value, v)) bad("expected a non-negative integer");
        break;
    }
    case Kind::Real: {
        double v;
        if (!parse_full(value, v) || !std::isfinite(v)) bad("expected a finite number");
        break;
    }
    case Kind::Bool:
        if (value != "true" && value != "false") bad("expected true or false");
        break;
    case Kind::Choice:
        if (std::find(k->choices.begin(), k->choices.end(), value) == k->choices.end()) bad("not an allowed value");
        break;
    case Kind::Counts:
        try {
            parse_counts(value);
        } catch (const ConfigError&) {
            bad("expected a comma-separated list of counts");
        }
        break;
    case Kind::Path: break;
    }
}

void RunConfig::set(const std::string& key, const std::string& value)
{
    validate_value(key, value);
    values_[key] = value;
}

RunConfig RunConfig::parse(const std::string& text, const std::filesystem::path& base_dir)
{
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        const KeySpec* k = find_key(key);
        if (!k) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (k->kind == Kind::Path && !value.empty() && !base_dir.empty())
            value = std::filesystem::absolute(base_dir / value).lexically_normal().string();
        cfg.set(key, value);
    }
    cfg.train().validate();
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& file)
{
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read config file '" + file.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), std::filesystem::absolute(file).parent_path());
}

const std::string& RunConfig::get(const std::string& key) const
{
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

double RunConfig::number(const std::string& key) const
{
    double v = 0;
    parse_full(get(key), v);
    return v;
}

std::uint64_t RunConfig::integer(const std::string& key) const
{
    std::uint64_t v = 0;
    parse_full(get(key), v);
    return v;
}

bool RunConfig::flag(const std::string& key) const { return get(key) == "true"; }

std::filesystem::path RunConfig::path(const std::string& key) const { return get(key); }

std::vector<std::string> RunConfig::keys()
{
    std::vector<std::string> out;
    for (const auto& k : schema()) out.emplace_back(k.name);
    return out;
}

std::string RunConfig::resolved_text() const
{
    std::string out;
    for (const auto& k : schema()) out += std::string(k.name) + " = " + values_.at(k.name) + "\n";
    return out;
}

NoiseRange RunConfig::noise() const
{
    NoiseRange r = NoiseRange::from_8bit(number("noise.sigma_min"), number("noise.sigma_max"));
    try {
        r.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return r;
}

TrainConfig RunConfig::train() const
{
    TrainConfig t;
    t.seed = integer("seed");
    t.batch_size = integer("train.batch");
    t.crop = integer("train.crop");
    t.steps = integer("train.steps");
    t.tau = number("train.tau");
    t.alpha = number("train.alpha");
    t.distance.kind = parse_distance(get("train.distance"));
    t.distance.scale = number("train.distance_scale");
    t.distance.mmd_max_samples = integer("train.mmd_max_samples");
    t.lr = number("train.lr");
    t.overlap_min = number("train.overlap_min");
    t.noise = noise();
    t.mode = parse_mode(get("train.mode"));
    t.domain = parse_domain(get("model.domain"));
    t.arch = parse_arch(get("model.arch"));
    t.encoder_seed = integer("model.encoder_seed");
    return t;
}

FinetuneConfig RunConfig::finetune() const
{
    FinetuneConfig f;
    f.seed = integer("seed");
    f.steps = integer("finetune.steps");
    f.batch_size = integer("finetune.batch");
    f.crop = integer("finetune.crop");
    f.lr = number("finetune.lr");
    return f;
}

Task RunConfig::task() const { return parse_task(get("eval.task")); }

std::vector<std::size_t> RunConfig::counts() const { return parse_counts(get("analyze.counts")); }

} // namespace rcl
