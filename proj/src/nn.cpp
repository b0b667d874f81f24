#include "rcl/nn.hpp"

#include <cmath>

namespace rcl {

void ModelParams::add(std::string name, Tensor tensor, bool trainable)
{
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), std::move(tensor), trainable});
}

ParamEntry& ModelParams::entry(const std::string& name)
{
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return entries_[it->second];
}

const ParamEntry& ModelParams::entry(const std::string& name) const
{
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return entries_[it->second];
}

const Tensor& ModelParams::get(const std::string& name) const { return entry(name).tensor; }
Tensor& ModelParams::get(const std::string& name) { return entry(name).tensor; }

void ModelParams::set_all_trainable(bool trainable)
{
    for (auto& e : entries_) e.trainable = trainable;
}

void ModelParams::replace(const std::string& name, Tensor tensor) { entry(name).tensor = std::move(tensor); }

VarMap ModelParams::bind(Graph& g, const std::string& prefix) const
{
    VarMap out;
    for (const auto& e : entries_) out.emplace(e.name, g.leaf(prefix + e.name, e.tensor, e.trainable));
    return out;
}

bool bit_equal(const ModelParams& a, const ModelParams& b)
{
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& x = a.entries()[i];
        const auto& y = b.entries()[i];
        if (x.name != y.name || !bit_equal(x.tensor, y.tensor)) return false;
    }
    return true;
}

const char* arch_name(Arch a) { return a == Arch::UnetSmall ? "unet-small" : "dncnn-small"; }

Arch parse_arch(const std::string& s)
{
    if (s == "unet-small") return Arch::UnetSmall;
    if (s == "dncnn-small") return Arch::DncnnSmall;
    throw std::invalid_argument("unknown architecture '" + s + "'");
}

const char* head_name(HeadKind h) { return h == HeadKind::Identity ? "identity-resolution" : "upsample-2x"; }

Tensor he_uniform(const Shape& shape, Rng& rng)
{
    const std::size_t fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape.back();
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

namespace {

constexpr std::size_t kDncnnBlocks = 6;
constexpr std::size_t kDncnnWidth = 16;

struct ConvDef {
    std::string name;
    std::size_t in, out, k;
};

std::vector<ConvDef> unet_layout(const NetSpec& s)
{
    return {
        {"enc1.conv1", s.in_channels, 16, 3}, {"enc1.conv2", 16, 16, 3},
        {"enc2.conv1", 16, 32, 3},            {"enc2.conv2", 32, 32, 3},
        {"mid.conv1", 32, 64, 3},             {"mid.conv2", 64, 64, 3},
        {"dec2.conv1", 64 + 32, 32, 3},       {"dec2.conv2", 32, 32, 3},
        {"dec1.conv1", 32 + 16, 16, 3},       {"dec1.conv2", 16, 16, 3},
        {"head", 16, s.out_channels, s.head == HeadKind::Identity ? std::size_t{1} : std::size_t{3}},
    };
}

std::vector<ConvDef> dncnn_layout(const NetSpec& s)
{
    std::vector<ConvDef> defs;
    for (std::size_t i = 0; i < kDncnnBlocks; ++i)
        defs.push_back({"block" + std::to_string(i), i == 0 ? s.in_channels : kDncnnWidth, kDncnnWidth, 3});
    defs.push_back({"head", kDncnnWidth, s.out_channels, 3});
    return defs;
}

void add_conv(ModelParams& p, const ConvDef& d, Rng& rng, Init init, bool trainable = true)
{
    const Shape ws{d.out, d.in, d.k, d.k};
    p.add(d.name + ".w", init == Init::Zero ? Tensor(ws) : he_uniform(ws, rng), trainable);
    p.add(d.name + ".b", Tensor(Shape{d.out}), trainable);
}

Var conv(Var x, const VarMap& b, const std::string& name)
{
    return conv2d(x, b.at(name + ".w"), b.at(name + ".b"));
}

Var conv_relu(Var x, const VarMap& b, const std::string& name) { return relu(conv(x, b, name)); }

} // namespace

RestorerNet::RestorerNet(NetSpec spec, std::uint64_t seed, Init init) : spec_(spec)
{
    if (spec_.in_channels == 0 || spec_.out_channels == 0)
        throw std::invalid_argument("channel counts must be positive");
    if (spec_.arch == Arch::DncnnSmall) {
        if (spec_.head != HeadKind::Identity)
            throw std::invalid_argument("dncnn-small supports only the identity-resolution head");
        if (spec_.out_channels != spec_.in_channels)
            throw std::invalid_argument("dncnn-small predicts a residual: out channels must equal in channels");
    }
    Rng rng(seed);
    for (const auto& d : spec_.arch == Arch::UnetSmall ? unet_layout(spec_) : dncnn_layout(spec_))
        add_conv(params_, d, rng, init);
}

RestorerNet RestorerNet::from_params(ModelParams params)
{
    RestorerNet net;
    if (!params.contains("head.w"))
        throw std::invalid_argument("parameters lack a head.w entry");
    const Tensor& head = params.get("head.w");
    if (params.contains("enc1.conv1.w")) {
        net.spec_.arch = Arch::UnetSmall;
        net.spec_.in_channels = params.get("enc1.conv1.w").dim(1);
        net.spec_.head = head.dim(2) == 1 ? HeadKind::Identity : HeadKind::Upsample2x;
    } else if (params.contains("block0.w")) {
        net.spec_.arch = Arch::DncnnSmall;
        net.spec_.in_channels = params.get("block0.w").dim(1);
        net.spec_.head = HeadKind::Identity;
    } else {
        throw std::invalid_argument("parameters match no known architecture");
    }
    net.spec_.out_channels = head.dim(0);
    const auto layout = net.spec_.arch == Arch::UnetSmall ? unet_layout(net.spec_) : dncnn_layout(net.spec_);
    if (params.size() != 2 * layout.size())
        throw std::invalid_argument("parameter count does not match " + std::string(arch_name(net.spec_.arch)));
    for (const auto& d : layout) {
        if (params.get(d.name + ".w").shape() != Shape{d.out, d.in, d.k, d.k} ||
            params.get(d.name + ".b").shape() != Shape{d.out})
            throw std::invalid_argument("parameter '" + d.name + "' has an unexpected shape");
    }
    net.params_ = std::move(params);
    return net;
}

void RestorerNet::check_input(const Shape& s) const
{
    if (s.size() != 4 || s[1] != spec_.in_channels)
        throw ShapeError(std::string(arch_name(spec_.arch)) + ": expected [N," +
                         std::to_string(spec_.in_channels) + ",H,W] input, got " + to_string(s));
    if (spec_.arch == Arch::UnetSmall && (s[2] % 4 || s[3] % 4))
        throw ShapeError("unet-small: spatial size must be divisible by 4, got " + to_string(s));
}

Var RestorerNet::forward(Graph&, Var x, const VarMap& b) const
{
    check_input(x.shape());
    forward_passes_ += x.shape()[0];
    if (spec_.arch == Arch::DncnnSmall) {
        Var h = x;
        for (std::size_t i = 0; i < kDncnnBlocks; ++i) h = conv_relu(h, b, "block" + std::to_string(i));
        return conv(h, b, "head");
    }
    Var e1 = conv_relu(conv_relu(x, b, "enc1.conv1"), b, "enc1.conv2");
    Var e2 = conv_relu(conv_relu(avgpool2x(e1), b, "enc2.conv1"), b, "enc2.conv2");
    Var m = conv_relu(conv_relu(avgpool2x(e2), b, "mid.conv1"), b, "mid.conv2");
    Var d2 = concat({upsample2x(m), e2}, 1);
    d2 = conv_relu(conv_relu(d2, b, "dec2.conv1"), b, "dec2.conv2");
    Var d1 = concat({upsample2x(d2), e1}, 1);
    d1 = conv_relu(conv_relu(d1, b, "dec1.conv1"), b, "dec1.conv2");
    if (spec_.head == HeadKind::Upsample2x) d1 = upsample2x(d1);
    return conv(d1, b, "head");
}

Var RestorerNet::reconstruct(Graph& g, Var x, const VarMap& b) const
{
    Var out = forward(g, x, b);
    return spec_.arch == Arch::DncnnSmall ? sub(x, out) : out;
}

Tensor RestorerNet::forward(const Tensor& x) const
{
    Graph g;
    const VarMap b = params_.bind(g);
    return forward(g, g.constant(x), b).value();
}

Tensor RestorerNet::reconstruct(const Tensor& x) const
{
    Graph g;
    const VarMap b = params_.bind(g);
    return reconstruct(g, g.constant(x), b).value();
}

void RestorerNet::replace_head(HeadKind head, std::size_t out_channels, std::uint64_t seed)
{
    if (spec_.arch == Arch::DncnnSmall && (head != HeadKind::Identity || out_channels != spec_.in_channels))
        throw std::invalid_argument("dncnn-small head must be identity-resolution with " +
                                    std::to_string(spec_.in_channels) + " channels");
    spec_.head = head;
    spec_.out_channels = out_channels;
    const auto layout = spec_.arch == Arch::UnetSmall ? unet_layout(spec_) : dncnn_layout(spec_);
    const ConvDef& d = layout.back();
    Rng rng(seed);
    params_.replace("head.w", he_uniform(Shape{d.out, d.in, d.k, d.k}, rng));
    params_.replace("head.b", Tensor(Shape{d.out}));
}

void RestorerNet::freeze_all_but_head()
{
    params_.set_all_trainable(false);
    for (const auto& n : head_names()) params_.set_trainable(n, true);
}

FeatureEncoder::FeatureEncoder(std::uint64_t seed) : seed_(seed)
{
    Rng rng(seed);
    add_conv(params_, {"enc.level1", 3, 8, 3}, rng, Init::HeUniform, false);
    add_conv(params_, {"enc.level2", 8, 16, 3}, rng, Init::HeUniform, false);
    add_conv(params_, {"enc.level3", 16, 32, 3}, rng, Init::HeUniform, false);
}

FeatureEncoder::FeatureEncoder(ModelParams params) : params_(std::move(params))
{
    const FeatureEncoder reference(0);
    if (params_.size() != reference.params_.size())
        throw std::invalid_argument("encoder weights: wrong entry count");
    for (const auto& e : reference.params_.entries()) {
        if (!params_.contains(e.name) || params_.get(e.name).shape() != e.tensor.shape())
            throw std::invalid_argument("encoder weights: missing or misshaped '" + e.name + "'");
        params_.set_trainable(e.name, false);
    }
}

Var FeatureEncoder::features(Graph& g, Var x) const
{
    if (x.shape().size() != 4 || x.shape()[1] != 3 || x.shape()[2] % 8 || x.shape()[3] % 8)
        throw ShapeError("feature encoder expects [N,3,H,W] with H, W divisible by 8, got " + to_string(x.shape()));
    auto w = [&](const std::string& n) { return g.constant(params_.get(n)); };
    Var l1 = relu(conv2d(x, w("enc.level1.w"), w("enc.level1.b")));
    Var l2 = relu(conv2d(avgpool2x(l1), w("enc.level2.w"), w("enc.level2.b")));
    Var l3 = relu(conv2d(avgpool2x(l2), w("enc.level3.w"), w("enc.level3.b")));
    const std::size_t N = x.shape()[0];
    auto pooled = [&](Var v) {
        Var p = avgpool2x(v);
        return reshape(p, Shape{N, p.value().size() / N});
    };
    return concat({pooled(l1), pooled(l2), pooled(l3)}, 1);
}

Tensor FeatureEncoder::encode(const Tensor& x) const
{
    Graph g;
    return features(g, g.constant(x)).value();
}

void Adam::step(ModelParams& params, const std::map<std::string, Tensor>& grads)
{
    for (const auto& e : params.entries()) {
        if (!e.trainable) continue;
        auto it = grads.find(e.name);
        if (it == grads.end()) throw MissingGradientError("no gradient for trainable parameter '" + e.name + "'");
        if (it->second.shape() != e.tensor.shape())
            throw ShapeError("gradient for '" + e.name + "' has shape " + to_string(it->second.shape()));
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& e : params.entries()) {
        if (!e.trainable) continue;
        const Tensor& g = grads.at(e.name);
        auto [mit, m_new] = m_.try_emplace(e.name, e.tensor.shape());
        auto [vit, v_new] = v_.try_emplace(e.name, e.tensor.shape());
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        if (m.shape() != e.tensor.shape()) {
            // The entry was replaced (fresh head); restart its moments.
            m = Tensor(e.tensor.shape());
            v = Tensor(e.tensor.shape());
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            e.tensor[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

} // namespace rcl
