#include "vot/model.hpp"

#include <sstream>

namespace vot {

std::string variant_name(SpatialVariant v) {
    switch (v) {
        case SpatialVariant::MaxViT: return "maxvit";
        case SpatialVariant::MaxViT2: return "maxvit2";
        case SpatialVariant::SwinT: return "swint";
    }
    throw ConfigError("unknown variant");
}

SpatialVariant variant_from_name(const std::string& name) {
    if (name == "maxvit") return SpatialVariant::MaxViT;
    if (name == "maxvit2") return SpatialVariant::MaxViT2;
    if (name == "swint") return SpatialVariant::SwinT;
    throw ConfigError("unknown model variant '" + name + "' (expected maxvit|maxvit2|swint)");
}

void VOTConfig::validate() const {
    if (stages.empty()) throw ConfigError("config: at least one stage required");
    if (input_frames < 1) throw ConfigError("config: input_frames must be positive");
    if (temporal_dim % temporal_heads != 0)
        throw ConfigError("config: temporal_dim " + std::to_string(temporal_dim) +
                          " not divisible by temporal_heads " + std::to_string(temporal_heads));
    const bool swin = variant == SpatialVariant::SwinT;
    if (swin && stem_channels != stages[0].channels)
        throw ConfigError("config: SwinT stem_channels must equal stage0 channels");
    for (size_t s = 0; s < stages.size(); ++s) {
        const int divisor = 1 << (static_cast<int>(s) + 2);
        if (input_res % divisor != 0)
            throw ConfigError("config: input_res " + std::to_string(input_res) +
                              " not divisible by stage stride " + std::to_string(divisor));
        const int res = stage_res(static_cast<int>(s));
        const int part = swin ? swin_window : window;
        if (res % part != 0)
            throw ConfigError("config: window " + std::to_string(part) +
                              " does not divide stage resolution " + std::to_string(res));
        if (!swin && variant == SpatialVariant::MaxViT && res % grid != 0)
            throw ConfigError("config: grid " + std::to_string(grid) +
                              " does not divide stage resolution " + std::to_string(res));
        if (stages[s].channels % spatial_head_dim != 0)
            throw ConfigError("config: stage channels " + std::to_string(stages[s].channels) +
                              " not divisible by head dim " + std::to_string(spatial_head_dim));
        if (stages[s].depth < 1) throw ConfigError("config: stage depth must be positive");
    }
}

nlohmann::json VOTConfig::to_json() const {
    nlohmann::json j;
    j["variant"] = variant_name(variant);
    j["input_frames"] = input_frames;
    j["input_res"] = input_res;
    j["stem_channels"] = stem_channels;
    nlohmann::json st = nlohmann::json::array();
    for (const auto& s : stages) st.push_back({{"depth", s.depth}, {"channels", s.channels}});
    j["stages"] = st;
    j["window"] = window;
    j["grid"] = grid;
    j["swin_window"] = swin_window;
    j["spatial_head_dim"] = spatial_head_dim;
    j["mbconv_expansion"] = mbconv_expansion;
    j["mlp_ratio"] = mlp_ratio;
    j["temporal_layers"] = temporal_layers;
    j["temporal_heads"] = temporal_heads;
    j["temporal_dim"] = temporal_dim;
    j["attn_bias"] = attn_bias;
    j["aux_prefix_supervision"] = aux_prefix_supervision;
    return j;
}

VOTConfig VOTConfig::from_json(const nlohmann::json& j) {
    VOTConfig c;
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.input_frames = j.at("input_frames").get<int>();
    c.input_res = j.at("input_res").get<int>();
    c.stem_channels = j.at("stem_channels").get<int>();
    c.stages.clear();
    for (const auto& s : j.at("stages"))
        c.stages.push_back({s.at("depth").get<int>(), s.at("channels").get<int>()});
    c.window = j.at("window").get<int>();
    c.grid = j.at("grid").get<int>();
    c.swin_window = j.at("swin_window").get<int>();
    c.spatial_head_dim = j.at("spatial_head_dim").get<int>();
    c.mbconv_expansion = j.at("mbconv_expansion").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.temporal_layers = j.at("temporal_layers").get<int>();
    c.temporal_heads = j.at("temporal_heads").get<int>();
    c.temporal_dim = j.at("temporal_dim").get<int>();
    c.attn_bias = j.at("attn_bias").get<bool>();
    c.aux_prefix_supervision = j.at("aux_prefix_supervision").get<bool>();
    return c;
}

std::uint64_t fnv1a64(const void* data, size_t len, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fnv1a64_hex(const std::string& s) {
    std::ostringstream os;
    os << std::hex << fnv1a64(s.data(), s.size());
    return os.str();
}

std::string VOTConfig::hash() const { return fnv1a64_hex(to_json().dump()); }

VOTConfig VOTConfig::desk(SpatialVariant v) {
    VOTConfig c;
    c.variant = v;
    if (v == SpatialVariant::SwinT) c.stem_channels = 32;
    c.validate();
    return c;
}

VOTConfig VOTConfig::full_scale(SpatialVariant v) {
    VOTConfig c;
    c.variant = v;
    c.input_frames = 25;
    c.input_res = 224;
    c.spatial_head_dim = 32;
    if (v == SpatialVariant::SwinT) {
        c.stem_channels = 96;
        c.stages = {{2, 96}, {2, 192}, {6, 384}, {2, 768}};
        c.swin_window = 7;
        c.temporal_layers = 3;
        c.temporal_heads = 12;
        c.temporal_dim = 768;
    } else {
        c.stem_channels = 64;
        c.stages = {{2, 64}, {2, 128}, {5, 256}, {2, 512}};
        c.window = 7;
        c.grid = 7;
        c.temporal_layers = 8;
        c.temporal_heads = 8;
        c.temporal_dim = 512;
    }
    c.validate();
    return c;
}

VotModel::VotModel(VOTConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

namespace {

using Init = ParamSpec::Init;

struct SpecList {
    std::vector<ParamSpec>* out;
    void add(const std::string& name, Shape shape, Init init) {
        out->push_back({name, std::move(shape), init});
    }
    void norm(const std::string& prefix, int c) {
        add(prefix + ".gain", {c}, Init::Ones);
        add(prefix + ".bias", {c}, Init::Zeros);
    }
    void linear(const std::string& prefix, int din, int dout) {
        add(prefix + ".weight", {din, dout}, Init::GlorotLinear);
        add(prefix + ".bias", {dout}, Init::Zeros);
    }
    void conv(const std::string& prefix, int kh, int kw, int cin, int cout) {
        add(prefix + ".weight", {kh, kw, cin, cout}, Init::GlorotConv);
        add(prefix + ".bias", {cout}, Init::Zeros);
    }
};

}  // namespace

void VotModel::enumerate(std::vector<ParamSpec>& out) const {
    const VOTConfig& c = cfg_;
    SpecList sl{&out};
    const bool swin = c.variant == SpatialVariant::SwinT;

    sl.conv("stem.conv", swin ? 4 : 3, swin ? 4 : 3, 3, c.stem_channels);

    auto attention = [&](const std::string& prefix, int ch, int tokens) {
        sl.norm(prefix + ".norm", ch);
        sl.linear(prefix + ".qkv", ch, 3 * ch);
        sl.linear(prefix + ".proj", ch, ch);
        if (c.attn_bias) sl.add(prefix + ".posbias", {tokens, tokens}, Init::Zeros);
        sl.norm(prefix + ".mlpnorm", ch);
        sl.linear(prefix + ".mlp1", ch, c.mlp_ratio * ch);
        sl.linear(prefix + ".mlp2", c.mlp_ratio * ch, ch);
    };

    int channels = c.stem_channels;
    for (size_t s = 0; s < c.stages.size(); ++s) {
        const StageSpec& st = c.stages[s];
        const std::string sp = "spatial.stage" + std::to_string(s);
        if (swin) {
            if (s > 0) {
                sl.conv(sp + ".down", 2, 2, channels, st.channels);
                channels = st.channels;
            }
            for (int i = 0; i < st.depth; ++i)
                attention(sp + ".block" + std::to_string(i) + ".attn0", channels,
                          c.swin_window * c.swin_window);
        } else {
            for (int i = 0; i < st.depth; ++i) {
                const std::string bp = sp + ".block" + std::to_string(i);
                const int cin = channels;
                const int expanded = c.mbconv_expansion * cin;
                sl.conv(bp + ".conv.pw1", 1, 1, cin, expanded);
                sl.add(bp + ".conv.dw.weight", {3, 3, expanded}, Init::GlorotDepthwise);
                sl.add(bp + ".conv.dw.bias", {expanded}, Init::Zeros);
                sl.conv(bp + ".conv.pw2", 1, 1, expanded, st.channels);
                if (cin != st.channels) sl.conv(bp + ".conv.shortcut", 1, 1, cin, st.channels);
                channels = st.channels;
                attention(bp + ".attn0", channels, c.window * c.window);
                if (c.variant == SpatialVariant::MaxViT)
                    attention(bp + ".attn1", channels, c.grid * c.grid);
                else
                    attention(bp + ".attn1", channels, c.window * c.window);
            }
        }
    }

    if (c.last_channels() != c.temporal_dim)
        sl.linear("temporal.input_proj", c.last_channels(), c.temporal_dim);
    sl.add("temporal.pos", {c.input_frames, c.temporal_dim}, Init::Normal02);
    for (int l = 0; l < c.temporal_layers; ++l) {
        const std::string lp = "temporal.layer" + std::to_string(l);
        sl.norm(lp + ".attn.norm", c.temporal_dim);
        sl.linear(lp + ".attn.qkv", c.temporal_dim, 3 * c.temporal_dim);
        sl.linear(lp + ".attn.proj", c.temporal_dim, c.temporal_dim);
        sl.norm(lp + ".mlp.norm", c.temporal_dim);
        sl.linear(lp + ".mlp.fc1", c.temporal_dim, c.mlp_ratio * c.temporal_dim);
        sl.linear(lp + ".mlp.fc2", c.mlp_ratio * c.temporal_dim, c.temporal_dim);
    }
    sl.norm("temporal.norm", c.temporal_dim);
    sl.linear("head", c.temporal_dim, kGridRows * kGridCols);
}

std::vector<ParamSpec> VotModel::param_specs() const {
    std::vector<ParamSpec> out;
    enumerate(out);
    return out;
}

std::int64_t VotModel::param_count() const {
    std::int64_t n = 0;
    for (const ParamSpec& s : param_specs()) n += shape_numel(s.shape);
    return n;
}

}  // namespace vot
