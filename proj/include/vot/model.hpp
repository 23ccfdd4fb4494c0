#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vot/config.hpp"
#include "vot/ops.hpp"
#include "vot/params.hpp"
#include "vot/rng.hpp"

namespace vot {

struct ParamSpec {
    enum class Init { GlorotConv, GlorotLinear, GlorotDepthwise, Zeros, Ones, Normal02 };
    std::string name;
    Shape shape;
    Init init = Init::Zeros;
};

// Creates tape leaves for store parameters on first use and remembers the
// name -> Var mapping so the trainer can collect gradients afterwards.
template <typename T>
class Binder {
public:
    Binder(Tape<T>& tape, ParameterStore<T>& store, bool trainable = true)
        : tape_(&tape), store_(&store), trainable_(trainable) {}

    Var<T> operator()(const std::string& name) {
        auto it = vars_.find(name);
        if (it != vars_.end()) return it->second;
        Var<T> v = tape_->leaf(store_->at(name).value, trainable_, "param");
        vars_.emplace(name, v);
        return v;
    }

    // Routes one parameter name to an existing var (gradient probes).
    void override_param(const std::string& name, Var<T> v) { vars_.emplace(name, v); }

    const std::map<std::string, Var<T>>& bound() const { return vars_; }
    Tape<T>& tape() { return *tape_; }

private:
    Tape<T>* tape_;
    ParameterStore<T>* store_;
    bool trainable_;
    std::map<std::string, Var<T>> vars_;
};

// Downsamples a raw clip to T_in frames (uniform stride from frame 0),
// bilinear-resizes to res x res and scales to [0, 1].
template <typename T>
Tensor<T> preprocess_clip(const Tensor<std::uint8_t>& clip, int t_in, int res);

class VotModel {
public:
    explicit VotModel(VOTConfig cfg);

    const VOTConfig& config() const { return cfg_; }

    std::vector<ParamSpec> param_specs() const;
    std::int64_t param_count() const;

    template <typename T>
    void init_params(ParameterStore<T>& store, std::uint64_t seed) const;

    // frames: [T_in, res, res, 3] -> pooled per-frame embeddings [T_in, D].
    template <typename T>
    Var<T> spatial_embeddings(Binder<T>& bind, Var<T> frames) const;

    // [T_in, D] -> causal temporal states [T_in, D] (final layernorm applied).
    template <typename T>
    Var<T> temporal_states(Binder<T>& bind, Var<T> emb) const;

    // Occupancy grid from one temporal state [D] -> [12, 16].
    template <typename T>
    Var<T> head(Binder<T>& bind, Var<T> state) const;

    // Full forward: preprocessed clip -> grid at the final temporal position.
    template <typename T>
    Var<T> forward(Binder<T>& bind, Var<T> frames) const;

    // Auxiliary mode: one grid per temporal position, [T_in, 12, 16].
    template <typename T>
    Var<T> forward_all_positions(Binder<T>& bind, Var<T> frames) const;

private:
    template <typename T>
    Var<T> mbconv(Binder<T>& bind, Var<T> x, const std::string& prefix, int stride,
                  int cin, int cout) const;
    template <typename T>
    Var<T> attention_unit(Binder<T>& bind, Var<T> x, const std::string& prefix, char kind,
                          int part, int shift) const;

    void enumerate(std::vector<ParamSpec>& out) const;

    VOTConfig cfg_;
};

// ---------------------------------------------------------------------------
// template implementations

template <typename T>
Tensor<T> preprocess_clip(const Tensor<std::uint8_t>& clip, int t_in, int res) {
    if (clip.dim() != 4 || clip.size(3) != 3)
        throw FormatError("preprocess_clip: expects [T,H,W,3] frames");
    const int frames = clip.size(0), H = clip.size(1), W = clip.size(2);
    if (frames < t_in)
        throw FormatError("preprocess_clip: clip has " + std::to_string(frames) +
                          " frames, need at least " + std::to_string(t_in));
    const int stride = std::max(1, frames / t_in);
    Tensor<T> out(Shape{t_in, res, res, 3});
    const T inv255 = T(1) / T(255);
    const double sy = static_cast<double>(H) / res;
    const double sx = static_cast<double>(W) / res;
    for (int f = 0; f < t_in; ++f) {
        const std::uint8_t* src = clip.data() + static_cast<std::int64_t>(f * stride) * H * W * 3;
        T* dst = out.data() + static_cast<std::int64_t>(f) * res * res * 3;
        for (int r = 0; r < res; ++r) {
            double fy = (r + 0.5) * sy - 0.5;
            if (fy < 0) fy = 0;
            if (fy > H - 1) fy = H - 1;
            const int y0 = static_cast<int>(fy);
            const int y1 = std::min(y0 + 1, H - 1);
            const double wy = fy - y0;
            for (int c = 0; c < res; ++c) {
                double fx = (c + 0.5) * sx - 0.5;
                if (fx < 0) fx = 0;
                if (fx > W - 1) fx = W - 1;
                const int x0 = static_cast<int>(fx);
                const int x1 = std::min(x0 + 1, W - 1);
                const double wx = fx - x0;
                T* px = dst + (static_cast<std::int64_t>(r) * res + c) * 3;
                for (int ch = 0; ch < 3; ++ch) {
                    const double v00 = src[(static_cast<std::int64_t>(y0) * W + x0) * 3 + ch];
                    const double v01 = src[(static_cast<std::int64_t>(y0) * W + x1) * 3 + ch];
                    const double v10 = src[(static_cast<std::int64_t>(y1) * W + x0) * 3 + ch];
                    const double v11 = src[(static_cast<std::int64_t>(y1) * W + x1) * 3 + ch];
                    const double top = v00 + (v01 - v00) * wx;
                    const double bot = v10 + (v11 - v10) * wx;
                    px[ch] = static_cast<T>(top + (bot - top) * wy) * inv255;
                }
            }
        }
    }
    return out;
}

template <typename T>
void VotModel::init_params(ParameterStore<T>& store, std::uint64_t seed) const {
    Rng rng(splitmix64(seed ^ 0x9042'55f1'77ab'31cdULL));
    for (const ParamSpec& spec : param_specs()) {
        Tensor<T> t(spec.shape);
        switch (spec.init) {
            case ParamSpec::Init::Zeros:
                break;
            case ParamSpec::Init::Ones:
                t = Tensor<T>::ones(spec.shape);
                break;
            case ParamSpec::Init::Normal02:
                for (std::int64_t i = 0; i < t.numel(); ++i)
                    t[i] = static_cast<T>(rng.normal(0.0, 0.02));
                break;
            case ParamSpec::Init::GlorotConv: {
                const int kh = spec.shape[0], kw = spec.shape[1];
                const int cin = spec.shape[2], cout = spec.shape[3];
                const double lim = std::sqrt(6.0 / (kh * kw * cin + kh * kw * cout));
                for (std::int64_t i = 0; i < t.numel(); ++i)
                    t[i] = static_cast<T>(rng.uniform(-lim, lim));
                break;
            }
            case ParamSpec::Init::GlorotDepthwise: {
                const double lim = std::sqrt(6.0 / 18.0);
                for (std::int64_t i = 0; i < t.numel(); ++i)
                    t[i] = static_cast<T>(rng.uniform(-lim, lim));
                break;
            }
            case ParamSpec::Init::GlorotLinear: {
                const double lim = std::sqrt(6.0 / (spec.shape[0] + spec.shape[1]));
                for (std::int64_t i = 0; i < t.numel(); ++i)
                    t[i] = static_cast<T>(rng.uniform(-lim, lim));
                break;
            }
        }
        store.add(spec.name, std::move(t));
    }
}

template <typename T>
Var<T> VotModel::mbconv(Binder<T>& bind, Var<T> x, const std::string& prefix, int stride,
                        int cin, int cout) const {
    Var<T> h = conv2d(x, bind(prefix + ".pw1.weight"), bind(prefix + ".pw1.bias"), 1, 0);
    h = gelu(h);
    h = depthwise3x3(h, bind(prefix + ".dw.weight"), bind(prefix + ".dw.bias"), stride);
    h = gelu(h);
    h = conv2d(h, bind(prefix + ".pw2.weight"), bind(prefix + ".pw2.bias"), 1, 0);
    Var<T> shortcut = x;
    if (stride == 2) shortcut = avgpool2x2(shortcut);
    if (cin != cout)
        shortcut = conv2d(shortcut, bind(prefix + ".shortcut.weight"),
                          bind(prefix + ".shortcut.bias"), 1, 0);
    return add(h, shortcut);
}

// kind: 'w' window attention, 'g' grid attention. `shift` rolls the feature
// map before windowing (SwinT shifted layers).
template <typename T>
Var<T> VotModel::attention_unit(Binder<T>& bind, Var<T> x, const std::string& prefix, char kind,
                                int part, int shift) const {
    const Shape& s = x.val().shape();
    const int B = s[0], H = s[1], W = s[2], C = s[3];
    const int heads = C / cfg_.spatial_head_dim;
    if (shift != 0) x = cyclic_shift(x, -shift, -shift);
    Var<T> tokens = (kind == 'g') ? grid_partition(x, part) : window_partition(x, part);

    AttentionParams<T> ap;
    ap.wqkv = bind(prefix + ".qkv.weight");
    ap.bqkv = bind(prefix + ".qkv.bias");
    ap.wo = bind(prefix + ".proj.weight");
    ap.bo = bind(prefix + ".proj.bias");
    if (cfg_.attn_bias) ap.attn_bias = bind(prefix + ".posbias");

    Var<T> n1 = layernorm(tokens, bind(prefix + ".norm.gain"), bind(prefix + ".norm.bias"));
    Var<T> attn = multihead_attention(n1, n1, n1, heads, ap);
    tokens = add(tokens, attn);

    Var<T> n2 = layernorm(tokens, bind(prefix + ".mlpnorm.gain"), bind(prefix + ".mlpnorm.bias"));
    Var<T> m = linear(n2, bind(prefix + ".mlp1.weight"), bind(prefix + ".mlp1.bias"));
    m = gelu(m);
    m = linear(m, bind(prefix + ".mlp2.weight"), bind(prefix + ".mlp2.bias"));
    tokens = add(tokens, m);

    Var<T> merged = (kind == 'g') ? grid_merge(tokens, part, B, H, W)
                                  : window_merge(tokens, part, B, H, W);
    if (shift != 0) merged = cyclic_shift(merged, shift, shift);
    return merged;
}

template <typename T>
Var<T> VotModel::spatial_embeddings(Binder<T>& bind, Var<T> frames) const {
    const VOTConfig& c = cfg_;
    const bool swin = c.variant == SpatialVariant::SwinT;
    const int stem_stride = swin ? 4 : 2;
    const int stem_k = swin ? 4 : 3;
    const int stem_pad = swin ? 0 : 1;
    Var<T> x = conv2d(frames, bind("stem.conv.weight"), bind("stem.conv.bias"), stem_stride,
                      stem_pad);
    x = gelu(x);
    int channels = c.stem_channels;
    for (size_t s = 0; s < c.stages.size(); ++s) {
        const StageSpec& st = c.stages[s];
        const std::string sp = "spatial.stage" + std::to_string(s);
        if (swin) {
            if (s > 0) {
                x = conv2d(x, bind(sp + ".down.weight"), bind(sp + ".down.bias"), 2, 0);
                channels = st.channels;
            }
            for (int i = 0; i < st.depth; ++i) {
                const int shift = (i % 2 == 1) ? c.swin_window / 2 : 0;
                x = attention_unit(bind, x, sp + ".block" + std::to_string(i) + ".attn0", 'w',
                                   c.swin_window, shift);
            }
        } else {
            for (int i = 0; i < st.depth; ++i) {
                const std::string bp = sp + ".block" + std::to_string(i);
                const int stride = (i == 0) ? 2 : 1;
                const int cin = channels;
                x = mbconv(bind, x, bp + ".conv", stride, cin, st.channels);
                channels = st.channels;
                x = attention_unit(bind, x, bp + ".attn0", 'w', c.window, 0);
                if (c.variant == SpatialVariant::MaxViT)
                    x = attention_unit(bind, x, bp + ".attn1", 'g', c.grid, 0);
                else
                    x = attention_unit(bind, x, bp + ".attn1", 'w', c.window, 0);
            }
        }
    }
    Var<T> pooled = global_avgpool(x);  // [T, C_last]
    if (c.last_channels() != c.temporal_dim)
        pooled = linear(pooled, bind("temporal.input_proj.weight"),
                        bind("temporal.input_proj.bias"));
    return pooled;
}

template <typename T>
Var<T> VotModel::temporal_states(Binder<T>& bind, Var<T> emb) const {
    const VOTConfig& c = cfg_;
    const int t_in = emb.val().size(0);
    const int D = c.temporal_dim;
    Var<T> pos = bind("temporal.pos");
    // prefix evaluation uses the first t_in position embeddings
    if (t_in != c.input_frames) pos = slice_rows(pos, 0, t_in);
    Var<T> x = add(emb, pos);
    auto mask = causal_mask<T>(t_in);
    Var<T> seq = reshape(x, {1, t_in, D});
    for (int l = 0; l < c.temporal_layers; ++l) {
        const std::string lp = "temporal.layer" + std::to_string(l);
        AttentionParams<T> ap;
        ap.wqkv = bind(lp + ".attn.qkv.weight");
        ap.bqkv = bind(lp + ".attn.qkv.bias");
        ap.wo = bind(lp + ".attn.proj.weight");
        ap.bo = bind(lp + ".attn.proj.bias");
        Var<T> n1 = layernorm(seq, bind(lp + ".attn.norm.gain"), bind(lp + ".attn.norm.bias"));
        seq = add(seq, multihead_attention(n1, n1, n1, c.temporal_heads, ap, mask));
        Var<T> n2 = layernorm(seq, bind(lp + ".mlp.norm.gain"), bind(lp + ".mlp.norm.bias"));
        Var<T> m = linear(n2, bind(lp + ".mlp.fc1.weight"), bind(lp + ".mlp.fc1.bias"));
        m = gelu(m);
        m = linear(m, bind(lp + ".mlp.fc2.weight"), bind(lp + ".mlp.fc2.bias"));
        seq = add(seq, m);
    }
    Var<T> states = reshape(seq, {t_in, D});
    return layernorm(states, bind("temporal.norm.gain"), bind("temporal.norm.bias"));
}

template <typename T>
Var<T> VotModel::head(Binder<T>& bind, Var<T> state) const {
    Var<T> flat = reshape(state, {1, cfg_.temporal_dim});
    Var<T> out = linear(flat, bind("head.weight"), bind("head.bias"));
    return reshape(out, {kGridRows, kGridCols});
}

template <typename T>
Var<T> VotModel::forward(Binder<T>& bind, Var<T> frames) const {
    Var<T> emb = spatial_embeddings(bind, frames);
    Var<T> states = temporal_states(bind, emb);
    return head(bind, take_row(states, states.val().size(0) - 1));
}

template <typename T>
Var<T> VotModel::forward_all_positions(Binder<T>& bind, Var<T> frames) const {
    Var<T> emb = spatial_embeddings(bind, frames);
    Var<T> states = temporal_states(bind, emb);
    const int t_in = states.val().size(0);
    Var<T> grids = linear(states, bind("head.weight"), bind("head.bias"));
    return reshape(grids, {t_in, kGridRows, kGridCols});
}

}  // namespace vot
