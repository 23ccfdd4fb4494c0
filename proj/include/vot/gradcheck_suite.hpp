#pragma once

#include <vector>

#include "vot/gradcheck.hpp"
#include "vot/model.hpp"

// 64-bit finite-difference coverage of every differentiable op plus the full
// desk-scale forward+MSE pass. Shared by the gradcheck CLI command and the
// acceptance suite.

namespace vot {

struct GradcheckEntry {
    std::string name;
    double err = 0;
    double tol = 1e-5;
    bool ok() const { return err < tol; }
};

inline std::vector<GradcheckEntry> op_gradcheck_suite(std::uint64_t seed) {
    Rng rng(splitmix64(seed ^ 0x6772'6164ULL));
    auto rand_t = [&](Shape s, double scale = 1.0) {
        Tensor64 t(std::move(s));
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
        return t;
    };
    std::vector<GradcheckEntry> out;
    auto run = [&](const std::string& name,
                   const std::function<Var<double>(Tape<double>&, Var<double>)>& f,
                   const Tensor64& x) { out.push_back({name, finite_diff_check<double>(f, x)}); };
    auto quad = [](Var<double> v) { return mean_all(mul(v, v)); };

    Tensor64 x44 = rand_t({2, 4, 4, 3});
    Tensor64 a = rand_t({3, 4}), b = rand_t({4, 2});
    run("matmul/a", [&](Tape<double>& t, Var<double> v) { return quad(matmul(v, t.leaf(b, false))); }, a);
    run("matmul/b", [&](Tape<double>& t, Var<double> v) { return quad(matmul(t.leaf(a, false), v)); }, b);
    Tensor64 ba = rand_t({2, 2, 3, 4}), bb = rand_t({2, 2, 4, 2});
    run("matmul/batched",
        [&](Tape<double>& t, Var<double> v) { return quad(matmul(t.leaf(ba, false), v)); }, bb);
    Tensor64 w = rand_t({3, 5}), bias = rand_t({5});
    Tensor64 xl = rand_t({4, 3});
    run("linear/x",
        [&](Tape<double>& t, Var<double> v) {
            return quad(linear(v, t.leaf(w, false), t.leaf(bias, false)));
        },
        xl);
    run("linear/w",
        [&](Tape<double>& t, Var<double> v) {
            return quad(linear(t.leaf(xl, false), v, t.leaf(bias, false)));
        },
        w);
    run("linear/bias",
        [&](Tape<double>& t, Var<double> v) {
            return quad(linear(t.leaf(xl, false), t.leaf(w, false), v));
        },
        bias);
    run("softmax", [&](Tape<double>& t, Var<double> v) { return quad(mul(softmax(v, -1), v)); },
        rand_t({3, 5}));
    run("softmax/axis", [&](Tape<double>& t, Var<double> v) { return quad(mul(softmax(v, 1), v)); },
        rand_t({2, 3, 4}));
    Tensor64 gain = rand_t({3}), lbias = rand_t({3});
    run("layernorm/x",
        [&](Tape<double>& t, Var<double> v) {
            return quad(mul(layernorm(v, t.leaf(gain, false), t.leaf(lbias, false)), v));
        },
        rand_t({4, 3}));
    run("layernorm/gain",
        [&](Tape<double>& t, Var<double> v) {
            return quad(layernorm(t.leaf(rand_t({4, 3}), false), v, t.leaf(lbias, false)));
        },
        gain);
    run("gelu", [&](Tape<double>& t, Var<double> v) { return sum_all(gelu(v)); }, rand_t({9}, 1.5));
    Tensor64 cw = rand_t({3, 3, 3, 4}), cb = rand_t({4});
    run("conv2d/x",
        [&](Tape<double>& t, Var<double> v) {
            return quad(conv2d(v, t.leaf(cw, false), t.leaf(cb, false), 2, 1));
        },
        x44);
    run("conv2d/w",
        [&](Tape<double>& t, Var<double> v) {
            return quad(conv2d(t.leaf(x44, false), v, t.leaf(cb, false), 1, 1));
        },
        cw);
    Tensor64 pw = rand_t({1, 1, 3, 4});
    run("conv2d/1x1",
        [&](Tape<double>& t, Var<double> v) {
            return quad(conv2d(v, t.leaf(pw, false), Var<double>{}, 1, 0));
        },
        x44);
    Tensor64 dw = rand_t({3, 3, 3});
    run("depthwise/x",
        [&](Tape<double>& t, Var<double> v) {
            return quad(depthwise3x3(v, t.leaf(dw, false), Var<double>{}, 2));
        },
        x44);
    run("depthwise/w",
        [&](Tape<double>& t, Var<double> v) {
            return quad(depthwise3x3(t.leaf(x44, false), v, Var<double>{}, 1));
        },
        dw);
    run("avgpool2x2", [&](Tape<double>& t, Var<double> v) { return quad(avgpool2x2(v)); }, x44);
    run("global_avgpool", [&](Tape<double>& t, Var<double> v) { return quad(global_avgpool(v)); },
        x44);
    run("window_partition",
        [&](Tape<double>& t, Var<double> v) { return quad(window_partition(v, 2)); }, x44);
    run("grid_partition",
        [&](Tape<double>& t, Var<double> v) { return quad(grid_partition(v, 2)); }, x44);
    run("cyclic_shift",
        [&](Tape<double>& t, Var<double> v) { return quad(cyclic_shift(v, 1, -1)); }, x44);
    run("permute", [&](Tape<double>& t, Var<double> v) { return quad(permute(v, {2, 0, 3, 1})); },
        x44);
    run("slice_last", [&](Tape<double>& t, Var<double> v) { return quad(slice_last(v, 1, 2)); },
        x44);
    run("slice_rows", [&](Tape<double>& t, Var<double> v) { return quad(slice_rows(v, 0, 1)); },
        x44);
    run("take_row", [&](Tape<double>& t, Var<double> v) { return quad(take_row(v, 1)); }, x44);
    run("add_bias",
        [&](Tape<double>& t, Var<double> v) { return quad(add_bias(v, t.leaf(rand_t({3}), false))); },
        x44);
    run("mse_loss",
        [&](Tape<double>& t, Var<double> v) { return mse_loss(v, Tensor64::ones({2, 4, 4, 3})); },
        x44);
    run("mean_all", [&](Tape<double>& t, Var<double> v) { return mean_all(mul(v, v)); }, x44);

    // attention: fused self path, params, causal mask, additive bias
    const int N = 4, C = 4;
    Tensor64 ax = rand_t({2, N, C}, 0.7);
    Tensor64 wqkv = rand_t({C, 3 * C}, 0.5), bqkv = rand_t({3 * C}, 0.1);
    Tensor64 wo = rand_t({C, C}, 0.5), bo = rand_t({C}, 0.1);
    Tensor64 abias = rand_t({N, N}, 0.3);
    auto attn = [&](Tape<double>& t, Var<double> xv, std::shared_ptr<Tensor64> mask,
                    Var<double> biasv) {
        AttentionParams<double> p{t.leaf(wqkv, false), t.leaf(bqkv, false), t.leaf(wo, false),
                                  t.leaf(bo, false), biasv};
        return multihead_attention(xv, xv, xv, 2, p, mask);
    };
    run("attention/x",
        [&](Tape<double>& t, Var<double> v) { return quad(attn(t, v, nullptr, Var<double>{})); },
        ax);
    run("attention/causal",
        [&](Tape<double>& t, Var<double> v) {
            return quad(attn(t, v, causal_mask<double>(N), Var<double>{}));
        },
        ax);
    run("attention/qkv_weight",
        [&](Tape<double>& t, Var<double> v) {
            AttentionParams<double> p{v, t.leaf(bqkv, false), t.leaf(wo, false), t.leaf(bo, false),
                                      Var<double>{}};
            auto xv = t.leaf(ax, false);
            return quad(multihead_attention(xv, xv, xv, 2, p));
        },
        wqkv);
    run("attention/out_weight",
        [&](Tape<double>& t, Var<double> v) {
            AttentionParams<double> p{t.leaf(wqkv, false), t.leaf(bqkv, false), v,
                                      t.leaf(bo, false), Var<double>{}};
            auto xv = t.leaf(ax, false);
            return quad(multihead_attention(xv, xv, xv, 2, p));
        },
        wo);
    run("attention/score_bias",
        [&](Tape<double>& t, Var<double> v) { return quad(attn(t, t.leaf(ax, false), nullptr, v)); },
        abias);
    // distinct q/k/v sources exercise the generic path
    run("attention/cross",
        [&](Tape<double>& t, Var<double> v) {
            AttentionParams<double> p{t.leaf(wqkv, false), t.leaf(bqkv, false), t.leaf(wo, false),
                                      t.leaf(bo, false), Var<double>{}};
            auto kv = t.leaf(rand_t({2, N, C}, 0.7), false);
            return quad(multihead_attention(v, kv, kv, 2, p));
        },
        ax);
    return out;
}

// Full desk-scale forward + MSE, gradients probed at seeded sample
// coordinates of the input clip and several parameter tensors.
inline GradcheckEntry model_gradcheck(SpatialVariant variant, std::uint64_t seed,
                                      int coords_per_tensor = 4) {
    VotModel model(VOTConfig::desk(variant));
    ParameterStore<double> store;
    model.init_params(store, seed);
    Rng rng(splitmix64(seed ^ 0xdeadULL));
    const VOTConfig& c = model.config();
    Tensor64 frames(Shape{c.input_frames, c.input_res, c.input_res, 3});
    for (std::int64_t i = 0; i < frames.numel(); ++i) frames[i] = rng.uniform();
    Tensor64 target(Shape{kGridRows, kGridCols});
    for (std::int64_t i = 0; i < target.numel(); ++i)
        target[i] = rng.uniform() < 0.1 ? 255.0 : 0.0;

    GradcheckEntry entry{"model/" + variant_name(variant) + "/desk", 0.0, 1e-4};
    const double input_err = finite_diff_check<double>(
        [&](Tape<double>& tp, Var<double> x) {
            Binder<double> bind(tp, store, false);
            return mse_loss(model.forward(bind, x), target);
        },
        frames, kGradcheckEps, coords_per_tensor + 2, seed);
    entry.err = input_err;
    for (const char* pname : {"stem.conv.weight", "spatial.stage0.block0.attn0.qkv.weight",
                              "temporal.layer0.attn.qkv.weight", "head.weight"}) {
        const double perr = finite_diff_check<double>(
            [&](Tape<double>& tp, Var<double> x) {
                Binder<double> bind(tp, store, false);
                bind.override_param(pname, x);
                return mse_loss(model.forward(bind, tp.leaf(frames, false)), target);
            },
            store.at(pname).value, kGradcheckEps, coords_per_tensor, seed ^ 0x77);
        entry.err = std::max(entry.err, perr);
    }
    return entry;
}

}  // namespace vot
