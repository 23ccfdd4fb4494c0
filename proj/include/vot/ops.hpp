#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "vot/kernels.hpp"
#include "vot/tape.hpp"

// Differentiable operations. Every op returns a new tape node; backward
// closures capture parent ids plus whatever forward intermediates they need.

namespace vot {

namespace detail {

template <typename T>
void check_same_tape(Var<T> a, Var<T> b) {
    if (a.tape != b.tape) throw Error("operands live on different tapes");
}

inline std::int64_t rows_of(const Shape& s, int trailing) {
    std::int64_t n = 1;
    for (size_t i = 0; i + static_cast<size_t>(trailing) < s.size(); ++i) n *= s[i];
    return n;
}

}  // namespace detail

template <typename T>
Var<T> permute(Var<T> x, std::vector<int> perm);
template <typename T>
Var<T> add_bias_rows(Var<T> x, Var<T> b);

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b);
    Tape<T>& t = *a.tape;
    const Tensor<T>&av = a.val(), &bv = b.val();
    if (av.shape() != bv.shape())
        throw ShapeError("add: shape mismatch " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
    Tensor<T> out(av.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
    bool ng = t.any_needs_grad({a, b});
    int ai = a.id, bi = b.id;
    return t.push("add", std::move(out), {ai, bi},
                  ng ? std::function<void(Tape<T>&, int)>([ai, bi](Tape<T>& tp, int id) {
                      const Tensor<T>& g = tp.grad_buf(id);
                      if (tp.needs_grad(ai)) {
                          Tensor<T>& ga = tp.grad_buf(ai);
                          for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                      }
                      if (tp.needs_grad(bi)) {
                          Tensor<T>& gb = tp.grad_buf(bi);
                          for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
                      }
                  })
                     : nullptr,
                  ng);
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b);
    Tape<T>& t = *a.tape;
    const Tensor<T>&av = a.val(), &bv = b.val();
    if (av.shape() != bv.shape())
        throw ShapeError("sub: shape mismatch " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
    Tensor<T> out(av.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
    bool ng = t.any_needs_grad({a, b});
    int ai = a.id, bi = b.id;
    return t.push("sub", std::move(out), {ai, bi},
                  ng ? std::function<void(Tape<T>&, int)>([ai, bi](Tape<T>& tp, int id) {
                      const Tensor<T>& g = tp.grad_buf(id);
                      if (tp.needs_grad(ai)) {
                          Tensor<T>& ga = tp.grad_buf(ai);
                          for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                      }
                      if (tp.needs_grad(bi)) {
                          Tensor<T>& gb = tp.grad_buf(bi);
                          for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
                      }
                  })
                     : nullptr,
                  ng);
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b);
    Tape<T>& t = *a.tape;
    const Tensor<T>&av = a.val(), &bv = b.val();
    if (av.shape() != bv.shape())
        throw ShapeError("mul: shape mismatch " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
    Tensor<T> out(av.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
    bool ng = t.any_needs_grad({a, b});
    int ai = a.id, bi = b.id;
    return t.push("mul", std::move(out), {ai, bi},
                  ng ? std::function<void(Tape<T>&, int)>([ai, bi](Tape<T>& tp, int id) {
                      const Tensor<T>& g = tp.grad_buf(id);
                      const Tensor<T>&av2 = tp.value(ai), &bv2 = tp.value(bi);
                      if (tp.needs_grad(ai)) {
                          Tensor<T>& ga = tp.grad_buf(ai);
                          for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv2[i];
                      }
                      if (tp.needs_grad(bi)) {
                          Tensor<T>& gb = tp.grad_buf(bi);
                          for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av2[i];
                      }
                  })
                     : nullptr,
                  ng);
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
    Tape<T>& t = *a.tape;
    const Tensor<T>& av = a.val();
    Tensor<T> out(av.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * s;
    bool ng = t.any_needs_grad({a});
    int ai = a.id;
    return t.push("scale", std::move(out), {ai},
                  ng ? std::function<void(Tape<T>&, int)>([ai, s](Tape<T>& tp, int id) {
                      if (!tp.needs_grad(ai)) return;
                      const Tensor<T>& g = tp.grad_buf(id);
                      Tensor<T>& ga = tp.grad_buf(ai);
                      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * s;
                  })
                     : nullptr,
                  ng);
}

// Broadcast add of a [D] vector over the last axis.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
    detail::check_same_tape(x, bias);
    Tape<T>& t = *x.tape;
    const Tensor<T>&xv = x.val(), &bv = bias.val();
    if (bv.dim() != 1 || xv.size(xv.dim() - 1) != bv.size(0))
        throw ShapeError("add_bias: bias " + shape_str(bv.shape()) + " does not match last dim of " +
                         shape_str(xv.shape()));
    const int d = bv.size(0);
    const std::int64_t rows = detail::rows_of(xv.shape(), 1);
    Tensor<T> out(xv.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xp = xv.data() + r * d;
        T* op = out.data() + r * d;
        for (int j = 0; j < d; ++j) op[j] = xp[j] + bv[j];
    }
    bool ng = t.any_needs_grad({x, bias});
    int xi = x.id, bi = bias.id;
    return t.push("add_bias", std::move(out), {xi, bi},
                  ng ? std::function<void(Tape<T>&, int)>([xi, bi, rows, d](Tape<T>& tp, int id) {
                      const Tensor<T>& g = tp.grad_buf(id);
                      if (tp.needs_grad(xi)) {
                          Tensor<T>& gx = tp.grad_buf(xi);
                          for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
                      }
                      if (tp.needs_grad(bi)) {
                          Tensor<T>& gb = tp.grad_buf(bi);
                          for (std::int64_t r = 0; r < rows; ++r) {
                              const T* gp = g.data() + r * d;
                              for (int j = 0; j < d; ++j) gb[j] += gp[j];
                          }
                      }
                  })
                     : nullptr,
                  ng);
}

// ---------------------------------------------------------------------------
// Matrix products

// a: [..., m, k]; b: [k, n] (shared) or [..., k, n] (same leading dims).
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b);
    Tape<T>& t = *a.tape;
    const Tensor<T>&av = a.val(), &bv = b.val();
    if (av.dim() < 2 || bv.dim() < 2)
        throw ShapeError("matmul: operands must be at least 2-d, got " + shape_str(av.shape()) +
                         " and " + shape_str(bv.shape()));
    const int m = av.size(av.dim() - 2);
    const int k = av.size(av.dim() - 1);
    const int n = bv.size(bv.dim() - 1);
    const bool shared_b = bv.dim() == 2;
    if (bv.size(bv.dim() - 2) != k)
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
    const std::int64_t batch = detail::rows_of(av.shape(), 2);
    if (!shared_b) {
        Shape lead_a(av.shape().begin(), av.shape().end() - 2);
        Shape lead_b(bv.shape().begin(), bv.shape().end() - 2);
        if (lead_a != lead_b)
            throw ShapeError("matmul: batch dimensions disagree: " + shape_str(av.shape()) + " x " +
                             shape_str(bv.shape()));
    }
    Shape out_shape(av.shape().begin(), av.shape().end() - 1);
    out_shape.push_back(n);
    Tensor<T> out(out_shape);
    for (std::int64_t i = 0; i < batch; ++i) {
        const T* ap = av.data() + i * m * k;
        const T* bp = bv.data() + (shared_b ? 0 : i * static_cast<std::int64_t>(k) * n);
        gemm_nn(m, n, k, ap, bp, out.data() + i * m * n, false);
    }
    bool ng = t.any_needs_grad({a, b});
    int ai = a.id, bi = b.id;
    auto bp_fn = [ai, bi, m, n, k, batch, shared_b](Tape<T>& tp, int id) {
        const Tensor<T>& g = tp.grad_buf(id);
        const Tensor<T>&av2 = tp.value(ai), &bv2 = tp.value(bi);
        if (tp.needs_grad(ai)) {
            Tensor<T>& ga = tp.grad_buf(ai);
            for (std::int64_t i = 0; i < batch; ++i) {
                const T* bp = bv2.data() + (shared_b ? 0 : i * static_cast<std::int64_t>(k) * n);
                gemm_nt(m, k, n, g.data() + i * m * n, bp, ga.data() + i * m * k, true);
            }
        }
        if (tp.needs_grad(bi)) {
            Tensor<T>& gb = tp.grad_buf(bi);
            for (std::int64_t i = 0; i < batch; ++i) {
                T* gp = gb.data() + (shared_b ? 0 : i * static_cast<std::int64_t>(k) * n);
                gemm_tn(k, n, m, av2.data() + i * m * k, g.data() + i * m * n, gp, true);
            }
        }
    };
    return t.push("matmul", std::move(out), {ai, bi},
                  ng ? std::function<void(Tape<T>&, int)>(bp_fn) : nullptr, ng);
}

// x: [..., din] -> [..., dout] with w [din, dout], optional bias [dout].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
    detail::check_same_tape(x, w);
    Tape<T>& t = *x.tape;
    const Tensor<T>&xv = x.val(), &wv = w.val();
    if (wv.dim() != 2 || xv.size(xv.dim() - 1) != wv.size(0))
        throw ShapeError("linear: input " + shape_str(xv.shape()) + " incompatible with weight " +
                         shape_str(wv.shape()));
    const int din = wv.size(0), dout = wv.size(1);
    const std::int64_t rows = detail::rows_of(xv.shape(), 1);
    Shape out_shape(xv.shape().begin(), xv.shape().end() - 1);
    out_shape.push_back(dout);
    Tensor<T> out(out_shape);
    gemm_nn(static_cast<int>(rows), dout, din, xv.data(), wv.data(), out.data(), false);
    const bool has_bias = bias.valid();
    if (has_bias) {
        const Tensor<T>& bv = bias.val();
        if (bv.dim() != 1 || bv.size(0) != dout)
            throw ShapeError("linear: bias shape " + shape_str(bv.shape()));
        for (std::int64_t r = 0; r < rows; ++r) {
            T* op = out.data() + r * dout;
            for (int j = 0; j < dout; ++j) op[j] += bv[j];
        }
    }
    bool ng = has_bias ? t.any_needs_grad({x, w, bias}) : t.any_needs_grad({x, w});
    int xi = x.id, wi = w.id, bi = has_bias ? bias.id : -1;
    auto bp_fn = [xi, wi, bi, rows, din, dout](Tape<T>& tp, int id) {
        const Tensor<T>& g = tp.grad_buf(id);
        if (tp.needs_grad(xi))
            gemm_nt(static_cast<int>(rows), din, dout, g.data(), tp.value(wi).data(),
                    tp.grad_buf(xi).data(), true);
        if (tp.needs_grad(wi))
            gemm_tn(din, dout, static_cast<int>(rows), tp.value(xi).data(), g.data(),
                    tp.grad_buf(wi).data(), true);
        if (bi >= 0 && tp.needs_grad(bi)) {
            Tensor<T>& gb = tp.grad_buf(bi);
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* gp = g.data() + r * dout;
                for (int j = 0; j < dout; ++j) gb[j] += gp[j];
            }
        }
    };
    std::vector<int> parents = has_bias ? std::vector<int>{xi, wi, bi} : std::vector<int>{xi, wi};
    return t.push("linear", std::move(out), std::move(parents),
                  ng ? std::function<void(Tape<T>&, int)>(bp_fn) : nullptr, ng);
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w) {
    return linear(x, w, Var<T>{});
}

// ---------------------------------------------------------------------------
// Normalization / activations

namespace detail {

// Softmax over the last axis with an optional additive row mask (0 or -inf,
// shape [rows_mask, d] broadcast over leading dims). Masked slots get weight
// exactly 0 so they contribute nothing, bit-for-bit.
template <typename T>
Tensor<T> softmax_forward(const Tensor<T>& x, const Tensor<T>* mask) {
    const int d = x.size(x.dim() - 1);
    const std::int64_t rows = rows_of(x.shape(), 1);
    std::int64_t mask_rows = 0;
    if (mask) {
        if (mask->dim() != 2 || mask->size(1) != d)
            throw ShapeError("softmax mask shape " + shape_str(mask->shape()) +
                             " does not match last dim " + std::to_string(d));
        mask_rows = mask->size(0);
    }
    Tensor<T> out(x.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xp = x.data() + r * d;
        const T* mp = mask ? mask->data() + (r % mask_rows) * d : nullptr;
        T* op = out.data() + r * d;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < d; ++j) {
            T v = mp ? xp[j] + mp[j] : xp[j];
            if (v > mx) mx = v;
        }
        T sum = T(0);
        for (int j = 0; j < d; ++j) {
            T v = mp ? xp[j] + mp[j] : xp[j];
            T e = std::exp(v - mx);
            op[j] = e;
            sum += e;
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < d; ++j) op[j] *= inv;
    }
    return out;
}

template <typename T>
void softmax_backward(const Tensor<T>& y, const Tensor<T>& g, Tensor<T>& gx) {
    const int d = y.size(y.dim() - 1);
    const std::int64_t rows = rows_of(y.shape(), 1);
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* yp = y.data() + r * d;
        const T* gp = g.data() + r * d;
        T* xp = gx.data() + r * d;
        T dot = T(0);
        for (int j = 0; j < d; ++j) dot += yp[j] * gp[j];
        for (int j = 0; j < d; ++j) xp[j] += yp[j] * (gp[j] - dot);
    }
}

}  // namespace detail

// Softmax along `axis` (negative counts from the end). Computed with
// max-subtraction; slices sum to 1.
template <typename T>
Var<T> softmax(Var<T> x, int axis = -1) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = x.val();
    const int nd = xv.dim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw ShapeError("softmax: axis out of range");
    bool ng = t.any_needs_grad({x});
    int xi = x.id;
    if (axis == nd - 1) {
        Tensor<T> out = detail::softmax_forward<T>(xv, nullptr);
        return t.push("softmax", std::move(out), {xi},
                      ng ? std::function<void(Tape<T>&, int)>([xi](Tape<T>& tp, int id) {
                          if (!tp.needs_grad(xi)) return;
                          detail::softmax_backward(tp.value(id), tp.grad_buf(id), tp.grad_buf(xi));
                      })
                         : nullptr,
                      ng);
    }
    // Move `axis` last, apply, move back.
    std::vector<int> perm;
    for (int i = 0; i < nd; ++i)
        if (i != axis) perm.push_back(i);
    perm.push_back(axis);
    std::vector<int> inv(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) inv[static_cast<size_t>(perm[static_cast<size_t>(i)])] = i;
    Var<T> moved = permute(x, perm);
    Var<T> sm = softmax(moved, -1);
    return permute(sm, inv);
}

// Attention-score softmax with an additive mask applied inside the op; the
// mask never materializes as a node so -inf entries stay internal.
template <typename T>
Var<T> masked_softmax(Var<T> x, std::shared_ptr<Tensor<T>> mask) {
    Tape<T>& t = *x.tape;
    Tensor<T> out = detail::softmax_forward<T>(x.val(), mask.get());
    bool ng = t.any_needs_grad({x});
    int xi = x.id;
    return t.push("masked_softmax", std::move(out), {xi},
                  ng ? std::function<void(Tape<T>&, int)>([xi](Tape<T>& tp, int id) {
                      if (!tp.needs_grad(xi)) return;
                      detail::softmax_backward(tp.value(id), tp.grad_buf(id), tp.grad_buf(xi));
                  })
                     : nullptr,
                  ng);
}

// Layer normalization over the last axis, affine gain/bias.
template <typename T>
Var<T> layernorm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
    detail::check_same_tape(x, gain);
    detail::check_same_tape(x, bias);
    Tape<T>& t = *x.tape;
    const Tensor<T>&xv = x.val(), &gv = gain.val(), &bv = bias.val();
    const int d = xv.size(xv.dim() - 1);
    if (gv.dim() != 1 || gv.size(0) != d || bv.dim() != 1 || bv.size(0) != d)
        throw ShapeError("layernorm: gain/bias must be [" + std::to_string(d) + "]");
    const std::int64_t rows = detail::rows_of(xv.shape(), 1);
    Tensor<T> out(xv.shape());
    // Saved normalized activations and inverse stddevs for backward.
    auto norm = std::make_shared<Tensor<T>>(xv.shape());
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
    const T invd = T(1) / static_cast<T>(d);
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xp = xv.data() + r * d;
        T mean = T(0);
        for (int j = 0; j < d; ++j) mean += xp[j];
        mean *= invd;
        T var = T(0);
        for (int j = 0; j < d; ++j) {
            T c = xp[j] - mean;
            var += c * c;
        }
        var *= invd;
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        T* np = norm->data() + r * d;
        T* op = out.data() + r * d;
        for (int j = 0; j < d; ++j) {
            np[j] = (xp[j] - mean) * is;
            op[j] = np[j] * gv[j] + bv[j];
        }
    }
    bool ng = t.any_needs_grad({x, gain, bias});
    int xi = x.id, gi = gain.id, bi = bias.id;
    auto bp_fn = [xi, gi, bi, rows, d, norm, inv_std, invd](Tape<T>& tp, int id) {
        const Tensor<T>& g = tp.grad_buf(id);
        const Tensor<T>& gv2 = tp.value(gi);
        if (tp.needs_grad(gi) || tp.needs_grad(bi)) {
            Tensor<T>* gg = tp.needs_grad(gi) ? &tp.grad_buf(gi) : nullptr;
            Tensor<T>* gb = tp.needs_grad(bi) ? &tp.grad_buf(bi) : nullptr;
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* gp = g.data() + r * d;
                const T* np = norm->data() + r * d;
                for (int j = 0; j < d; ++j) {
                    if (gg) (*gg)[j] += gp[j] * np[j];
                    if (gb) (*gb)[j] += gp[j];
                }
            }
        }
        if (tp.needs_grad(xi)) {
            Tensor<T>& gx = tp.grad_buf(xi);
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* gp = g.data() + r * d;
                const T* np = norm->data() + r * d;
                T* xp = gx.data() + r * d;
                const T is = (*inv_std)[static_cast<size_t>(r)];
                T sum_dy = T(0), sum_dyn = T(0);
                for (int j = 0; j < d; ++j) {
                    const T dy = gp[j] * gv2[j];
                    sum_dy += dy;
                    sum_dyn += dy * np[j];
                }
                for (int j = 0; j < d; ++j) {
                    const T dy = gp[j] * gv2[j];
                    xp[j] += is * (dy - invd * sum_dy - np[j] * invd * sum_dyn);
                }
            }
        }
    };
    return t.push("layernorm", std::move(out), {xi, gi, bi},
                  ng ? std::function<void(Tape<T>&, int)>(bp_fn) : nullptr, ng);
}

template <typename T>
Var<T> gelu(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = x.val();
    Tensor<T> out(xv.shape());
    constexpr T kInvSqrt2 = T(0.70710678118654752440084436210485L);
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    const std::int64_t n = xv.numel();
    {
        Eigen::Map<const Arr> xa(xv.data(), n);
        Eigen::Map<Arr> oa(out.data(), n);
        oa = T(0.5) * xa * (T(1) + (xa * kInvSqrt2).erf());
    }
    bool ng = t.any_needs_grad({x});
    int xi = x.id;
    return t.push("gelu", std::move(out), {xi},
                  ng ? std::function<void(Tape<T>&, int)>([xi, n](Tape<T>& tp, int id) {
                      if (!tp.needs_grad(xi)) return;
                      constexpr T kInvSqrt2pi = T(0.39894228040143267793994605993438L);
                      constexpr T kInvSqrt2b = T(0.70710678118654752440084436210485L);
                      Eigen::Map<const Arr> g(tp.grad_buf(id).data(), n);
                      Eigen::Map<const Arr> xa(tp.value(xi).data(), n);
                      Eigen::Map<Arr> gx(tp.grad_buf(xi).data(), n);
                      gx += g * (T(0.5) * (T(1) + (xa * kInvSqrt2b).erf()) +
                                 xa * kInvSqrt2pi * (T(-0.5) * xa.square()).exp());
                  })
                     : nullptr,
                  ng);
}

// ---------------------------------------------------------------------------
// Convolutions (NHWC)

// General conv via im2col + GEMM. w: [kh, kw, cin, cout].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, int stride, int pad) {
    detail::check_same_tape(x, w);
    Tape<T>& t = *x.tape;
    const Tensor<T>&xv = x.val(), &wv = w.val();
    if (xv.dim() != 4 || wv.dim() != 4)
        throw ShapeError("conv2d: expects x [B,H,W,C] and w [kh,kw,cin,cout]");
    const int B = xv.size(0), H = xv.size(1), W = xv.size(2), Cin = xv.size(3);
    const int kh = wv.size(0), kw = wv.size(1), Cout = wv.size(3);
    if (wv.size(2) != Cin)
        throw ShapeError("conv2d: weight cin " + std::to_string(wv.size(2)) + " != input channels " +
                         std::to_string(Cin));
    if (H % stride != 0 || W % stride != 0)
        throw ConfigError("conv2d: spatial dims " + shape_str(xv.shape()) +
                          " not divisible by stride " + std::to_string(stride));
    if (H + 2 * pad < kh || W + 2 * pad < kw)
        throw ConfigError("conv2d: kernel larger than padded input");

    // 1x1 stride-1 convolutions are plain row-wise linear maps
    if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
        const std::int64_t rows = static_cast<std::int64_t>(B) * H * W;
        Tensor<T> out(Shape{B, H, W, Cout});
        gemm_nn(static_cast<int>(rows), Cout, Cin, xv.data(), wv.data(), out.data(), false);
        const bool has_bias1 = bias.valid();
        if (has_bias1) {
            const Tensor<T>& bv = bias.val();
            if (bv.dim() != 1 || bv.size(0) != Cout) throw ShapeError("conv2d: bias shape");
            for (std::int64_t r = 0; r < rows; ++r) {
                T* op = out.data() + r * Cout;
                for (int j = 0; j < Cout; ++j) op[j] += bv[j];
            }
        }
        bool ng1 = has_bias1 ? t.any_needs_grad({x, w, bias}) : t.any_needs_grad({x, w});
        int xi1 = x.id, wi1 = w.id, bi1 = has_bias1 ? bias.id : -1;
        auto bp1 = [xi1, wi1, bi1, rows, Cin, Cout](Tape<T>& tp, int id) {
            const Tensor<T>& g = tp.grad_buf(id);
            if (tp.needs_grad(xi1))
                gemm_nt(static_cast<int>(rows), Cin, Cout, g.data(), tp.value(wi1).data(),
                        tp.grad_buf(xi1).data(), true);
            if (tp.needs_grad(wi1))
                gemm_tn(Cin, Cout, static_cast<int>(rows), tp.value(xi1).data(), g.data(),
                        tp.grad_buf(wi1).data(), true);
            if (bi1 >= 0 && tp.needs_grad(bi1)) {
                Tensor<T>& gb = tp.grad_buf(bi1);
                for (std::int64_t r = 0; r < rows; ++r) {
                    const T* gp = g.data() + r * Cout;
                    for (int j = 0; j < Cout; ++j) gb[j] += gp[j];
                }
            }
        };
        std::vector<int> parents1 =
            has_bias1 ? std::vector<int>{xi1, wi1, bi1} : std::vector<int>{xi1, wi1};
        return t.push("conv2d", std::move(out), std::move(parents1),
                      ng1 ? std::function<void(Tape<T>&, int)>(bp1) : nullptr, ng1);
    }

    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    const int patch = kh * kw * Cin;
    const std::int64_t orows = static_cast<std::int64_t>(B) * Ho * Wo;
    auto cols = std::make_shared<Tensor<T>>(Shape{static_cast<int>(orows), patch});
    {
        T* cp = cols->data();
        for (int b = 0; b < B; ++b)
            for (int ho = 0; ho < Ho; ++ho)
                for (int wo = 0; wo < Wo; ++wo) {
                    for (int ih = 0; ih < kh; ++ih) {
                        const int r = ho * stride - pad + ih;
                        for (int iw = 0; iw < kw; ++iw) {
                            const int c = wo * stride - pad + iw;
                            if (r < 0 || r >= H || c < 0 || c >= W) {
                                std::memset(cp, 0, sizeof(T) * static_cast<size_t>(Cin));
                            } else {
                                std::memcpy(cp, xv.data() + ((static_cast<std::int64_t>(b) * H + r) * W + c) * Cin,
                                            sizeof(T) * static_cast<size_t>(Cin));
                            }
                            cp += Cin;
                        }
                    }
                }
    }
    Tensor<T> out(Shape{B, Ho, Wo, Cout});
    gemm_nn(static_cast<int>(orows), Cout, patch, cols->data(), wv.data(), out.data(), false);
    const bool has_bias = bias.valid();
    if (has_bias) {
        const Tensor<T>& bv = bias.val();
        if (bv.dim() != 1 || bv.size(0) != Cout) throw ShapeError("conv2d: bias shape");
        for (std::int64_t r = 0; r < orows; ++r) {
            T* op = out.data() + r * Cout;
            for (int j = 0; j < Cout; ++j) op[j] += bv[j];
        }
    }
    bool ng = has_bias ? t.any_needs_grad({x, w, bias}) : t.any_needs_grad({x, w});
    int xi = x.id, wi = w.id, bi = has_bias ? bias.id : -1;
    auto bp_fn = [=](Tape<T>& tp, int id) {
        const Tensor<T>& g = tp.grad_buf(id);
        if (tp.needs_grad(wi))
            gemm_tn(patch, Cout, static_cast<int>(orows), cols->data(), g.data(),
                    tp.grad_buf(wi).data(), true);
        if (bi >= 0 && tp.needs_grad(bi)) {
            Tensor<T>& gb = tp.grad_buf(bi);
            for (std::int64_t r = 0; r < orows; ++r) {
                const T* gp = g.data() + r * Cout;
                for (int j = 0; j < Cout; ++j) gb[j] += gp[j];
            }
        }
        if (tp.needs_grad(xi)) {
            Tensor<T> dcols(Shape{static_cast<int>(orows), patch});
            gemm_nt(static_cast<int>(orows), patch, Cout, g.data(), tp.value(wi).data(),
                    dcols.data(), false);
            Tensor<T>& gx = tp.grad_buf(xi);
            const T* cp = dcols.data();
            for (int b = 0; b < B; ++b)
                for (int ho = 0; ho < Ho; ++ho)
                    for (int wo = 0; wo < Wo; ++wo)
                        for (int ih = 0; ih < kh; ++ih) {
                            const int r = ho * stride - pad + ih;
                            for (int iw = 0; iw < kw; ++iw) {
                                const int c = wo * stride - pad + iw;
                                if (r >= 0 && r < H && c >= 0 && c < W) {
                                    T* dst = gx.data() + ((static_cast<std::int64_t>(b) * H + r) * W + c) * Cin;
                                    for (int j = 0; j < Cin; ++j) dst[j] += cp[j];
                                }
                                cp += Cin;
                            }
                        }
        }
    };
    std::vector<int> parents = has_bias ? std::vector<int>{xi, wi, bi} : std::vector<int>{xi, wi};
    return t.push("conv2d", std::move(out), std::move(parents),
                  ng ? std::function<void(Tape<T>&, int)>(bp_fn) : nullptr, ng);
}

// Depthwise 3x3, padding 1. w: [3, 3, C].
template <typename T>
Var<T> depthwise3x3(Var<T> x, Var<T> w, Var<T> bias, int stride) {
    detail::check_same_tape(x, w);
    Tape<T>& t = *x.tape;
    const Tensor<T>&xv = x.val(), &wv = w.val();
    if (xv.dim() != 4 || wv.dim() != 3 || wv.size(0) != 3 || wv.size(1) != 3)
        throw ShapeError("depthwise3x3: expects x [B,H,W,C], w [3,3,C]");
    const int B = xv.size(0), H = xv.size(1), W = xv.size(2), C = xv.size(3);
    if (wv.size(2) != C) throw ShapeError("depthwise3x3: channel mismatch");
    if (H % stride != 0 || W % stride != 0)
        throw ConfigError("depthwise3x3: dims not divisible by stride");
    const int Ho = (H - 1) / stride + 1;
    const int Wo = (W - 1) / stride + 1;
    Tensor<T> out(Shape{B, Ho, Wo, C});
    const bool has_bias = bias.valid();
    const Tensor<T>* bv = has_bias ? &bias.val() : nullptr;

    // valid output-column range for tap column iw: 0 <= wo*stride - 1 + iw < W
    auto wo_range = [&](int iw, int& lo, int& hi) {
        lo = std::max(0, (1 - iw + stride - 1) / stride);
        hi = std::min(Wo - 1, (W - iw) / stride);
    };

    for (int b = 0; b < B; ++b) {
        if (bv)
            for (std::int64_t s = 0; s < static_cast<std::int64_t>(Ho) * Wo; ++s)
                std::memcpy(out.data() + (static_cast<std::int64_t>(b) * Ho * Wo + s) * C,
                            bv->data(), sizeof(T) * static_cast<size_t>(C));
        for (int ho = 0; ho < Ho; ++ho) {
            T* orow = out.data() + (static_cast<std::int64_t>(b) * Ho + ho) * Wo * C;
            for (int ih = 0; ih < 3; ++ih) {
                const int r = ho * stride - 1 + ih;
                if (r < 0 || r >= H) continue;
                const T* xrow = xv.data() + (static_cast<std::int64_t>(b) * H + r) * W * C;
                for (int iw = 0; iw < 3; ++iw) {
                    int lo, hi;
                    wo_range(iw, lo, hi);
                    const T* wp = wv.data() + (ih * 3 + iw) * C;
                    for (int wo = lo; wo <= hi; ++wo) {
                        const T* xp = xrow + (static_cast<std::int64_t>(wo) * stride - 1 + iw) * C;
                        T* op = orow + static_cast<std::int64_t>(wo) * C;
                        for (int j = 0; j < C; ++j) op[j] += xp[j] * wp[j];
                    }
                }
            }
        }
    }
    bool ng = has_bias ? t.any_needs_grad({x, w, bias}) : t.any_needs_grad({x, w});
    int xi = x.id, wi = w.id, bi = has_bias ? bias.id : -1;
    auto bp_fn = [=](Tape<T>& tp, int id) {
        const Tensor<T>& g = tp.grad_buf(id);
        const Tensor<T>&xv2 = tp.value(xi), &wv2 = tp.value(wi);
        Tensor<T>* gx = tp.needs_grad(xi) ? &tp.grad_buf(xi) : nullptr;
        Tensor<T>* gw = tp.needs_grad(wi) ? &tp.grad_buf(wi) : nullptr;
        Tensor<T>* gb = (bi >= 0 && tp.needs_grad(bi)) ? &tp.grad_buf(bi) : nullptr;
        auto wo_range2 = [&](int iw, int& lo, int& hi) {
            lo = std::max(0, (1 - iw + stride - 1) / stride);
            hi = std::min(Wo - 1, (W - iw) / stride);
        };
        if (gb)
            for (std::int64_t s = 0; s < static_cast<std::int64_t>(B) * Ho * Wo; ++s) {
                const T* gp = g.data() + s * C;
                for (int j = 0; j < C; ++j) (*gb)[j] += gp[j];
            }
        for (int b = 0; b < B; ++b)
            for (int ho = 0; ho < Ho; ++ho) {
                const T* grow = g.data() + (static_cast<std::int64_t>(b) * Ho + ho) * Wo * C;
                for (int ih = 0; ih < 3; ++ih) {
                    const int r = ho * stride - 1 + ih;
                    if (r < 0 || r >= H) continue;
                    const std::int64_t xrow_off = (static_cast<std::int64_t>(b) * H + r) * W * C;
                    for (int iw = 0; iw < 3; ++iw) {
                        int lo, hi;
                        wo_range2(iw, lo, hi);
                        const std::int64_t woff = (ih * 3 + iw) * C;
                        for (int wo = lo; wo <= hi; ++wo) {
                            const std::int64_t xoff =
                                xrow_off + (static_cast<std::int64_t>(wo) * stride - 1 + iw) * C;
                            const T* gp = grow + static_cast<std::int64_t>(wo) * C;
                            if (gx) {
                                T* dst = gx->data() + xoff;
                                const T* wp = wv2.data() + woff;
                                for (int j = 0; j < C; ++j) dst[j] += gp[j] * wp[j];
                            }
                            if (gw) {
                                T* dst = gw->data() + woff;
                                const T* xp = xv2.data() + xoff;
                                for (int j = 0; j < C; ++j) dst[j] += gp[j] * xp[j];
                            }
                        }
                    }
                }
            }
    };
    std::vector<int> parents = has_bias ? std::vector<int>{xi, wi, bi} : std::vector<int>{xi, wi};
    return t.push("depthwise3x3", std::move(out), std::move(parents),
                  ng ? std::function<void(Tape<T>&, int)>(bp_fn) : nullptr, ng);
}

// 2x2 average pool, stride 2.
template <typename T>
Var<T> avgpool2x2(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = x.val();
    if (xv.dim() != 4) throw ShapeError("avgpool2x2: expects [B,H,W,C]");
    const int B = xv.size(0), H = xv.size(1), W = xv.size(2), C = xv.size(3);
    if (H % 2 != 0 || W % 2 != 0) throw ConfigError("avgpool2x2: odd spatial dims");
    const int Ho = H / 2, Wo = W / 2;
    Tensor<T> out(Shape{B, Ho, Wo, C});
    for (int b = 0; b < B; ++b)
        for (int ho = 0; ho < Ho; ++ho)
            for (int wo = 0; wo < Wo; ++wo) {
                T* op = out.data() + ((static_cast<std::int64_t>(b) * Ho + ho) * Wo + wo) * C;
                for (int dr = 0; dr < 2; ++dr)
                    for (int dc = 0; dc < 2; ++dc) {
                        const T* xp =
                            xv.data() + ((static_cast<std::int64_t>(b) * H + 2 * ho + dr) * W + 2 * wo + dc) * C;
                        for (int j = 0; j < C; ++j) op[j] += T(0.25) * xp[j];
                    }
            }
    bool ng = t.any_needs_grad({x});
    int xi = x.id;
    auto bp_fn = [=](Tape<T>& tp, int id) {
        if (!tp.needs_grad(xi)) return;
        const Tensor<T>& g = tp.grad_buf(id);
        Tensor<T>& gx = tp.grad_buf(xi);
        for (int b = 0; b < B; ++b)
            for (int ho = 0; ho < Ho; ++ho)
                for (int wo = 0; wo < Wo; ++wo) {
                    const T* gp = g.data() + ((static_cast<std::int64_t>(b) * Ho + ho) * Wo + wo) * C;
                    for (int dr = 0; dr < 2; ++dr)
                        for (int dc = 0; dc < 2; ++dc) {
                            T* dst = gx.data() +
                                     ((static_cast<std::int64_t>(b) * H + 2 * ho + dr) * W + 2 * wo + dc) * C;
                            for (int j = 0; j < C; ++j) dst[j] += T(0.25) * gp[j];
                        }
                }
    };
    return t.push("avgpool2x2", std::move(out), {xi},
                  ng ? std::function<void(Tape<T>&, int)>(bp_fn) : nullptr, ng);
}

// [B,H,W,C] -> [B,C], mean over spatial positions.
template <typename T>
Var<T> global_avgpool(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = x.val();
    if (xv.dim() != 4) throw ShapeError("global_avgpool: expects [B,H,W,C]");
    const int B = xv.size(0), H = xv.size(1), W = xv.size(2), C = xv.size(3);
    const T inv = T(1) / static_cast<T>(H * W);
    Tensor<T> out(Shape{B, C});
    for (int b = 0; b < B; ++b) {
        T* op = out.data() + static_cast<std::int64_t>(b) * C;
        const T* xp = xv.data() + static_cast<std::int64_t>(b) * H * W * C;
        for (int s = 0; s < H * W; ++s)
            for (int j = 0; j < C; ++j) op[j] += xp[static_cast<std::int64_t>(s) * C + j];
        for (int j = 0; j < C; ++j) op[j] *= inv;
    }
    bool ng = t.any_needs_grad({x});
    int xi = x.id;
    auto bp_fn = [=](Tape<T>& tp, int id) {
        if (!tp.needs_grad(xi)) return;
        const Tensor<T>& g = tp.grad_buf(id);
        Tensor<T>& gx = tp.grad_buf(xi);
        for (int b = 0; b < B; ++b) {
            const T* gp = g.data() + static_cast<std::int64_t>(b) * C;
            T* xp = gx.data() + static_cast<std::int64_t>(b) * H * W * C;
            for (int s = 0; s < H * W; ++s)
                for (int j = 0; j < C; ++j) xp[static_cast<std::int64_t>(s) * C + j] += gp[j] * inv;
        }
    };
    return t.push("global_avgpool", std::move(out), {xi},
                  ng ? std::function<void(Tape<T>&, int)>(bp_fn) : nullptr, ng);
}

// ---------------------------------------------------------------------------
// Shape / gather ops

template <typename T>
Var<T> reshape(Var<T> x, Shape s) {
    Tape<T>& t = *x.tape;
    Tensor<T> out = x.val().reshaped(s);
    bool ng = t.any_needs_grad({x});
    int xi = x.id;
    return t.push("reshape", std::move(out), {xi},
                  ng ? std::function<void(Tape<T>&, int)>([xi](Tape<T>& tp, int id) {
                      if (!tp.needs_grad(xi)) return;
                      const Tensor<T>& g = tp.grad_buf(id);
                      Tensor<T>& gx = tp.grad_buf(xi);
                      for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
                  })
                     : nullptr,
                  ng);
}

namespace detail {

template <typename T>
Tensor<T> permute_values(const Tensor<T>& x, const std::vector<int>& perm) {
    const int nd = x.dim();
    Shape out_shape(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = x.size(perm[static_cast<size_t>(i)]);
    Tensor<T> out(out_shape);
    std::vector<std::int64_t> in_strides(static_cast<size_t>(nd), 1);
    for (int i = nd - 2; i >= 0; --i)
        in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * x.size(i + 1);
    std::vector<std::int64_t> walk(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) walk[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    std::vector<int> idx(static_cast<size_t>(nd), 0);
    const std::int64_t n = x.numel();
    std::int64_t src = 0;
    for (std::int64_t o = 0; o < n; ++o) {
        out[o] = x[src];
        for (int ax = nd - 1; ax >= 0; --ax) {
            src += walk[static_cast<size_t>(ax)];
            if (++idx[static_cast<size_t>(ax)] < out_shape[static_cast<size_t>(ax)]) break;
            src -= walk[static_cast<size_t>(ax)] * out_shape[static_cast<size_t>(ax)];
            idx[static_cast<size_t>(ax)] = 0;
        }
    }
    return out;
}

}  // namespace detail

template <typename T>
Var<T> permute(Var<T> x, std::vector<int> perm) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = x.val();
    if (static_cast<int>(perm.size()) != xv.dim()) throw ShapeError("permute: rank mismatch");
    Tensor<T> out = detail::permute_values(xv, perm);
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    bool ng = t.any_needs_grad({x});
    int xi = x.id;
    return t.push("permute", std::move(out), {xi},
                  ng ? std::function<void(Tape<T>&, int)>([xi, inv](Tape<T>& tp, int id) {
                      if (!tp.needs_grad(xi)) return;
                      Tensor<T> gperm = detail::permute_values(tp.grad_buf(id), inv);
                      Tensor<T>& gx = tp.grad_buf(xi);
                      for (std::int64_t i = 0; i < gperm.numel(); ++i) gx[i] += gperm[i];
                  })
                     : nullptr,
                  ng);
}

// Slice [start, start+len) of the last axis.
template <typename T>
Var<T> slice_last(Var<T> x, int start, int len) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = x.val();
    const int d = xv.size(xv.dim() - 1);
    if (start < 0 || len <= 0 || start + len > d) throw ShapeError("slice_last: range out of bounds");
    const std::int64_t rows = detail::rows_of(xv.shape(), 1);
    Shape out_shape = xv.shape();
    out_shape.back() = len;
    Tensor<T> out(out_shape);
    for (std::int64_t r = 0; r < rows; ++r)
        std::memcpy(out.data() + r * len, xv.data() + r * d + start, sizeof(T) * static_cast<size_t>(len));
    bool ng = t.any_needs_grad({x});
    int xi = x.id;
    return t.push("slice_last", std::move(out), {xi},
                  ng ? std::function<void(Tape<T>&, int)>([xi, start, len, d, rows](Tape<T>& tp, int id) {
                      if (!tp.needs_grad(xi)) return;
                      const Tensor<T>& g = tp.grad_buf(id);
                      Tensor<T>& gx = tp.grad_buf(xi);
                      for (std::int64_t r = 0; r < rows; ++r) {
                          const T* gp = g.data() + r * len;
                          T* xp = gx.data() + r * d + start;
                          for (int j = 0; j < len; ++j) xp[j] += gp[j];
                      }
                  })
                     : nullptr,
                  ng);
}

// Rows [start, start+len) of the first axis.
template <typename T>
Var<T> slice_rows(Var<T> x, int start, int len) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = x.val();
    if (xv.dim() < 1) throw ShapeError("slice_rows: needs rank >= 1");
    const int n = xv.size(0);
    if (start < 0 || len <= 0 || start + len > n) throw ShapeError("slice_rows: range out of bounds");
    Shape out_shape = xv.shape();
    out_shape[0] = len;
    const std::int64_t rowlen = shape_numel(out_shape) / len;
    Tensor<T> out(out_shape);
    std::memcpy(out.data(), xv.data() + start * rowlen,
                sizeof(T) * static_cast<size_t>(len * rowlen));
    bool ng = t.any_needs_grad({x});
    int xi = x.id;
    return t.push("slice_rows", std::move(out), {xi},
                  ng ? std::function<void(Tape<T>&, int)>([xi, start, len, rowlen](Tape<T>& tp, int id) {
                      if (!tp.needs_grad(xi)) return;
                      const Tensor<T>& g = tp.grad_buf(id);
                      Tensor<T>& gx = tp.grad_buf(xi);
                      T* dst = gx.data() + start * rowlen;
                      for (std::int64_t j = 0; j < len * rowlen; ++j) dst[j] += g[j];
                  })
                     : nullptr,
                  ng);
}

// Row `index` of the first axis; result drops that axis.
template <typename T>
Var<T> take_row(Var<T> x, int index) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = x.val();
    if (xv.dim() < 2) throw ShapeError("take_row: needs rank >= 2");
    const int n = xv.size(0);
    if (index < 0 || index >= n) throw ShapeError("take_row: index out of range");
    Shape out_shape(xv.shape().begin() + 1, xv.shape().end());
    const std::int64_t rowlen = shape_numel(out_shape);
    Tensor<T> out(out_shape);
    std::memcpy(out.data(), xv.data() + index * rowlen, sizeof(T) * static_cast<size_t>(rowlen));
    bool ng = t.any_needs_grad({x});
    int xi = x.id;
    return t.push("take_row", std::move(out), {xi},
                  ng ? std::function<void(Tape<T>&, int)>([xi, index, rowlen](Tape<T>& tp, int id) {
                      if (!tp.needs_grad(xi)) return;
                      const Tensor<T>& g = tp.grad_buf(id);
                      Tensor<T>& gx = tp.grad_buf(xi);
                      T* dst = gx.data() + index * rowlen;
                      for (std::int64_t j = 0; j < rowlen; ++j) dst[j] += g[j];
                  })
                     : nullptr,
                  ng);
}

namespace detail {

// Bijective token-row gather shared by the window/grid/shift rearrangements.
// map[i] = source row of output row i; rows are C contiguous values.
template <typename T>
Var<T> gather_tokens(Var<T> x, std::shared_ptr<std::vector<std::int64_t>> map, Shape out_shape,
                     int row_len, const char* name) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = x.val();
    Tensor<T> out(out_shape);
    const std::int64_t n = static_cast<std::int64_t>(map->size());
    for (std::int64_t i = 0; i < n; ++i)
        std::memcpy(out.data() + i * row_len, xv.data() + (*map)[static_cast<size_t>(i)] * row_len,
                    sizeof(T) * static_cast<size_t>(row_len));
    bool ng = t.any_needs_grad({x});
    int xi = x.id;
    return t.push(name, std::move(out), {xi},
                  ng ? std::function<void(Tape<T>&, int)>([xi, map, row_len, n](Tape<T>& tp, int id) {
                      if (!tp.needs_grad(xi)) return;
                      const Tensor<T>& g = tp.grad_buf(id);
                      Tensor<T>& gx = tp.grad_buf(xi);
                      for (std::int64_t i = 0; i < n; ++i) {
                          T* dst = gx.data() + (*map)[static_cast<size_t>(i)] * row_len;
                          const T* gp = g.data() + i * row_len;
                          for (int j = 0; j < row_len; ++j) dst[j] += gp[j];
                      }
                  })
                     : nullptr,
                  ng);
}

inline void check_divides(int divisor, int value, const char* what) {
    if (divisor <= 0 || value % divisor != 0)
        throw ConfigError(std::string(what) + ": " + std::to_string(divisor) +
                          " does not divide extent " + std::to_string(value));
}

}  // namespace detail

// [B,H,W,C] -> [B*(H/p)*(W/p), p*p, C]; non-overlapping p x p windows in
// row-major window order, tokens row-major within the window.
template <typename T>
Var<T> window_partition(Var<T> x, int p) {
    const Tensor<T>& xv = x.val();
    if (xv.dim() != 4) throw ShapeError("window_partition: expects [B,H,W,C]");
    const int B = xv.size(0), H = xv.size(1), W = xv.size(2), C = xv.size(3);
    detail::check_divides(p, H, "window_partition");
    detail::check_divides(p, W, "window_partition");
    const int nh = H / p, nw = W / p;
    auto map = std::make_shared<std::vector<std::int64_t>>();
    map->reserve(static_cast<size_t>(B) * H * W);
    for (int b = 0; b < B; ++b)
        for (int wr = 0; wr < nh; ++wr)
            for (int wc = 0; wc < nw; ++wc)
                for (int pr = 0; pr < p; ++pr)
                    for (int pc = 0; pc < p; ++pc)
                        map->push_back((static_cast<std::int64_t>(b) * H + wr * p + pr) * W + wc * p + pc);
    return detail::gather_tokens(x, map, Shape{B * nh * nw, p * p, C}, C, "window_partition");
}

// Inverse of window_partition.
template <typename T>
Var<T> window_merge(Var<T> x, int p, int B, int H, int W) {
    const Tensor<T>& xv = x.val();
    if (xv.dim() != 3) throw ShapeError("window_merge: expects [groups, tokens, C]");
    detail::check_divides(p, H, "window_merge");
    detail::check_divides(p, W, "window_merge");
    const int C = xv.size(2);
    const int nh = H / p, nw = W / p;
    if (xv.size(0) != B * nh * nw || xv.size(1) != p * p)
        throw ShapeError("window_merge: group shape " + shape_str(xv.shape()) +
                         " inconsistent with B,H,W,p");
    auto map = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(B) * H * W);
    std::int64_t src = 0;
    for (int b = 0; b < B; ++b)
        for (int wr = 0; wr < nh; ++wr)
            for (int wc = 0; wc < nw; ++wc)
                for (int pr = 0; pr < p; ++pr)
                    for (int pc = 0; pc < p; ++pc)
                        (*map)[static_cast<size_t>((static_cast<std::int64_t>(b) * H + wr * p + pr) * W + wc * p + pc)] = src++;
    return detail::gather_tokens(x, map, Shape{B, H, W, C}, C, "window_merge");
}

// [B,H,W,C] -> [B*(H/g)*(W/g), g*g, C]; token (r,c) joins residue group
// (r mod H/g, c mod W/g), so each group spans the image at stride (H/g, W/g).
template <typename T>
Var<T> grid_partition(Var<T> x, int g) {
    const Tensor<T>& xv = x.val();
    if (xv.dim() != 4) throw ShapeError("grid_partition: expects [B,H,W,C]");
    const int B = xv.size(0), H = xv.size(1), W = xv.size(2), C = xv.size(3);
    detail::check_divides(g, H, "grid_partition");
    detail::check_divides(g, W, "grid_partition");
    const int sh = H / g, sw = W / g;
    auto map = std::make_shared<std::vector<std::int64_t>>();
    map->reserve(static_cast<size_t>(B) * H * W);
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < sh; ++i)
            for (int j = 0; j < sw; ++j)
                for (int a = 0; a < g; ++a)
                    for (int e = 0; e < g; ++e)
                        map->push_back((static_cast<std::int64_t>(b) * H + i + a * sh) * W + j + e * sw);
    return detail::gather_tokens(x, map, Shape{B * sh * sw, g * g, C}, C, "grid_partition");
}

// Inverse of grid_partition.
template <typename T>
Var<T> grid_merge(Var<T> x, int g, int B, int H, int W) {
    const Tensor<T>& xv = x.val();
    if (xv.dim() != 3) throw ShapeError("grid_merge: expects [groups, tokens, C]");
    detail::check_divides(g, H, "grid_merge");
    detail::check_divides(g, W, "grid_merge");
    const int C = xv.size(2);
    const int sh = H / g, sw = W / g;
    if (xv.size(0) != B * sh * sw || xv.size(1) != g * g)
        throw ShapeError("grid_merge: group shape " + shape_str(xv.shape()) +
                         " inconsistent with B,H,W,g");
    auto map = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(B) * H * W);
    std::int64_t src = 0;
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < sh; ++i)
            for (int j = 0; j < sw; ++j)
                for (int a = 0; a < g; ++a)
                    for (int e = 0; e < g; ++e)
                        (*map)[static_cast<size_t>((static_cast<std::int64_t>(b) * H + i + a * sh) * W + j + e * sw)] = src++;
    return detail::gather_tokens(x, map, Shape{B, H, W, C}, C, "grid_merge");
}

// Toroidal roll of the spatial axes: out(r,c) = in((r-dy) mod H, (c-dx) mod W).
template <typename T>
Var<T> cyclic_shift(Var<T> x, int dy, int dx) {
    const Tensor<T>& xv = x.val();
    if (xv.dim() != 4) throw ShapeError("cyclic_shift: expects [B,H,W,C]");
    const int B = xv.size(0), H = xv.size(1), W = xv.size(2), C = xv.size(3);
    auto mod = [](int a, int m) { return ((a % m) + m) % m; };
    auto map = std::make_shared<std::vector<std::int64_t>>();
    map->reserve(static_cast<size_t>(B) * H * W);
    for (int b = 0; b < B; ++b)
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c)
                map->push_back((static_cast<std::int64_t>(b) * H + mod(r - dy, H)) * W + mod(c - dx, W));
    return detail::gather_tokens(x, map, xv.shape(), C, "cyclic_shift");
}

// ---------------------------------------------------------------------------
// Reductions / losses

template <typename T>
Var<T> mean_all(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = x.val();
    const std::int64_t n = xv.numel();
    T acc = T(0);
    for (std::int64_t i = 0; i < n; ++i) acc += xv[i];
    Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
    bool ng = t.any_needs_grad({x});
    int xi = x.id;
    return t.push("mean_all", std::move(out), {xi},
                  ng ? std::function<void(Tape<T>&, int)>([xi, n](Tape<T>& tp, int id) {
                      if (!tp.needs_grad(xi)) return;
                      const T g = tp.grad_buf(id)[0] / static_cast<T>(n);
                      Tensor<T>& gx = tp.grad_buf(xi);
                      for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
                  })
                     : nullptr,
                  ng);
}

template <typename T>
Var<T> sum_all(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& xv = x.val();
    const std::int64_t n = xv.numel();
    T acc = T(0);
    for (std::int64_t i = 0; i < n; ++i) acc += xv[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    bool ng = t.any_needs_grad({x});
    int xi = x.id;
    return t.push("sum_all", std::move(out), {xi},
                  ng ? std::function<void(Tape<T>&, int)>([xi, n](Tape<T>& tp, int id) {
                      if (!tp.needs_grad(xi)) return;
                      const T g = tp.grad_buf(id)[0];
                      Tensor<T>& gx = tp.grad_buf(xi);
                      for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
                  })
                     : nullptr,
                  ng);
}

// Mean squared error against a constant target.
template <typename T>
Var<T> mse_loss(Var<T> pred, const Tensor<T>& target) {
    Tape<T>& t = *pred.tape;
    const Tensor<T>& pv = pred.val();
    if (pv.shape() != target.shape())
        throw ShapeError("mse_loss: prediction " + shape_str(pv.shape()) + " vs target " +
                         shape_str(target.shape()));
    const std::int64_t n = pv.numel();
    T acc = T(0);
    for (std::int64_t i = 0; i < n; ++i) {
        const T d = pv[i] - target[i];
        acc += d * d;
    }
    Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
    bool ng = t.any_needs_grad({pred});
    int pi = pred.id;
    auto tgt = std::make_shared<Tensor<T>>(target);
    return t.push("mse_loss", std::move(out), {pi},
                  ng ? std::function<void(Tape<T>&, int)>([pi, tgt, n](Tape<T>& tp, int id) {
                      if (!tp.needs_grad(pi)) return;
                      const T g = tp.grad_buf(id)[0] * T(2) / static_cast<T>(n);
                      const Tensor<T>& pv2 = tp.value(pi);
                      Tensor<T>& gp = tp.grad_buf(pi);
                      for (std::int64_t i = 0; i < n; ++i) gp[i] += g * (pv2[i] - (*tgt)[i]);
                  })
                     : nullptr,
                  ng);
}

// ---------------------------------------------------------------------------
// Multi-head attention

// Fused scaled dot-product self-attention over a packed qkv tensor
// [G, N, 3C]: per head, softmax(Q K^T / sqrt(dh) [+ bias] [+ mask]) V, heads
// concatenated into [G, N, C]. Head slices are read straight out of the
// packed layout through strided maps.
template <typename T>
Var<T> qkv_self_attention(Var<T> qkv, int heads, std::shared_ptr<Tensor<T>> mask,
                          Var<T> attn_bias) {
    Tape<T>& t = *qkv.tape;
    const Tensor<T>& xv = qkv.val();
    if (xv.dim() != 3 || xv.size(2) % 3 != 0)
        throw ShapeError("qkv_self_attention: expects [G, N, 3C], got " + shape_str(xv.shape()));
    const int G = xv.size(0), N = xv.size(1), C = xv.size(2) / 3;
    if (C % heads != 0)
        throw ConfigError("qkv_self_attention: dim " + std::to_string(C) +
                          " not divisible by heads " + std::to_string(heads));
    const int dh = C / heads;
    const T scl = T(1) / std::sqrt(static_cast<T>(dh));
    const bool has_bias = attn_bias.valid();
    if (has_bias) {
        const Tensor<T>& bv = attn_bias.val();
        if (bv.dim() != 2 || bv.size(0) != N || bv.size(1) != N)
            throw ShapeError("qkv_self_attention: bias must be [N, N]");
    }
    if (mask && (mask->dim() != 2 || mask->size(0) != N || mask->size(1) != N))
        throw ShapeError("qkv_self_attention: mask must be [N, N]");

    auto weights = std::make_shared<Tensor<T>>(Shape{G, heads, N, N});
    Tensor<T> out(Shape{G, N, C});
    const std::int64_t row3c = static_cast<std::int64_t>(3) * C;
    for (int g = 0; g < G; ++g) {
        const T* base = xv.data() + static_cast<std::int64_t>(g) * N * row3c;
        for (int h = 0; h < heads; ++h) {
            ConstStridedMap<T> Q(base + h * dh, N, dh, Eigen::OuterStride<>(row3c));
            ConstStridedMap<T> K(base + C + h * dh, N, dh, Eigen::OuterStride<>(row3c));
            ConstStridedMap<T> V(base + 2 * C + h * dh, N, dh, Eigen::OuterStride<>(row3c));
            T* wp = weights->data() + ((static_cast<std::int64_t>(g) * heads + h) * N) * N;
            MatMap<T> S(wp, N, N);
            S.noalias() = Q * K.transpose() * scl;
            if (has_bias) S += ConstMatMap<T>(attn_bias.val().data(), N, N);
            // softmax rows in place, masked slots get exactly zero weight
            for (int i = 0; i < N; ++i) {
                T* row = wp + static_cast<std::int64_t>(i) * N;
                const T* mrow = mask ? mask->data() + static_cast<std::int64_t>(i) * N : nullptr;
                T mx = -std::numeric_limits<T>::infinity();
                for (int j = 0; j < N; ++j) {
                    const T v = mrow ? row[j] + mrow[j] : row[j];
                    row[j] = v;
                    if (v > mx) mx = v;
                }
                T sum = T(0);
                for (int j = 0; j < N; ++j) {
                    const T e = std::exp(row[j] - mx);
                    row[j] = e;
                    sum += e;
                }
                const T inv = T(1) / sum;
                for (int j = 0; j < N; ++j) row[j] *= inv;
            }
            StridedMap<T> O(out.data() + static_cast<std::int64_t>(g) * N * C + h * dh, N, dh,
                            Eigen::OuterStride<>(C));
            O.noalias() = ConstMatMap<T>(wp, N, N) * V;
        }
    }

    bool ng = has_bias ? t.any_needs_grad({qkv, attn_bias}) : t.any_needs_grad({qkv});
    int qi = qkv.id, bi = has_bias ? attn_bias.id : -1;
    auto bp_fn = [qi, bi, G, N, C, heads, dh, scl, weights](Tape<T>& tp, int id) {
        const Tensor<T>& g_out = tp.grad_buf(id);
        const Tensor<T>& xv2 = tp.value(qi);
        Tensor<T>* gq = tp.needs_grad(qi) ? &tp.grad_buf(qi) : nullptr;
        Tensor<T>* gb = (bi >= 0 && tp.needs_grad(bi)) ? &tp.grad_buf(bi) : nullptr;
        if (!gq && !gb) return;
        const std::int64_t row3c = static_cast<std::int64_t>(3) * C;
        Tensor<T> dS(Shape{N, N});
        for (int g = 0; g < G; ++g) {
            const T* base = xv2.data() + static_cast<std::int64_t>(g) * N * row3c;
            T* gbase = gq ? gq->data() + static_cast<std::int64_t>(g) * N * row3c : nullptr;
            for (int h = 0; h < heads; ++h) {
                ConstStridedMap<T> Q(base + h * dh, N, dh, Eigen::OuterStride<>(row3c));
                ConstStridedMap<T> K(base + C + h * dh, N, dh, Eigen::OuterStride<>(row3c));
                ConstStridedMap<T> V(base + 2 * C + h * dh, N, dh, Eigen::OuterStride<>(row3c));
                const T* wp = weights->data() + ((static_cast<std::int64_t>(g) * heads + h) * N) * N;
                ConstMatMap<T> W(wp, N, N);
                ConstStridedMap<T> dO(g_out.data() + static_cast<std::int64_t>(g) * N * C + h * dh,
                                      N, dh, Eigen::OuterStride<>(C));
                MatMap<T> dSm(dS.data(), N, N);
                dSm.noalias() = dO * V.transpose();
                // softmax backward in place
                for (int i = 0; i < N; ++i) {
                    T* drow = dS.data() + static_cast<std::int64_t>(i) * N;
                    const T* wrow = wp + static_cast<std::int64_t>(i) * N;
                    T dot = T(0);
                    for (int j = 0; j < N; ++j) dot += drow[j] * wrow[j];
                    for (int j = 0; j < N; ++j) drow[j] = wrow[j] * (drow[j] - dot);
                }
                if (gb) {
                    MatMap<T> B(gb->data(), N, N);
                    B += dSm;
                }
                if (gq) {
                    StridedMap<T> dQ(gbase + h * dh, N, dh, Eigen::OuterStride<>(row3c));
                    StridedMap<T> dK(gbase + C + h * dh, N, dh, Eigen::OuterStride<>(row3c));
                    StridedMap<T> dV(gbase + 2 * C + h * dh, N, dh, Eigen::OuterStride<>(row3c));
                    dQ.noalias() += dSm * K * scl;
                    dK.noalias() += dSm.transpose() * Q * scl;
                    dV.noalias() += W.transpose() * dO;
                }
            }
        }
    };
    std::vector<int> parents = has_bias ? std::vector<int>{qi, bi} : std::vector<int>{qi};
    return t.push("qkv_self_attention", std::move(out), std::move(parents),
                  ng ? std::function<void(Tape<T>&, int)>(bp_fn) : nullptr, ng);
}

template <typename T>
struct AttentionParams {
    Var<T> wqkv;  // [C, 3C]
    Var<T> bqkv;  // [3C]
    Var<T> wo;    // [C, C]
    Var<T> bo;    // [C]
    Var<T> attn_bias;  // optional [N, N] additive score bias
};

// Scaled dot-product attention over token groups [G, N, C] with shared
// projections. `mask` is an additive [N, N] tensor (0 / -inf); masked
// positions receive exactly zero weight. Self-attention (q == k == v) runs
// through the fused packed-qkv path.
template <typename T>
Var<T> multihead_attention(Var<T> q_src, Var<T> k_src, Var<T> v_src, int heads,
                           const AttentionParams<T>& p,
                           std::shared_ptr<Tensor<T>> mask = nullptr) {
    const Tensor<T>& xv = q_src.val();
    if (xv.dim() != 3) throw ShapeError("multihead_attention: expects [G, N, C]");
    const int G = xv.size(0), N = xv.size(1), C = xv.size(2);
    if (C % heads != 0)
        throw ConfigError("multihead_attention: dim " + std::to_string(C) +
                          " not divisible by heads " + std::to_string(heads));
    const int dh = C / heads;

    if (q_src.id == k_src.id && k_src.id == v_src.id) {
        Var<T> qkv = linear(q_src, p.wqkv, p.bqkv);  // [G,N,3C]
        Var<T> ctx = qkv_self_attention(qkv, heads, mask, p.attn_bias);
        return linear(ctx, p.wo, p.bo);
    }

    auto project = [&](Var<T> src, int off) {
        Var<T> qkv = linear(src, p.wqkv, p.bqkv);           // [G,N,3C]
        Var<T> part = slice_last(qkv, off * C, C);          // [G,N,C]
        Var<T> split = reshape(part, {G, N, heads, dh});
        return permute(split, {0, 2, 1, 3});                // [G,h,N,dh]
    };
    Var<T> q = project(q_src, 0);
    Var<T> k = project(k_src, 1);
    Var<T> v = project(v_src, 2);

    Var<T> kt = permute(k, {0, 1, 3, 2});                   // [G,h,dh,N]
    Var<T> scores = matmul(q, kt);                          // [G,h,N,N]
    scores = scale(scores, T(1) / std::sqrt(static_cast<T>(dh)));
    if (p.attn_bias.valid()) {
        Var<T> flat = reshape(scores, {G * heads, N, N});
        // broadcast additive bias over groups
        Var<T> biased = add_bias_rows(flat, p.attn_bias);
        scores = reshape(biased, {G, heads, N, N});
    }
    Var<T> weights = mask ? masked_softmax(scores, mask) : softmax(scores, -1);
    Var<T> ctx = matmul(weights, v);                        // [G,h,N,dh]
    Var<T> merged = reshape(permute(ctx, {0, 2, 1, 3}), {G, N, C});
    return linear(merged, p.wo, p.bo);
}

// Adds a [N, M] matrix to every [N, M] slice of x [R, N, M].
template <typename T>
Var<T> add_bias_rows(Var<T> x, Var<T> b) {
    detail::check_same_tape(x, b);
    Tape<T>& t = *x.tape;
    const Tensor<T>&xv = x.val(), &bv = b.val();
    if (xv.dim() != 3 || bv.dim() != 2 || xv.size(1) != bv.size(0) || xv.size(2) != bv.size(1))
        throw ShapeError("add_bias_rows: " + shape_str(xv.shape()) + " vs " + shape_str(bv.shape()));
    const int R = xv.size(0);
    const std::int64_t slice = static_cast<std::int64_t>(bv.numel());
    Tensor<T> out(xv.shape());
    for (int r = 0; r < R; ++r) {
        const T* xp = xv.data() + r * slice;
        T* op = out.data() + r * slice;
        for (std::int64_t j = 0; j < slice; ++j) op[j] = xp[j] + bv[j];
    }
    bool ng = t.any_needs_grad({x, b});
    int xi = x.id, bi = b.id;
    return t.push("add_bias_rows", std::move(out), {xi, bi},
                  ng ? std::function<void(Tape<T>&, int)>([xi, bi, R, slice](Tape<T>& tp, int id) {
                      const Tensor<T>& g = tp.grad_buf(id);
                      if (tp.needs_grad(xi)) {
                          Tensor<T>& gx = tp.grad_buf(xi);
                          for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
                      }
                      if (tp.needs_grad(bi)) {
                          Tensor<T>& gb = tp.grad_buf(bi);
                          for (int r = 0; r < R; ++r) {
                              const T* gp = g.data() + r * slice;
                              for (std::int64_t j = 0; j < slice; ++j) gb[j] += gp[j];
                          }
                      }
                  })
                     : nullptr,
                  ng);
}

// Lower-triangular causal mask: position i may attend to j <= i.
template <typename T>
std::shared_ptr<Tensor<T>> causal_mask(int n) {
    auto m = std::make_shared<Tensor<T>>(Shape{n, n});
    const T neg = -std::numeric_limits<T>::infinity();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (j > i) (*m)[static_cast<std::int64_t>(i) * n + j] = neg;
    return m;
}

}  // namespace vot
