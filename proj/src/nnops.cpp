/********************************************************************************
* Copyright 2026 The kbnet Authors. All Rights Reserved.
*
* Licensed under the Apache License, Version 2.0 (the "License");
* you may not use this file except in compliance with the License.
* You may obtain a copy of the License at
*
*    http://www.apache.org/licenses/LICENSE-2.0
*
* Unless required by applicable law or agreed to in writing, software
* distributed under the License is distributed on an "AS IS" BASIS,
* WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
* See the License for the specific language governing permissions and
* limitations under the License.
********************************************************************************/

#include "kbnet/nnops.hpp"

#include <cmath>

namespace kbnet {

template <typename T>
Tensor4<T> simple_gate_forward(const Tensor4<T>& x)
{
    if (x.c() % 2 != 0) {
        throw ShapeError("simple_gate: channel count " + std::to_string(x.c()) + " is odd");
    }
    const int half = x.c() / 2;
    Tensor4<T> out(x.n(), half, x.h(), x.w());
    const std::size_t len = static_cast<std::size_t>(half) * x.h() * x.w();
    for (int b = 0; b < x.n(); ++b) {
        const T* a = x.plane(b, 0);
        const T* g = x.plane(b, half);
        T* o = out.plane(b, 0);
        for (std::size_t i = 0; i < len; ++i) {
            o[i] = a[i] * g[i];
        }
    }
    return out;
}

template <typename T>
Tensor4<T> simple_gate_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out)
{
    if (x.c() % 2 != 0) {
        throw ShapeError("simple_gate: channel count " + std::to_string(x.c()) + " is odd");
    }
    const int half = x.c() / 2;
    check_same_shape(grad_out.shape(), Shape{x.n(), half, x.h(), x.w()}, "simple_gate backward");
    Tensor4<T> gx(x.shape());
    const std::size_t len = static_cast<std::size_t>(half) * x.h() * x.w();
    for (int b = 0; b < x.n(); ++b) {
        const T* a = x.plane(b, 0);
        const T* g = x.plane(b, half);
        const T* go = grad_out.plane(b, 0);
        T* ga = gx.plane(b, 0);
        T* gg = gx.plane(b, half);
        for (std::size_t i = 0; i < len; ++i) {
            ga[i] = go[i] * g[i];
            gg[i] = go[i] * a[i];
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------

template <typename T>
LayerNormParams<T>::LayerNormParams(int channels, double eps)
    : gamma(1, channels, 1, 1, T(1)), beta(1, channels, 1, 1, T(0)), epsilon(eps)
{
    if (eps <= 0.0) {
        throw ShapeError("layer_norm2d: epsilon must be positive");
    }
}

template <typename T>
Tensor4<T> layer_norm2d_forward(const Tensor4<T>& x, const LayerNormParams<T>& p, LayerNormCache<T>* cache)
{
    const int C = x.c();
    if (p.channels() != C) {
        throw ShapeError("layer_norm2d: input has " + std::to_string(C) + " channels, params have " +
                         std::to_string(p.channels()));
    }
    const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
    Tensor4<T> out(x.shape());
    Tensor4<T> xhat(x.shape());
    std::vector<T> inv_std(static_cast<std::size_t>(x.n()) * hw);
    std::vector<double> mean(hw);
    std::vector<double> var(hw);

    for (int b = 0; b < x.n(); ++b) {
        std::fill(mean.begin(), mean.end(), 0.0);
        std::fill(var.begin(), var.end(), 0.0);
        for (int c = 0; c < C; ++c) {
            const T* src = x.plane(b, c);
            for (std::size_t i = 0; i < hw; ++i) {
                mean[i] += src[i];
            }
        }
        for (std::size_t i = 0; i < hw; ++i) {
            mean[i] /= C;
        }
        for (int c = 0; c < C; ++c) {
            const T* src = x.plane(b, c);
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = src[i] - mean[i];
                var[i] += d * d;
            }
        }
        T* istd = inv_std.data() + b * hw;
        for (std::size_t i = 0; i < hw; ++i) {
            istd[i] = static_cast<T>(1.0 / std::sqrt(var[i] / C + p.epsilon));
        }
        for (int c = 0; c < C; ++c) {
            const T* src = x.plane(b, c);
            T* xh = xhat.plane(b, c);
            T* o = out.plane(b, c);
            const T g = p.gamma[c];
            const T be = p.beta[c];
            for (std::size_t i = 0; i < hw; ++i) {
                xh[i] = static_cast<T>((src[i] - mean[i]) * istd[i]);
                o[i] = g * xh[i] + be;
            }
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

template <typename T>
Tensor4<T> layer_norm2d_backward(const LayerNormParams<T>& p, const LayerNormCache<T>& cache,
                                 const Tensor4<T>& grad_out, LayerNormParams<T>& grads)
{
    const Tensor4<T>& xhat = cache.xhat;
    check_same_shape(grad_out.shape(), xhat.shape(), "layer_norm2d backward");
    const int C = xhat.c();
    const std::size_t hw = static_cast<std::size_t>(xhat.h()) * xhat.w();
    Tensor4<T> gx(xhat.shape());
    std::vector<double> mean_g(hw);
    std::vector<double> mean_gx(hw);

    for (int c = 0; c < C; ++c) {
        double gg = 0.0;
        double gb = 0.0;
        for (int b = 0; b < xhat.n(); ++b) {
            const T* g = grad_out.plane(b, c);
            const T* xh = xhat.plane(b, c);
            for (std::size_t i = 0; i < hw; ++i) {
                gg += g[i] * xh[i];
                gb += g[i];
            }
        }
        grads.gamma[c] += static_cast<T>(gg);
        grads.beta[c] += static_cast<T>(gb);
    }

    for (int b = 0; b < xhat.n(); ++b) {
        std::fill(mean_g.begin(), mean_g.end(), 0.0);
        std::fill(mean_gx.begin(), mean_gx.end(), 0.0);
        for (int c = 0; c < C; ++c) {
            const T* g = grad_out.plane(b, c);
            const T* xh = xhat.plane(b, c);
            const T gam = p.gamma[c];
            for (std::size_t i = 0; i < hw; ++i) {
                const double gxh = static_cast<double>(g[i]) * gam;
                mean_g[i] += gxh;
                mean_gx[i] += gxh * xh[i];
            }
        }
        for (std::size_t i = 0; i < hw; ++i) {
            mean_g[i] /= C;
            mean_gx[i] /= C;
        }
        const T* istd = cache.inv_std.data() + b * hw;
        for (int c = 0; c < C; ++c) {
            const T* g = grad_out.plane(b, c);
            const T* xh = xhat.plane(b, c);
            T* dst = gx.plane(b, c);
            const T gam = p.gamma[c];
            for (std::size_t i = 0; i < hw; ++i) {
                dst[i] = static_cast<T>(istd[i] * (static_cast<double>(g[i]) * gam - mean_g[i] - xh[i] * mean_gx[i]));
            }
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------

namespace {

int se_hidden_width(int channels, int r)
{
    if (r < 1 || channels % r != 0) {
        throw ShapeError("channel_attention: " + std::to_string(channels) + " channels not divisible by reduction " +
                         std::to_string(r));
    }
    return channels / r;
}

} // namespace

template <typename T>
ChannelAttentionParams<T>::ChannelAttentionParams(int channels, int r)
    : reduce(ConvSpec::same(channels, se_hidden_width(channels, r), 1)),
      expand(ConvSpec::same(se_hidden_width(channels, r), channels, 1)), reduction(r)
{
}

template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x)
{
    Tensor4<T> out(x.n(), x.c(), 1, 1);
    const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
    for (int b = 0; b < x.n(); ++b) {
        for (int c = 0; c < x.c(); ++c) {
            const T* src = x.plane(b, c);
            double acc = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
                acc += src[i];
            }
            out(b, c, 0, 0) = static_cast<T>(acc / static_cast<double>(hw));
        }
    }
    return out;
}

template <typename T>
Tensor4<T> channel_attention_forward(const Tensor4<T>& x, const ChannelAttentionParams<T>& p,
                                     ChannelAttentionCache<T>* cache)
{
    if (x.c() != p.channels()) {
        throw ShapeError("channel_attention: input has " + std::to_string(x.c()) + " channels, params have " +
                         std::to_string(p.channels()));
    }
    Tensor4<T> pooled = global_avg_pool(x);
    Tensor4<T> hidden_in = p.reduce.forward(pooled);
    Tensor4<T> hidden = hidden_in;
    for (auto& v : hidden.span()) {
        v = v > T(0) ? v : T(0);
    }
    Tensor4<T> gate = p.expand.forward(hidden);
    for (auto& v : gate.span()) {
        v = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
    }
    Tensor4<T> out(x.shape());
    const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
    for (int b = 0; b < x.n(); ++b) {
        for (int c = 0; c < x.c(); ++c) {
            const T s = gate(b, c, 0, 0);
            const T* src = x.plane(b, c);
            T* o = out.plane(b, c);
            for (std::size_t i = 0; i < hw; ++i) {
                o[i] = src[i] * s;
            }
        }
    }
    if (cache) {
        cache->x = x;
        cache->pooled = std::move(pooled);
        cache->hidden_in = std::move(hidden_in);
        cache->hidden = std::move(hidden);
        cache->gate = std::move(gate);
    }
    return out;
}

template <typename T>
Tensor4<T> channel_attention_backward(const ChannelAttentionParams<T>& p, const ChannelAttentionCache<T>& cache,
                                      const Tensor4<T>& grad_out, ChannelAttentionParams<T>& grads)
{
    const Tensor4<T>& x = cache.x;
    check_same_shape(grad_out.shape(), x.shape(), "channel_attention backward");
    const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
    Tensor4<T> gx(x.shape());
    Tensor4<T> g_pre_sigmoid(cache.gate.shape());
    for (int b = 0; b < x.n(); ++b) {
        for (int c = 0; c < x.c(); ++c) {
            const T s = cache.gate(b, c, 0, 0);
            const T* g = grad_out.plane(b, c);
            const T* src = x.plane(b, c);
            T* dst = gx.plane(b, c);
            double gs = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
                dst[i] = g[i] * s;
                gs += static_cast<double>(g[i]) * src[i];
            }
            g_pre_sigmoid(b, c, 0, 0) = static_cast<T>(gs * s * (1.0 - s));
        }
    }
    Tensor4<T> g_hidden = p.expand.backward(cache.hidden, g_pre_sigmoid, grads.expand);
    for (std::size_t i = 0; i < g_hidden.size(); ++i) {
        if (!(cache.hidden_in[i] > T(0))) {
            g_hidden[i] = T(0);
        }
    }
    Tensor4<T> g_pooled = p.reduce.backward(cache.pooled, g_hidden, grads.reduce);
    for (int b = 0; b < x.n(); ++b) {
        for (int c = 0; c < x.c(); ++c) {
            const T share = static_cast<T>(g_pooled(b, c, 0, 0) / static_cast<double>(hw));
            T* dst = gx.plane(b, c);
            for (std::size_t i = 0; i < hw; ++i) {
                dst[i] += share;
            }
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> pixel_shuffle(const Tensor4<T>& x, int r)
{
    if (r < 1 || x.c() % (r * r) != 0) {
        throw ShapeError("pixel_shuffle: " + std::to_string(x.c()) + " channels not divisible by r^2 = " +
                         std::to_string(r * r));
    }
    const int co = x.c() / (r * r);
    Tensor4<T> out(x.n(), co, x.h() * r, x.w() * r);
    for (int b = 0; b < x.n(); ++b) {
        for (int c = 0; c < co; ++c) {
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < r; ++j) {
                    const T* src = x.plane(b, c * r * r + i * r + j);
                    for (int y = 0; y < x.h(); ++y) {
                        T* dst = &out(b, c, y * r + i, 0);
                        const T* row = src + static_cast<std::size_t>(y) * x.w();
                        for (int xx = 0; xx < x.w(); ++xx) {
                            dst[xx * r + j] = row[xx];
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor4<T> pixel_unshuffle(const Tensor4<T>& x, int r)
{
    if (r < 1 || x.h() % r != 0 || x.w() % r != 0) {
        throw ShapeError("pixel_unshuffle: spatial size " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                         " not divisible by " + std::to_string(r));
    }
    const int ho = x.h() / r;
    const int wo = x.w() / r;
    Tensor4<T> out(x.n(), x.c() * r * r, ho, wo);
    for (int b = 0; b < x.n(); ++b) {
        for (int c = 0; c < x.c(); ++c) {
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < r; ++j) {
                    T* dst = out.plane(b, c * r * r + i * r + j);
                    for (int y = 0; y < ho; ++y) {
                        const T* row = x.plane(b, c) + static_cast<std::size_t>(y * r + i) * x.w();
                        T* out_row = dst + static_cast<std::size_t>(y) * wo;
                        for (int xx = 0; xx < wo; ++xx) {
                            out_row[xx] = row[xx * r + j];
                        }
                    }
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

template <typename T>
FfnParams<T>::FfnParams(int channels, int e)
    : norm(channels), expand(ConvSpec::same(channels, 2 * e * channels, 1)),
      project(ConvSpec::same(e * channels, channels, 1)), expansion(e)
{
    if (e < 1) {
        throw ShapeError("ffn: expansion factor must be >= 1");
    }
}

template <typename T>
Tensor4<T> ffn_forward(const Tensor4<T>& x, const FfnParams<T>& p, FfnCache<T>* cache)
{
    LayerNormCache<T> ln;
    Tensor4<T> normed = layer_norm2d_forward(x, p.norm, cache ? &ln : nullptr);
    Tensor4<T> expanded = p.expand.forward(normed);
    Tensor4<T> gated = simple_gate_forward(expanded);
    Tensor4<T> out = p.project.forward(gated);
    add_inplace(out, x);
    if (cache) {
        cache->norm = std::move(ln);
        cache->normed = std::move(normed);
        cache->expanded = std::move(expanded);
        cache->gated = std::move(gated);
    }
    return out;
}

template <typename T>
Tensor4<T> ffn_backward(const FfnParams<T>& p, const FfnCache<T>& cache, const Tensor4<T>& grad_out,
                        FfnParams<T>& grads)
{
    Tensor4<T> g_gated = p.project.backward(cache.gated, grad_out, grads.project);
    Tensor4<T> g_expanded = simple_gate_backward(cache.expanded, g_gated);
    Tensor4<T> g_normed = p.expand.backward(cache.normed, g_expanded, grads.expand);
    Tensor4<T> gx = layer_norm2d_backward(p.norm, cache.norm, g_normed, grads.norm);
    add_inplace(gx, grad_out);
    return gx;
}

template <typename T>
void init_ffn(FfnParams<T>& p, Rng& rng)
{
    init_conv(p.expand, rng);
    init_conv(p.project, rng);
}

#define KBNET_INSTANTIATE(T)                                                                                        \
    template Tensor4<T> simple_gate_forward(const Tensor4<T>&);                                                     \
    template Tensor4<T> simple_gate_backward(const Tensor4<T>&, const Tensor4<T>&);                                 \
    template struct LayerNormParams<T>;                                                                             \
    template Tensor4<T> layer_norm2d_forward(const Tensor4<T>&, const LayerNormParams<T>&, LayerNormCache<T>*);      \
    template Tensor4<T> layer_norm2d_backward(const LayerNormParams<T>&, const LayerNormCache<T>&, const Tensor4<T>&, \
                                              LayerNormParams<T>&);                                                 \
    template struct ChannelAttentionParams<T>;                                                                      \
    template Tensor4<T> global_avg_pool(const Tensor4<T>&);                                                         \
    template Tensor4<T> channel_attention_forward(const Tensor4<T>&, const ChannelAttentionParams<T>&,               \
                                                  ChannelAttentionCache<T>*);                                       \
    template Tensor4<T> channel_attention_backward(const ChannelAttentionParams<T>&, const ChannelAttentionCache<T>&, \
                                                   const Tensor4<T>&, ChannelAttentionParams<T>&);                  \
    template Tensor4<T> pixel_shuffle(const Tensor4<T>&, int);                                                      \
    template Tensor4<T> pixel_unshuffle(const Tensor4<T>&, int);                                                    \
    template struct FfnParams<T>;                                                                                   \
    template Tensor4<T> ffn_forward(const Tensor4<T>&, const FfnParams<T>&, FfnCache<T>*);                          \
    template Tensor4<T> ffn_backward(const FfnParams<T>&, const FfnCache<T>&, const Tensor4<T>&, FfnParams<T>&);    \
    template void init_ffn(FfnParams<T>&, Rng&);

KBNET_INSTANTIATE(float)
KBNET_INSTANTIATE(double)

#undef KBNET_INSTANTIATE

} // namespace kbnet
