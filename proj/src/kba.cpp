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

#include "kbnet/kba.hpp"

#include "kbnet/nnops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

namespace kbnet {

std::string to_string(NormalizeMode m)
{
    return m == NormalizeMode::softmax ? "softmax" : "none";
}

NormalizeMode parse_normalize_mode(const std::string& s)
{
    if (s == "none") {
        return NormalizeMode::none;
    }
    if (s == "softmax") {
        return NormalizeMode::softmax;
    }
    throw std::invalid_argument("unknown normalize_mode '" + s + "' (expected none or softmax)");
}

std::string to_string(KbaPath p)
{
    return p == KbaPath::fuse_kernels ? "fuse_kernels" : "fuse_outputs";
}

void KbaConfig::validate() const
{
    const std::string where = "KBA(C=" + std::to_string(channels) + ", N=" + std::to_string(n_bases) +
                              ", K=" + std::to_string(kernel_size) + "): ";
    if (channels < kKbaGroupChannels || channels % kKbaGroupChannels != 0) {
        throw ShapeError(where + "channel count must be a multiple of the 4-channel basis group");
    }
    if (n_bases < 2 || n_bases % 2 != 0) {
        throw ShapeError(where + "number of bases must be even (SimpleGate halves the coefficient branch)");
    }
    if (channels % n_bases != 0) {
        throw ShapeError(where + "channel count must be divisible by the number of bases (grouped coefficient conv)");
    }
    if (kernel_size < 1 || kernel_size % 2 == 0) {
        throw ShapeError(where + "kernel size must be odd");
    }
}

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatR<T>>;
template <typename T>
using CMap = Eigen::Map<const MatR<T>>;

template <typename T>
void check_aggregate_shapes(const Tensor4<T>& xe, const Tensor4<T>& coeffs, const Tensor4<T>& bases, int k)
{
    const int C = xe.c();
    if (C % kKbaGroupChannels != 0) {
        throw ShapeError("kba: X_e channel count " + std::to_string(C) + " is not a multiple of 4");
    }
    if (k < 1 || k % 2 == 0) {
        throw ShapeError("kba: kernel size must be odd");
    }
    if (coeffs.n() != xe.n() || coeffs.h() != xe.h() || coeffs.w() != xe.w()) {
        throw ShapeError("kba: coefficient map " + to_string(coeffs.shape()) + " does not match X_e " +
                         to_string(xe.shape()));
    }
    check_same_shape(bases.shape(), Shape{coeffs.c(), C, kKbaGroupChannels, k * k}, "kba bases");
}

// Per-group stacked basis weights: block g is a (4N x 4K^2) matrix whose row
// t*4 + o holds bases[t][4g + o].
template <typename T>
std::vector<T> stack_bases(const Tensor4<T>& bases)
{
    const int N = bases.n();
    const int C = bases.c();
    const std::size_t row = static_cast<std::size_t>(kKbaGroupChannels) * bases.w();
    std::vector<T> out(bases.size());
    for (int g = 0; g < C / kKbaGroupChannels; ++g) {
        for (int t = 0; t < N; ++t) {
            for (int o = 0; o < kKbaGroupChannels; ++o) {
                const T* src = bases.data() + (static_cast<std::size_t>(t) * C + g * kKbaGroupChannels + o) * row;
                T* dst = out.data() +
                         ((static_cast<std::size_t>(g) * N + t) * kKbaGroupChannels + o) * row;
                std::copy_n(src, row, dst);
            }
        }
    }
    return out;
}

ConvSpec unfold_spec(int k)
{
    return ConvSpec::same(kKbaGroupChannels, kKbaGroupChannels, k);
}

} // namespace

template <typename T>
Tensor4<T> fuse_kernels_at(const Tensor4<T>& coeffs, const Tensor4<T>& bases, int b, int i, int j)
{
    if (coeffs.c() != bases.n()) {
        throw ShapeError("fuse_kernels_at: " + std::to_string(coeffs.c()) + " coefficients for " +
                         std::to_string(bases.n()) + " bases");
    }
    Tensor4<T> m(1, bases.c(), bases.h(), bases.w());
    const std::size_t len = m.size();
    for (int t = 0; t < bases.n(); ++t) {
        const T f = coeffs(b, t, i, j);
        const T* src = bases.data() + static_cast<std::size_t>(t) * len;
        for (std::size_t q = 0; q < len; ++q) {
            m[q] += f * src[q];
        }
    }
    return m;
}

template <typename T>
Tensor4<T> aggregate_oracle(const Tensor4<T>& xe, const Tensor4<T>& coeffs, const Tensor4<T>& bases, int k)
{
    check_aggregate_shapes(xe, coeffs, bases, k);
    const int C = xe.c();
    const int r = k / 2;
    Tensor4<T> out(xe.shape());
    for (int b = 0; b < xe.n(); ++b) {
        for (int i = 0; i < xe.h(); ++i) {
            for (int j = 0; j < xe.w(); ++j) {
                const Tensor4<T> m = fuse_kernels_at(coeffs, bases, b, i, j);
                for (int c = 0; c < C; ++c) {
                    const int g = c / kKbaGroupChannels;
                    T acc = 0;
                    for (int ci = 0; ci < kKbaGroupChannels; ++ci) {
                        for (int ky = 0; ky < k; ++ky) {
                            for (int kx = 0; kx < k; ++kx) {
                                const int y = i + ky - r;
                                const int x = j + kx - r;
                                if (y < 0 || y >= xe.h() || x < 0 || x >= xe.w()) {
                                    continue;
                                }
                                acc += m(0, c, ci, ky * k + kx) * xe(b, g * kKbaGroupChannels + ci, y, x);
                            }
                        }
                    }
                    out(b, c, i, j) = acc;
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor4<T> aggregate_fuse_kernels(const Tensor4<T>& xe, const Tensor4<T>& coeffs, const Tensor4<T>& bases, int k)
{
    check_aggregate_shapes(xe, coeffs, bases, k);
    const int N = bases.n();
    const int C = xe.c();
    const int H = xe.h();
    const int W = xe.w();
    const int taps = kKbaGroupChannels * k * k;            // per output channel
    const int group_len = kKbaGroupChannels * taps;        // per group, per basis
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    const ConvSpec unfold = unfold_spec(k);

    Tensor4<T> out(xe.shape());
    std::vector<T> cols(static_cast<std::size_t>(taps) * hw);
    MatR<T> f_row(W, N);
    MatR<T> kernels(W, group_len);
    for (int b = 0; b < xe.n(); ++b) {
        for (int g = 0; g < C / kKbaGroupChannels; ++g) {
            detail::im2col(xe.plane(b, g * kKbaGroupChannels), kKbaGroupChannels, H, W, unfold, H, W, cols.data());
            // Rows of the bank for this group: basis t, channels 4g..4g+3.
            Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>> bank(
                bases.data() + static_cast<std::size_t>(g) * group_len, N, group_len,
                Eigen::OuterStride<>(static_cast<Eigen::Index>(C) * taps));
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    for (int t = 0; t < N; ++t) {
                        f_row(x, t) = coeffs(b, t, y, x);
                    }
                }
                kernels.noalias() = f_row * bank; // one fused kernel per pixel of the row
                for (int x = 0; x < W; ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * W + x;
                    for (int o = 0; o < kKbaGroupChannels; ++o) {
                        const T* m = kernels.data() + static_cast<std::size_t>(x) * group_len + o * taps;
                        T acc = 0;
                        for (int q = 0; q < taps; ++q) {
                            acc += m[q] * cols[static_cast<std::size_t>(q) * hw + p];
                        }
                        out(b, g * kKbaGroupChannels + o, y, x) = acc;
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor4<T> basis_responses(const Tensor4<T>& xe, const Tensor4<T>& bases, int k)
{
    const int N = bases.n();
    const int C = xe.c();
    if (C % kKbaGroupChannels != 0) {
        throw ShapeError("basis_responses: channel count is not a multiple of 4");
    }
    check_same_shape(bases.shape(), Shape{N, C, kKbaGroupChannels, k * k}, "kba bases");
    const int H = xe.h();
    const int W = xe.w();
    const int taps = kKbaGroupChannels * k * k;
    const int rows = kKbaGroupChannels * N;
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    const ConvSpec unfold = unfold_spec(k);
    const std::vector<T> stacked = stack_bases(bases);

    Tensor4<T> y(xe.n(), N * C, H, W);
    std::vector<T> cols(static_cast<std::size_t>(taps) * hw);
    for (int b = 0; b < xe.n(); ++b) {
        for (int g = 0; g < C / kKbaGroupChannels; ++g) {
            detail::im2col(xe.plane(b, g * kKbaGroupChannels), kKbaGroupChannels, H, W, unfold, H, W, cols.data());
            CMap<T> wmat(stacked.data() + static_cast<std::size_t>(g) * rows * taps, rows, taps);
            CMap<T> cmat(cols.data(), taps, static_cast<Eigen::Index>(hw));
            Map<T> ymat(y.plane(b, g * rows), rows, static_cast<Eigen::Index>(hw));
            ymat.noalias() = wmat * cmat;
        }
    }
    return y;
}

template <typename T>
Tensor4<T> aggregate_fuse_outputs(const Tensor4<T>& xe, const Tensor4<T>& coeffs, const Tensor4<T>& bases, int k,
                                  Tensor4<T>* responses_out)
{
    check_aggregate_shapes(xe, coeffs, bases, k);
    const int N = bases.n();
    const int C = xe.c();
    const std::size_t hw = static_cast<std::size_t>(xe.h()) * xe.w();
    Tensor4<T> y = basis_responses(xe, bases, k);
    Tensor4<T> out(xe.shape());
    for (int b = 0; b < xe.n(); ++b) {
        for (int c = 0; c < C; ++c) {
            const int g = c / kKbaGroupChannels;
            const int o = c % kKbaGroupChannels;
            T* dst = out.plane(b, c);
            for (int t = 0; t < N; ++t) {
                const T* f = coeffs.plane(b, t);
                const T* yt = y.plane(b, (g * N + t) * kKbaGroupChannels + o);
                for (std::size_t p = 0; p < hw; ++p) {
                    dst[p] += f[p] * yt[p];
                }
            }
        }
    }
    if (responses_out) {
        *responses_out = std::move(y);
    }
    return out;
}

template <typename T>
AggregateGrads<T> aggregate_backward(const Tensor4<T>& xe, const Tensor4<T>& coeffs, const Tensor4<T>& bases, int k,
                                     const Tensor4<T>& responses, const Tensor4<T>& grad_out)
{
    check_aggregate_shapes(xe, coeffs, bases, k);
    check_same_shape(grad_out.shape(), xe.shape(), "kba grad_out");
    const int N = bases.n();
    const int C = xe.c();
    const int H = xe.h();
    const int W = xe.w();
    const int taps = kKbaGroupChannels * k * k;
    const int rows = kKbaGroupChannels * N;
    const std::size_t hw = static_cast<std::size_t>(H) * W;

    Tensor4<T> recomputed;
    const Tensor4<T>* y = &responses;
    if (responses.empty()) {
        recomputed = basis_responses(xe, bases, k);
        y = &recomputed;
    }

    AggregateGrads<T> g{Tensor4<T>(xe.shape()), Tensor4<T>(coeffs.shape()), Tensor4<T>(bases.shape())};
    Tensor4<T> gy(y->shape());
    // dL/dF[t] = sum_c g[c] * Y_t[c];  dL/dY_t[c] = F[t] * g[c]
    for (int b = 0; b < xe.n(); ++b) {
        for (int c = 0; c < C; ++c) {
            const int grp = c / kKbaGroupChannels;
            const int o = c % kKbaGroupChannels;
            const T* go = grad_out.plane(b, c);
            for (int t = 0; t < N; ++t) {
                const int ch = (grp * N + t) * kKbaGroupChannels + o;
                const T* f = coeffs.plane(b, t);
                const T* yt = y->plane(b, ch);
                T* gf = g.grad_coeffs.plane(b, t);
                T* gyt = gy.plane(b, ch);
                for (std::size_t p = 0; p < hw; ++p) {
                    gf[p] += go[p] * yt[p];
                    gyt[p] = f[p] * go[p];
                }
            }
        }
    }

    const std::vector<T> stacked = stack_bases(bases);
    std::vector<T> gstacked(stacked.size(), T(0));
    std::vector<T> cols(static_cast<std::size_t>(taps) * hw);
    std::vector<T> gcols(static_cast<std::size_t>(taps) * hw);
    const ConvSpec unfold = unfold_spec(k);
    for (int b = 0; b < xe.n(); ++b) {
        for (int grp = 0; grp < C / kKbaGroupChannels; ++grp) {
            detail::im2col(xe.plane(b, grp * kKbaGroupChannels), kKbaGroupChannels, H, W, unfold, H, W, cols.data());
            CMap<T> cmat(cols.data(), taps, static_cast<Eigen::Index>(hw));
            CMap<T> gymat(gy.plane(b, grp * rows), rows, static_cast<Eigen::Index>(hw));
            CMap<T> wmat(stacked.data() + static_cast<std::size_t>(grp) * rows * taps, rows, taps);
            Map<T> gw(gstacked.data() + static_cast<std::size_t>(grp) * rows * taps, rows, taps);
            gw.noalias() += gymat * cmat.transpose();
            Map<T> gc(gcols.data(), taps, static_cast<Eigen::Index>(hw));
            gc.noalias() = wmat.transpose() * gymat;
            detail::col2im_add(gcols.data(), kKbaGroupChannels, H, W, unfold, H, W,
                               g.grad_xe.plane(b, grp * kKbaGroupChannels));
        }
    }
    // Un-stack: row (g, t, o) -> bases[t][4g + o].
    for (int grp = 0; grp < C / kKbaGroupChannels; ++grp) {
        for (int t = 0; t < N; ++t) {
            for (int o = 0; o < kKbaGroupChannels; ++o) {
                const T* src = gstacked.data() + ((static_cast<std::size_t>(grp) * N + t) * kKbaGroupChannels + o) * taps;
                T* dst = g.grad_bases.data() +
                         (static_cast<std::size_t>(t) * C + grp * kKbaGroupChannels + o) * taps;
                std::copy_n(src, taps, dst);
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------

template <typename T>
KbaParams<T>::KbaParams(const KbaConfig& cfg)
    : config((cfg.validate(), cfg)),
      bases(cfg.n_bases, cfg.channels, kKbaGroupChannels, cfg.kernel_size * cfg.kernel_size),
      coeff_conv1(ConvSpec::same(cfg.channels, cfg.n_bases, 3, cfg.n_bases)),
      coeff_conv2(ConvSpec::same(cfg.n_bases / 2, cfg.n_bases, 3)),
      feature_transform(ConvSpec::same(cfg.channels, cfg.channels, 1))
{
}

template <typename T>
void init_kba(KbaParams<T>& p, Rng& rng)
{
    const double fan_in = kKbaGroupChannels * p.kernel_size() * p.kernel_size();
    const double bound = 1.0 / std::sqrt(fan_in) / std::sqrt(static_cast<double>(p.n_bases()));
    fill_uniform(p.bases, rng, -bound, bound);
    init_conv(p.coeff_conv1, rng);
    init_conv(p.coeff_conv2, rng, 0.1);
    init_conv(p.feature_transform, rng);
}

template <typename T>
Tensor4<T> softmax_channels(const Tensor4<T>& logits)
{
    Tensor4<T> out(logits.shape());
    const std::size_t hw = static_cast<std::size_t>(logits.h()) * logits.w();
    const int N = logits.c();
    std::vector<double> e(N);
    for (int b = 0; b < logits.n(); ++b) {
        for (std::size_t p = 0; p < hw; ++p) {
            double mx = -INFINITY;
            for (int t = 0; t < N; ++t) {
                mx = std::max(mx, static_cast<double>(logits.plane(b, t)[p]));
            }
            double total = 0.0;
            for (int t = 0; t < N; ++t) {
                e[t] = std::exp(static_cast<double>(logits.plane(b, t)[p]) - mx);
                total += e[t];
            }
            for (int t = 0; t < N; ++t) {
                out.plane(b, t)[p] = static_cast<T>(e[t] / total);
            }
        }
    }
    return out;
}

template <typename T>
Tensor4<T> predict_coefficients(const Tensor4<T>& x, const KbaParams<T>& p, KbaCache<T>* cache)
{
    if (x.c() != p.channels()) {
        throw ShapeError("kba: input has " + std::to_string(x.c()) + " channels, module expects " +
                         std::to_string(p.channels()));
    }
    Tensor4<T> hidden = p.coeff_conv1.forward(x);
    Tensor4<T> gated = simple_gate_forward(hidden);
    Tensor4<T> coeffs = p.coeff_conv2.forward(gated);
    if (p.config.normalize_mode == NormalizeMode::softmax) {
        coeffs = softmax_channels(coeffs);
    }
    if (cache) {
        cache->coeff_hidden = std::move(hidden);
        cache->coeff_gated = std::move(gated);
        cache->coeffs = coeffs;
    }
    return coeffs;
}

template <typename T>
Tensor4<T> kba_oracle(const Tensor4<T>& x, const KbaParams<T>& p)
{
    const Tensor4<T> coeffs = predict_coefficients(x, p);
    const Tensor4<T> xe = p.feature_transform.forward(x);
    return aggregate_oracle(xe, coeffs, p.bases, p.kernel_size());
}

template <typename T>
Tensor4<T> kba_forward(const Tensor4<T>& x, const KbaParams<T>& p, KbaPath path, KbaCache<T>* cache)
{
    Tensor4<T> coeffs = predict_coefficients(x, p, cache);
    Tensor4<T> xe = p.feature_transform.forward(x);
    Tensor4<T> out;
    if (path == KbaPath::fuse_outputs) {
        out = aggregate_fuse_outputs(xe, coeffs, p.bases, p.kernel_size(), cache ? &cache->responses : nullptr);
    } else {
        out = aggregate_fuse_kernels(xe, coeffs, p.bases, p.kernel_size());
        if (cache) {
            cache->responses = Tensor4<T>();
        }
    }
    if (cache) {
        cache->x = x;
        cache->xe = std::move(xe);
    }
    return out;
}

template <typename T>
Tensor4<T> kba_backward(const KbaParams<T>& p, const KbaCache<T>& cache, const Tensor4<T>& grad_out,
                        KbaParams<T>& grads)
{
    AggregateGrads<T> ag =
        aggregate_backward(cache.xe, cache.coeffs, p.bases, p.kernel_size(), cache.responses, grad_out);
    add_inplace(grads.bases, ag.grad_bases);

    Tensor4<T> g_logits = std::move(ag.grad_coeffs);
    if (p.config.normalize_mode == NormalizeMode::softmax) {
        // dL/dz_t = F_t * (dL/dF_t - sum_s F_s dL/dF_s)
        const Tensor4<T>& f = cache.coeffs;
        const std::size_t hw = static_cast<std::size_t>(f.h()) * f.w();
        for (int b = 0; b < f.n(); ++b) {
            for (std::size_t q = 0; q < hw; ++q) {
                double inner = 0.0;
                for (int t = 0; t < f.c(); ++t) {
                    inner += static_cast<double>(f.plane(b, t)[q]) * g_logits.plane(b, t)[q];
                }
                for (int t = 0; t < f.c(); ++t) {
                    T& gt = g_logits.plane(b, t)[q];
                    gt = static_cast<T>(f.plane(b, t)[q] * (gt - inner));
                }
            }
        }
    }
    Tensor4<T> g_gated = p.coeff_conv2.backward(cache.coeff_gated, g_logits, grads.coeff_conv2);
    Tensor4<T> g_hidden = simple_gate_backward(cache.coeff_hidden, g_gated);
    Tensor4<T> gx = p.coeff_conv1.backward(cache.x, g_hidden, grads.coeff_conv1);
    add_inplace(gx, p.feature_transform.backward(cache.x, ag.grad_xe, grads.feature_transform));
    return gx;
}

#define KBNET_INSTANTIATE(T)                                                                                          \
    template struct KbaParams<T>;                                                                                     \
    template void init_kba(KbaParams<T>&, Rng&);                                                                      \
    template Tensor4<T> fuse_kernels_at(const Tensor4<T>&, const Tensor4<T>&, int, int, int);                         \
    template Tensor4<T> aggregate_oracle(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&, int);               \
    template Tensor4<T> aggregate_fuse_kernels(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&, int);         \
    template Tensor4<T> basis_responses(const Tensor4<T>&, const Tensor4<T>&, int);                                   \
    template Tensor4<T> aggregate_fuse_outputs(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&, int,          \
                                               Tensor4<T>*);                                                          \
    template AggregateGrads<T> aggregate_backward(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&, int,       \
                                                  const Tensor4<T>&, const Tensor4<T>&);                              \
    template Tensor4<T> predict_coefficients(const Tensor4<T>&, const KbaParams<T>&, KbaCache<T>*);                   \
    template Tensor4<T> softmax_channels(const Tensor4<T>&);                                                          \
    template Tensor4<T> kba_oracle(const Tensor4<T>&, const KbaParams<T>&);                                           \
    template Tensor4<T> kba_forward(const Tensor4<T>&, const KbaParams<T>&, KbaPath, KbaCache<T>*);                   \
    template Tensor4<T> kba_backward(const KbaParams<T>&, const KbaCache<T>&, const Tensor4<T>&, KbaParams<T>&);

KBNET_INSTANTIATE(float)
KBNET_INSTANTIATE(double)

#undef KBNET_INSTANTIATE

} // namespace kbnet
