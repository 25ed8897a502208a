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

#include "kbnet/conv.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <vector>

namespace kbnet {

void ConvSpec::validate() const
{
    auto fail = [&](const std::string& msg) {
        throw ShapeError("ConvSpec(" + std::to_string(in_channels) + "->" + std::to_string(out_channels) + ", k=" +
                         std::to_string(kernel_size) + ", groups=" + std::to_string(groups) + "): " + msg);
    };
    if (in_channels < 1 || out_channels < 1 || groups < 1 || kernel_size < 1) {
        fail("channels, groups and kernel size must be positive");
    }
    if (in_channels % groups != 0 || out_channels % groups != 0) {
        fail("channel counts must be divisible by groups");
    }
    if (stride != 1 && stride != 2) {
        fail("stride must be 1 or 2");
    }
    if (padding < 0) {
        fail("padding must be non-negative");
    }
}

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatR<T>>;
template <typename T>
using CMap = Eigen::Map<const MatR<T>>;

// Output indices o for which o*stride - pad + k lands in [0, in).
struct Range {
    int lo;
    int hi;
};

Range valid_range(int k, int stride, int pad, int in, int out)
{
    // o*stride >= pad - k  and  o*stride < in + pad - k
    int lo = pad - k <= 0 ? 0 : (pad - k + stride - 1) / stride;
    int hi_num = in + pad - k;
    int hi = hi_num <= 0 ? 0 : (hi_num + stride - 1) / stride;
    return {std::min(lo, out), std::clamp(hi, 0, out)};
}

bool is_pointwise(const ConvSpec& s)
{
    return s.kernel_size == 1 && s.stride == 1 && s.padding == 0;
}

bool is_depthwise(const ConvSpec& s)
{
    return s.groups == s.in_channels && s.groups == s.out_channels;
}

template <typename T>
void depthwise_forward(const Tensor4<T>& x, const Tensor4<T>& weight, const ConvSpec& s, Tensor4<T>& out)
{
    const int k = s.kernel_size;
    const int h = x.h(), w = x.w(), ho = out.h(), wo = out.w();
    for (int b = 0; b < x.n(); ++b) {
        for (int c = 0; c < x.c(); ++c) {
            const T* in = x.plane(b, c);
            T* o = out.plane(b, c);
            const T* wk = weight.data() + static_cast<std::size_t>(c) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                const Range ry = valid_range(ky, s.stride, s.padding, h, ho);
                for (int kx = 0; kx < k; ++kx) {
                    const Range rx = valid_range(kx, s.stride, s.padding, w, wo);
                    const T wv = wk[ky * k + kx];
                    for (int oy = ry.lo; oy < ry.hi; ++oy) {
                        const T* in_row = in + static_cast<std::size_t>(oy * s.stride - s.padding + ky) * w;
                        T* out_row = o + static_cast<std::size_t>(oy) * wo;
                        for (int ox = rx.lo; ox < rx.hi; ++ox) {
                            out_row[ox] += wv * in_row[ox * s.stride - s.padding + kx];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void depthwise_backward(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& go, const ConvSpec& s,
                        Tensor4<T>* gx, Tensor4<T>& gw)
{
    const int k = s.kernel_size;
    const int h = x.h(), w = x.w(), ho = go.h(), wo = go.w();
    for (int b = 0; b < x.n(); ++b) {
        for (int c = 0; c < x.c(); ++c) {
            const T* in = x.plane(b, c);
            const T* g = go.plane(b, c);
            T* gin = gx ? gx->plane(b, c) : nullptr;
            const T* wk = weight.data() + static_cast<std::size_t>(c) * k * k;
            T* gwk = gw.data() + static_cast<std::size_t>(c) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                const Range ry = valid_range(ky, s.stride, s.padding, h, ho);
                for (int kx = 0; kx < k; ++kx) {
                    const Range rx = valid_range(kx, s.stride, s.padding, w, wo);
                    const T wv = wk[ky * k + kx];
                    T acc = 0;
                    for (int oy = ry.lo; oy < ry.hi; ++oy) {
                        const std::size_t in_off = static_cast<std::size_t>(oy * s.stride - s.padding + ky) * w;
                        const T* g_row = g + static_cast<std::size_t>(oy) * wo;
                        const T* in_row = in + in_off;
                        for (int ox = rx.lo; ox < rx.hi; ++ox) {
                            acc += g_row[ox] * in_row[ox * s.stride - s.padding + kx];
                        }
                        if (gin) {
                            T* gin_row = gin + in_off;
                            for (int ox = rx.lo; ox < rx.hi; ++ox) {
                                gin_row[ox * s.stride - s.padding + kx] += wv * g_row[ox];
                            }
                        }
                    }
                    gwk[ky * k + kx] += acc;
                }
            }
        }
    }
}

template <typename T>
void check_inputs(const Tensor4<T>& x, const Tensor4<T>& weight, const ConvSpec& spec)
{
    spec.validate();
    if (x.c() != spec.in_channels) {
        throw ShapeError("conv2d: input has " + std::to_string(x.c()) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
    }
    check_same_shape(weight.shape(), spec.weight_shape(), "conv2d weight");
    if (spec.out_size(x.h()) < 1 || spec.out_size(x.w()) < 1) {
        throw ShapeError("conv2d: input " + to_string(x.shape()) + " too small for kernel");
    }
}

} // namespace

namespace detail {

template <typename T>
void im2col(const T* src, int channels, int h, int w, const ConvSpec& s, int ho, int wo, T* cols)
{
    const int k = s.kernel_size;
    const std::size_t hwo = static_cast<std::size_t>(ho) * wo;
    for (int c = 0; c < channels; ++c) {
        const T* plane = src + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            const Range ry = valid_range(ky, s.stride, s.padding, h, ho);
            for (int kx = 0; kx < k; ++kx) {
                const Range rx = valid_range(kx, s.stride, s.padding, w, wo);
                T* row = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hwo;
                std::fill(row, row + hwo, T(0));
                for (int oy = ry.lo; oy < ry.hi; ++oy) {
                    const T* in_row = plane + static_cast<std::size_t>(oy * s.stride - s.padding + ky) * w;
                    T* out_row = row + static_cast<std::size_t>(oy) * wo;
                    if (s.stride == 1) {
                        const int off = kx - s.padding;
                        for (int ox = rx.lo; ox < rx.hi; ++ox) {
                            out_row[ox] = in_row[ox + off];
                        }
                    } else {
                        for (int ox = rx.lo; ox < rx.hi; ++ox) {
                            out_row[ox] = in_row[ox * s.stride - s.padding + kx];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, int channels, int h, int w, const ConvSpec& s, int ho, int wo, T* dst)
{
    const int k = s.kernel_size;
    const std::size_t hwo = static_cast<std::size_t>(ho) * wo;
    for (int c = 0; c < channels; ++c) {
        T* plane = dst + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            const Range ry = valid_range(ky, s.stride, s.padding, h, ho);
            for (int kx = 0; kx < k; ++kx) {
                const Range rx = valid_range(kx, s.stride, s.padding, w, wo);
                const T* row = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hwo;
                for (int oy = ry.lo; oy < ry.hi; ++oy) {
                    T* in_row = plane + static_cast<std::size_t>(oy * s.stride - s.padding + ky) * w;
                    const T* col_row = row + static_cast<std::size_t>(oy) * wo;
                    for (int ox = rx.lo; ox < rx.hi; ++ox) {
                        in_row[ox * s.stride - s.padding + kx] += col_row[ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

using detail::col2im_add;
using detail::im2col;

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const Tensor4<T>& weight, const std::type_identity_t<Tensor4<T>>* bias,
                          const ConvSpec& spec)
{
    check_inputs(x, weight, spec);
    const int ho = spec.out_size(x.h());
    const int wo = spec.out_size(x.w());
    Tensor4<T> out(x.n(), spec.out_channels, ho, wo);
    const std::size_t hwo = static_cast<std::size_t>(ho) * wo;

    if (is_depthwise(spec)) {
        depthwise_forward(x, weight, spec, out);
    } else {
        const int cin_g = spec.in_per_group();
        const int cout_g = spec.out_per_group();
        const int kk = spec.kernel_size * spec.kernel_size;
        const int rows = cin_g * kk;
        std::vector<T> cols;
        if (!is_pointwise(spec)) {
            cols.resize(static_cast<std::size_t>(rows) * hwo);
        }
        for (int b = 0; b < x.n(); ++b) {
            for (int g = 0; g < spec.groups; ++g) {
                const T* src = x.plane(b, g * cin_g);
                const T* col_ptr = src;
                if (!is_pointwise(spec)) {
                    im2col(src, cin_g, x.h(), x.w(), spec, ho, wo, cols.data());
                    col_ptr = cols.data();
                }
                CMap<T> wmat(weight.data() + static_cast<std::size_t>(g) * cout_g * rows, cout_g, rows);
                CMap<T> cmat(col_ptr, rows, static_cast<Eigen::Index>(hwo));
                Map<T> omat(out.plane(b, g * cout_g), cout_g, static_cast<Eigen::Index>(hwo));
                omat.noalias() = wmat * cmat;
            }
        }
    }

    if (bias != nullptr) {
        check_same_shape(bias->shape(), spec.bias_shape(), "conv2d bias");
        for (int b = 0; b < x.n(); ++b) {
            for (int c = 0; c < spec.out_channels; ++c) {
                T* o = out.plane(b, c);
                const T bv = (*bias)[c];
                for (std::size_t i = 0; i < hwo; ++i) {
                    o[i] += bv;
                }
            }
        }
    }
    return out;
}

template <typename T>
void conv2d_backward_accumulate(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& grad_out,
                                const ConvSpec& spec, std::type_identity_t<Tensor4<T>>* grad_x, Tensor4<T>& grad_w,
                                std::type_identity_t<Tensor4<T>>* grad_b)
{
    check_inputs(x, weight, spec);
    const int ho = spec.out_size(x.h());
    const int wo = spec.out_size(x.w());
    check_same_shape(grad_out.shape(), Shape{x.n(), spec.out_channels, ho, wo}, "conv2d grad_out");
    check_same_shape(grad_w.shape(), weight.shape(), "conv2d grad_w");
    if (grad_x) {
        check_same_shape(grad_x->shape(), x.shape(), "conv2d grad_x");
    }
    const std::size_t hwo = static_cast<std::size_t>(ho) * wo;

    if (grad_b) {
        check_same_shape(grad_b->shape(), spec.bias_shape(), "conv2d grad_b");
        for (int c = 0; c < spec.out_channels; ++c) {
            double acc = 0.0;
            for (int b = 0; b < x.n(); ++b) {
                const T* g = grad_out.plane(b, c);
                for (std::size_t i = 0; i < hwo; ++i) {
                    acc += g[i];
                }
            }
            (*grad_b)[c] += static_cast<T>(acc);
        }
    }

    if (is_depthwise(spec)) {
        depthwise_backward(x, weight, grad_out, spec, grad_x, grad_w);
        return;
    }

    const int cin_g = spec.in_per_group();
    const int cout_g = spec.out_per_group();
    const int kk = spec.kernel_size * spec.kernel_size;
    const int rows = cin_g * kk;
    const bool pointwise = is_pointwise(spec);
    std::vector<T> cols;
    std::vector<T> gcols;
    if (!pointwise) {
        cols.resize(static_cast<std::size_t>(rows) * hwo);
        gcols.resize(static_cast<std::size_t>(rows) * hwo);
    }
    for (int b = 0; b < x.n(); ++b) {
        for (int g = 0; g < spec.groups; ++g) {
            const T* src = x.plane(b, g * cin_g);
            const T* col_ptr = src;
            if (!pointwise) {
                im2col(src, cin_g, x.h(), x.w(), spec, ho, wo, cols.data());
                col_ptr = cols.data();
            }
            CMap<T> cmat(col_ptr, rows, static_cast<Eigen::Index>(hwo));
            CMap<T> gmat(grad_out.plane(b, g * cout_g), cout_g, static_cast<Eigen::Index>(hwo));
            Map<T> gw(grad_w.data() + static_cast<std::size_t>(g) * cout_g * rows, cout_g, rows);
            gw.noalias() += gmat * cmat.transpose();
            if (grad_x) {
                CMap<T> wmat(weight.data() + static_cast<std::size_t>(g) * cout_g * rows, cout_g, rows);
                if (pointwise) {
                    Map<T> gx(grad_x->plane(b, g * cin_g), rows, static_cast<Eigen::Index>(hwo));
                    gx.noalias() += wmat.transpose() * gmat;
                } else {
                    Map<T> gc(gcols.data(), rows, static_cast<Eigen::Index>(hwo));
                    gc.noalias() = wmat.transpose() * gmat;
                    col2im_add(gcols.data(), cin_g, x.h(), x.w(), spec, ho, wo, grad_x->plane(b, g * cin_g));
                }
            }
        }
    }
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& grad_out,
                             const ConvSpec& spec)
{
    ConvGrads<T> g;
    g.grad_x = Tensor4<T>(x.shape());
    g.grad_w = Tensor4<T>(weight.shape());
    if (spec.bias) {
        g.grad_b = Tensor4<T>(spec.bias_shape());
    }
    conv2d_backward_accumulate(x, weight, grad_out, spec, &g.grad_x, g.grad_w, spec.bias ? &g.grad_b : nullptr);
    return g;
}

template <typename T>
Conv2d<T>::Conv2d(const ConvSpec& s) : spec(s)
{
    spec.validate();
    weight = Tensor4<T>(spec.weight_shape());
    if (spec.bias) {
        bias = Tensor4<T>(spec.bias_shape());
    }
}

template <typename T>
Tensor4<T> Conv2d<T>::forward(const Tensor4<T>& x) const
{
    return conv2d_forward(x, weight, spec.bias ? &bias : nullptr, spec);
}

template <typename T>
Tensor4<T> Conv2d<T>::backward(const Tensor4<T>& x, const Tensor4<T>& grad_out, Conv2d& grads) const
{
    Tensor4<T> gx(x.shape());
    conv2d_backward_accumulate(x, weight, grad_out, spec, &gx, grads.weight, spec.bias ? &grads.bias : nullptr);
    return gx;
}

template <typename T>
void Conv2d<T>::backward_params(const Tensor4<T>& x, const Tensor4<T>& grad_out, Conv2d& grads) const
{
    conv2d_backward_accumulate(x, weight, grad_out, spec, nullptr, grads.weight, spec.bias ? &grads.bias : nullptr);
}

#define KBNET_INSTANTIATE(T)                                                                                    \
    template Tensor4<T> conv2d_forward(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>*, const ConvSpec&); \
    template ConvGrads<T> conv2d_backward(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&,              \
                                          const ConvSpec&);                                                     \
    template void conv2d_backward_accumulate(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&,           \
                                             const ConvSpec&, Tensor4<T>*, Tensor4<T>&, Tensor4<T>*);           \
    template struct Conv2d<T>;                                                                                  \
    template void detail::im2col(const T*, int, int, int, const ConvSpec&, int, int, T*);                       \
    template void detail::col2im_add(const T*, int, int, int, const ConvSpec&, int, int, T*);

KBNET_INSTANTIATE(float)
KBNET_INSTANTIATE(double)

#undef KBNET_INSTANTIATE

} // namespace kbnet
