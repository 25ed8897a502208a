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

#pragma once

#include "kbnet/tensor.hpp"

#include <type_traits>

namespace kbnet {

/// Static 2-D convolution geometry. Square kernels, zero padding.
struct ConvSpec {
    int in_channels = 1;
    int out_channels = 1;
    int kernel_size = 3;
    int stride = 1;
    int padding = 1;
    int groups = 1;
    bool bias = true;

    /// Stride-1 convolution that preserves the spatial size (K odd).
    static ConvSpec same(int in, int out, int k, int groups = 1, bool bias = true)
    {
        return ConvSpec{in, out, k, 1, k / 2, groups, bias};
    }

    void validate() const;
    int out_size(int in) const noexcept { return (in + 2 * padding - kernel_size) / stride + 1; }
    int in_per_group() const noexcept { return in_channels / groups; }
    int out_per_group() const noexcept { return out_channels / groups; }
    Shape weight_shape() const noexcept { return {out_channels, in_per_group(), kernel_size, kernel_size}; }
    Shape bias_shape() const noexcept { return {1, out_channels, 1, 1}; }

    friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

template <typename T>
struct ConvGrads {
    Tensor4<T> grad_x;
    Tensor4<T> grad_w;
    Tensor4<T> grad_b; // empty when the spec has no bias
};

/// Grouped convolution. `bias` may be null.
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const Tensor4<T>& weight, const std::type_identity_t<Tensor4<T>>* bias,
                          const ConvSpec& spec);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& grad_out,
                             const ConvSpec& spec);

/// Accumulating adjoint: grad_w (and grad_b when non-null) receive +=; grad_x,
/// when non-null, also accumulates.
template <typename T>
void conv2d_backward_accumulate(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& grad_out,
                                const ConvSpec& spec, std::type_identity_t<Tensor4<T>>* grad_x, Tensor4<T>& grad_w,
                                std::type_identity_t<Tensor4<T>>* grad_b);

namespace detail {

/// Unfolds the `channels` planes at `src` (each h*w) into a
/// (channels*K*K) x (ho*wo) row-major matrix, rows ordered (channel, ky, kx).
template <typename T>
void im2col(const T* src, int channels, int h, int w, const ConvSpec& s, int ho, int wo, T* cols);

/// Adjoint of im2col: scatters columns back and adds into `dst`.
template <typename T>
void col2im_add(const T* cols, int channels, int h, int w, const ConvSpec& s, int ho, int wo, T* dst);

} // namespace detail

/// A convolution layer: spec plus its parameters.
template <typename T>
struct Conv2d {
    using scalar_type = T;

    ConvSpec spec;
    Tensor4<T> weight;
    Tensor4<T> bias; // empty when !spec.bias

    Conv2d() = default;
    explicit Conv2d(const ConvSpec& s);

    Tensor4<T> forward(const Tensor4<T>& x) const;

    /// Accumulates parameter gradients into `grads` and returns dL/dx.
    Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& grad_out, Conv2d& grads) const;

    /// Same as backward() but skips the input gradient.
    void backward_params(const Tensor4<T>& x, const Tensor4<T>& grad_out, Conv2d& grads) const;
};

} // namespace kbnet
