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

#include "kbnet/conv.hpp"
#include "kbnet/params.hpp"
#include "kbnet/tensor.hpp"

#include <vector>

namespace kbnet {

// ---------------------------------------------------------------------------
// SimpleGate: splits channels in half and multiplies the halves.

template <typename T>
Tensor4<T> simple_gate_forward(const Tensor4<T>& x);

/// dL/dx given the gate input and dL/dout.
template <typename T>
Tensor4<T> simple_gate_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out);

// ---------------------------------------------------------------------------
// Layer norm over the channel axis at every (n, h, w).

template <typename T>
struct LayerNormParams {
    using scalar_type = T;

    Tensor4<T> gamma; // (1, C, 1, 1)
    Tensor4<T> beta;  // (1, C, 1, 1)
    double epsilon = 1e-6;

    LayerNormParams() = default;
    explicit LayerNormParams(int channels, double eps = 1e-6);
    int channels() const noexcept { return gamma.c(); }
};

template <typename T>
void collect(LayerNormParams<T>& p, const std::string& prefix, ParamList<T>& out, Scope = Scope::active)
{
    out.push_back({prefix + ".gamma", &p.gamma});
    out.push_back({prefix + ".beta", &p.beta});
}

template <typename T>
struct LayerNormCache {
    Tensor4<T> xhat;            // standardized input
    std::vector<T> inv_std;     // one per (n, h, w)
};

template <typename T>
Tensor4<T> layer_norm2d_forward(const Tensor4<T>& x, const LayerNormParams<T>& p, LayerNormCache<T>* cache = nullptr);

template <typename T>
Tensor4<T> layer_norm2d_backward(const LayerNormParams<T>& p, const LayerNormCache<T>& cache,
                                 const Tensor4<T>& grad_out, LayerNormParams<T>& grads);

// ---------------------------------------------------------------------------
// Squeeze-excitation channel attention:
//   s = sigmoid(expand(relu(reduce(avgpool(x))))),  out = x * s.

template <typename T>
struct ChannelAttentionParams {
    using scalar_type = T;

    Conv2d<T> reduce; // 1x1, C -> C/r
    Conv2d<T> expand; // 1x1, C/r -> C
    int reduction = 4;

    ChannelAttentionParams() = default;
    ChannelAttentionParams(int channels, int reduction);
    int channels() const noexcept { return reduce.spec.in_channels; }
};

template <typename T>
void collect(ChannelAttentionParams<T>& p, const std::string& prefix, ParamList<T>& out, Scope s = Scope::active)
{
    collect(p.reduce, prefix + ".reduce", out, s);
    collect(p.expand, prefix + ".expand", out, s);
}

template <typename T>
struct ChannelAttentionCache {
    Tensor4<T> x;
    Tensor4<T> pooled;    // (n, C, 1, 1)
    Tensor4<T> hidden_in; // pre-relu
    Tensor4<T> hidden;    // post-relu
    Tensor4<T> gate;      // sigmoid output, (n, C, 1, 1)
};

template <typename T>
Tensor4<T> channel_attention_forward(const Tensor4<T>& x, const ChannelAttentionParams<T>& p,
                                     ChannelAttentionCache<T>* cache = nullptr);

template <typename T>
Tensor4<T> channel_attention_backward(const ChannelAttentionParams<T>& p, const ChannelAttentionCache<T>& cache,
                                      const Tensor4<T>& grad_out, ChannelAttentionParams<T>& grads);

template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x);

// ---------------------------------------------------------------------------
// Sub-pixel rearrangement: (n, c*r*r, h, w) <-> (n, c, h*r, w*r), with
// out[b, c, y*r + i, x*r + j] = in[b, c*r*r + i*r + j, y, x].

template <typename T>
Tensor4<T> pixel_shuffle(const Tensor4<T>& x, int r);

template <typename T>
Tensor4<T> pixel_unshuffle(const Tensor4<T>& x, int r);

// ---------------------------------------------------------------------------
// Feed-forward block: out = x + project(simple_gate(expand(layer_norm(x)))).
// expand: C -> 2eC, SimpleGate halves to eC, project: eC -> C.

template <typename T>
struct FfnParams {
    using scalar_type = T;

    LayerNormParams<T> norm;
    Conv2d<T> expand;
    Conv2d<T> project;
    int expansion = 2;

    FfnParams() = default;
    FfnParams(int channels, int expansion);
};

template <typename T>
void collect(FfnParams<T>& p, const std::string& prefix, ParamList<T>& out, Scope s = Scope::active)
{
    collect(p.norm, prefix + ".norm", out, s);
    collect(p.expand, prefix + ".expand", out, s);
    collect(p.project, prefix + ".project", out, s);
}

template <typename T>
struct FfnCache {
    LayerNormCache<T> norm;
    Tensor4<T> normed;
    Tensor4<T> expanded;
    Tensor4<T> gated;
};

template <typename T>
Tensor4<T> ffn_forward(const Tensor4<T>& x, const FfnParams<T>& p, FfnCache<T>* cache = nullptr);

template <typename T>
Tensor4<T> ffn_backward(const FfnParams<T>& p, const FfnCache<T>& cache, const Tensor4<T>& grad_out,
                        FfnParams<T>& grads);

template <typename T>
void init_ffn(FfnParams<T>& p, Rng& rng);

} // namespace kbnet
