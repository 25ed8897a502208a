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
#include "kbnet/kba.hpp"
#include "kbnet/nnops.hpp"
#include "kbnet/params.hpp"

#include <string>

namespace kbnet {

/// Which parallel branches of the fusion block are active.
struct BranchMask {
    bool dw = true;
    bool ca = true;
    bool kba = true;

    bool any() const noexcept { return dw || ca || kba; }
    friend bool operator==(const BranchMask&, const BranchMask&) = default;
};

/// Comma-separated subset of {dw, ca, kba}, e.g. "dw,ca".
std::string to_string(const BranchMask& m);
BranchMask parse_branch_mask(const std::string& s);

struct MffConfig {
    KbaConfig kba; // kba.channels is the block width
    int ca_reduction = 4;
    BranchMask branches;

    int channels() const noexcept { return kba.channels; }
    void validate() const;
};

/// Multi-axis feature fusion block:
///   x_n   = layer_norm(x)
///   fused = dw3x3(x_n) * channel_attention(x_n) * kba(x_n)   (enabled branches)
///   out   = x + out_proj(fused)
template <typename T>
struct MffParams {
    using scalar_type = T;

    BranchMask branches;
    LayerNormParams<T> norm;
    Conv2d<T> dw3x3;
    ChannelAttentionParams<T> ca;
    KbaParams<T> kba;
    Conv2d<T> out_proj;

    MffParams() = default;
    explicit MffParams(const MffConfig& cfg);
};

template <typename T>
void collect(MffParams<T>& p, const std::string& prefix, ParamList<T>& out, Scope s = Scope::active)
{
    const bool all = s == Scope::all;
    collect(p.norm, prefix + ".norm", out, s);
    if (all || p.branches.dw) {
        collect(p.dw3x3, prefix + ".dw3x3", out, s);
    }
    if (all || p.branches.ca) {
        collect(p.ca, prefix + ".ca", out, s);
    }
    if (all || p.branches.kba) {
        collect(p.kba, prefix + ".kba", out, s);
    }
    collect(p.out_proj, prefix + ".out_proj", out, s);
}

template <typename T>
void init_mff(MffParams<T>& p, Rng& rng);

template <typename T>
struct MffCache {
    LayerNormCache<T> norm;
    Tensor4<T> x_norm;
    Tensor4<T> dw_out;
    Tensor4<T> ca_out;
    Tensor4<T> kba_out;
    ChannelAttentionCache<T> ca;
    KbaCache<T> kba;
    Tensor4<T> fused;
};

template <typename T>
Tensor4<T> mff_forward(const Tensor4<T>& x, const MffParams<T>& p, KbaPath path = KbaPath::fuse_outputs,
                       MffCache<T>* cache = nullptr);

/// Accumulates into `grads` (disabled branches are left untouched) and
/// returns dL/dx.
template <typename T>
Tensor4<T> mff_backward(const MffParams<T>& p, const MffCache<T>& cache, const Tensor4<T>& grad_out,
                        MffParams<T>& grads);

} // namespace kbnet
