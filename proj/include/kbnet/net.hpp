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

#include "kbnet/config.hpp"
#include "kbnet/conv.hpp"
#include "kbnet/kba.hpp"
#include "kbnet/mff.hpp"
#include "kbnet/nnops.hpp"
#include "kbnet/params.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace kbnet {

inline constexpr int kStages = 4;
/// Spatial dimensions must be multiples of this (one stride-2 conv per stage).
inline constexpr int kSizeMultiple = 1 << kStages;

/// Architecture hyperparameters. Block counts are indexed by stage, stage 0
/// being full resolution.
struct NetConfig {
    int base_width = 32;
    std::array<int, kStages> encoder_blocks{2, 2, 2, 2};
    std::array<int, kStages> decoder_blocks{4, 2, 2, 2};
    int n_bases = 32;
    int kernel_size = 3;
    int ffn_expansion = 2;
    int ca_reduction = 4;
    NormalizeMode normalize_mode = NormalizeMode::none;
    BranchMask branches;
    bool global_residual = true;
    int in_channels = 3;
    int out_channels = 3;

    int stage_width(int s) const noexcept { return base_width << s; }
    MffConfig block_config(int stage) const;

    /// Checks every stage width against the KBA and attention constraints;
    /// the error names the offending stage.
    void validate() const;

    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Applies recognised keys from `kv` onto `cfg` (marking them consumed).
void apply_net_config(NetConfig& cfg, KeyValues& kv);
/// Canonical key=value form, one key per line.
std::string format_net_config(const NetConfig& cfg);

/// One stage unit: fusion block followed by the feed-forward block.
template <typename T>
struct Block {
    using scalar_type = T;

    MffParams<T> mff;
    FfnParams<T> ffn;
};

template <typename T>
void collect(Block<T>& b, const std::string& prefix, ParamList<T>& out, Scope s = Scope::active)
{
    collect(b.mff, prefix + ".mff", out, s);
    collect(b.ffn, prefix + ".ffn", out, s);
}

/// U-shaped restoration network.
///
///   head (3x3) -> [encoder blocks -> stride-2 3x3 conv, width x2] x 4
///   -> [1x1 conv (x2 channels) + pixel_shuffle(2), add skip, decoder blocks] x 4
///   -> tail (3x3), plus the input image when global_residual is set.
template <typename T>
struct Network {
    using scalar_type = T;

    NetConfig config;
    Conv2d<T> head;
    std::array<std::vector<Block<T>>, kStages> encoders;
    std::array<Conv2d<T>, kStages> downs;
    std::array<Conv2d<T>, kStages> ups;
    std::array<std::vector<Block<T>>, kStages> decoders;
    Conv2d<T> tail;

    Network() = default;
    /// Allocates zero-filled parameters; see build() for initialisation.
    explicit Network(const NetConfig& cfg);
};

/// Registry order follows the forward pass.
template <typename T>
void collect(Network<T>& net, const std::string& prefix, ParamList<T>& out, Scope s = Scope::active)
{
    collect(net.head, join_name(prefix, "head"), out, s);
    for (int st = 0; st < kStages; ++st) {
        const std::string enc = join_name(prefix, "enc" + std::to_string(st));
        for (std::size_t i = 0; i < net.encoders[st].size(); ++i) {
            collect(net.encoders[st][i], enc + ".block" + std::to_string(i), out, s);
        }
        collect(net.downs[st], join_name(prefix, "down" + std::to_string(st)), out, s);
    }
    for (int st = kStages - 1; st >= 0; --st) {
        collect(net.ups[st], join_name(prefix, "up" + std::to_string(st)), out, s);
        const std::string dec = join_name(prefix, "dec" + std::to_string(st));
        for (std::size_t i = 0; i < net.decoders[st].size(); ++i) {
            collect(net.decoders[st][i], dec + ".block" + std::to_string(i), out, s);
        }
    }
    collect(net.tail, join_name(prefix, "tail"), out, s);
}

/// Deterministic initialisation from `seed`. The tail convolution starts at
/// zero, so with global_residual the untrained network is the identity.
template <typename T>
Network<T> build(const NetConfig& config, std::uint64_t seed);

template <typename T>
struct BlockCache {
    MffCache<T> mff;
    FfnCache<T> ffn;
};

template <typename T>
struct NetCache {
    Tensor4<T> input;
    std::array<std::vector<BlockCache<T>>, kStages> encoders;
    std::array<Tensor4<T>, kStages> down_inputs;
    std::array<Tensor4<T>, kStages> up_inputs;
    std::array<std::vector<BlockCache<T>>, kStages> decoders;
    Tensor4<T> tail_input;
};

/// Requires h and w to be multiples of 16 (see pad_crop).
template <typename T>
Tensor4<T> net_forward(const Tensor4<T>& img, const Network<T>& net, std::type_identity_t<NetCache<T>>* cache = nullptr,
                       KbaPath path = KbaPath::fuse_outputs);

/// Accumulates into `grads` and returns dL/dimg.
template <typename T>
Tensor4<T> net_backward(const Network<T>& net, const NetCache<T>& cache, const Tensor4<T>& grad_out,
                        Network<T>& grads);

/// How much bottom/right padding was added.
struct CropRecord {
    int height = 0;
    int width = 0;
    int pad_bottom = 0;
    int pad_right = 0;

    bool trivial() const noexcept { return pad_bottom == 0 && pad_right == 0; }
};

/// Reflect-pads bottom/right up to the next multiple of `multiple`.
template <typename T>
Tensor4<T> pad_to_multiple(const Tensor4<T>& img, CropRecord& record, int multiple = kSizeMultiple);

template <typename T>
Tensor4<T> unpad(const Tensor4<T>& out, const CropRecord& record);

} // namespace kbnet
