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
#include "kbnet/net.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace kbnet {

struct LayerMacs {
    std::string name;
    std::uint64_t macs = 0;
};

struct MacReport {
    std::vector<LayerMacs> layers;

    std::uint64_t total() const noexcept;
};

/// Static convolution: Ho * Wo * Cout * (Cin / groups) * K^2.
std::uint64_t conv_macs(const ConvSpec& spec, int h, int w);

/// Kernel-basis aggregation at one resolution: N applications of the grouped
/// basis kernels (H * W * C * 4 * K^2 each) plus the per-pixel weighted sum
/// over N responses (H * W * C * N).
std::uint64_t kba_aggregate_macs(int channels, int n_bases, int kernel_size, int h, int w);

/// Per-layer multiply-accumulate count of the network for an h x w input,
/// listing layers in registry order. Convolutions and the kernel-basis
/// aggregation are counted; elementwise products, normalisation, pooling and
/// activations are not.
MacReport count_macs(const NetConfig& config, int h, int w);

} // namespace kbnet
