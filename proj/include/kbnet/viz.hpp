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

#include "kbnet/image.hpp"
#include "kbnet/net.hpp"

#include <cstdint>
#include <vector>

namespace kbnet {

/// Row-major N x 3 matrix of standard normal entries drawn from `seed`.
std::vector<double> random_projection(int n_bases, std::uint64_t seed);

/// Projects per-pixel coefficient vectors (batch 0 of an (n, N, h, w)
/// tensor) to RGB, min-max normalises each projected channel over the image
/// to [0, 255] with round-half-up, and upscales by `upscale` with nearest
/// neighbour. A channel with zero range maps to 0.
Image project_coefficients(const Tensor4<float>& coeffs, std::uint64_t seed, int upscale = 1);

struct CoefficientMap {
    int stage = 0;
    Image image;
};

/// Uses batch 0 of `img`. Coefficients of the last fusion block of each encoder stage (or only
/// `stage` when it is >= 0), rendered at the input resolution. The input is
/// padded to a multiple of 16 for the forward pass and the maps are cropped
/// back to its size.
std::vector<CoefficientMap> coefficient_maps(const Network<float>& net, const Tensor4<float>& img, int stage = -1,
                                             std::uint64_t seed = 0);

} // namespace kbnet
