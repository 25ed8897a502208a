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

#include "kbnet/viz.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kbnet {

std::vector<double> random_projection(int n_bases, std::uint64_t seed)
{
    Rng rng(mix_seed(seed, 0x7669));
    std::vector<double> m(static_cast<std::size_t>(n_bases) * 3);
    for (auto& v : m) {
        v = rng.normal();
    }
    return m;
}

Image project_coefficients(const Tensor4<float>& coeffs, std::uint64_t seed, int upscale)
{
    if (upscale < 1) {
        throw std::invalid_argument("project_coefficients: upscale must be >= 1");
    }
    const int n = coeffs.c();
    const int h = coeffs.h();
    const int w = coeffs.w();
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const auto proj = random_projection(n, seed);

    std::vector<double> rgb(hw * 3, 0.0);
    for (int t = 0; t < n; ++t) {
        const float* f = coeffs.plane(0, t);
        for (std::size_t p = 0; p < hw; ++p) {
            for (int k = 0; k < 3; ++k) {
                rgb[p * 3 + k] += static_cast<double>(f[p]) * proj[static_cast<std::size_t>(t) * 3 + k];
            }
        }
    }

    std::vector<std::uint8_t> small(hw * 3);
    for (int k = 0; k < 3; ++k) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (std::size_t p = 0; p < hw; ++p) {
            lo = std::min(lo, rgb[p * 3 + k]);
            hi = std::max(hi, rgb[p * 3 + k]);
        }
        const double range = hi - lo;
        for (std::size_t p = 0; p < hw; ++p) {
            const double u = range > 0.0 ? (rgb[p * 3 + k] - lo) / range : 0.0;
            small[p * 3 + k] = static_cast<std::uint8_t>(std::min(255.0, std::floor(u * 255.0 + 0.5)));
        }
    }

    Image img;
    img.width = w * upscale;
    img.height = h * upscale;
    img.channels = 3;
    img.samples.resize(img.size());
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::size_t src = (static_cast<std::size_t>(y / upscale) * w + x / upscale) * 3;
            const std::size_t dst = (static_cast<std::size_t>(y) * img.width + x) * 3;
            std::copy_n(&small[src], 3, &img.samples[dst]);
        }
    }
    return img;
}

namespace {

Image crop(const Image& src, int height, int width)
{
    Image out;
    out.width = width;
    out.height = height;
    out.channels = src.channels;
    out.samples.resize(out.size());
    const std::size_t row = static_cast<std::size_t>(width) * src.channels;
    for (int y = 0; y < height; ++y) {
        std::copy_n(&src.samples[static_cast<std::size_t>(y) * src.width * src.channels], row,
                    &out.samples[y * row]);
    }
    return out;
}

} // namespace

std::vector<CoefficientMap> coefficient_maps(const Network<float>& net, const Tensor4<float>& img, int stage,
                                             std::uint64_t seed)
{
    if (!net.config.branches.kba) {
        throw std::invalid_argument("coefficient maps need the kba branch, which this network disables");
    }
    if (stage >= kStages) {
        throw std::invalid_argument("stage " + std::to_string(stage) + " out of range 0.." +
                                    std::to_string(kStages - 1));
    }
    CropRecord record;
    const Tensor4<float> padded = pad_to_multiple(img, record);
    NetCache<float> cache;
    net_forward(padded, net, &cache);

    std::vector<CoefficientMap> maps;
    for (int s = 0; s < kStages; ++s) {
        if (stage >= 0 && s != stage) {
            continue;
        }
        if (cache.encoders[s].empty()) {
            throw std::invalid_argument("encoder stage " + std::to_string(s) + " has no blocks");
        }
        const Tensor4<float>& coeffs = cache.encoders[s].back().mff.kba.coeffs;
        maps.push_back({s, crop(project_coefficients(coeffs, seed, 1 << s), record.height, record.width)});
    }
    return maps;
}

} // namespace kbnet
