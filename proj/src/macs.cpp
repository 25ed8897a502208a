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

#include "kbnet/macs.hpp"

namespace kbnet {

std::uint64_t MacReport::total() const noexcept
{
    std::uint64_t t = 0;
    for (const auto& l : layers) {
        t += l.macs;
    }
    return t;
}

std::uint64_t conv_macs(const ConvSpec& spec, int h, int w)
{
    const std::uint64_t ho = static_cast<std::uint64_t>(spec.out_size(h));
    const std::uint64_t wo = static_cast<std::uint64_t>(spec.out_size(w));
    const std::uint64_t k2 = static_cast<std::uint64_t>(spec.kernel_size) * spec.kernel_size;
    return ho * wo * static_cast<std::uint64_t>(spec.out_channels) * spec.in_per_group() * k2;
}

std::uint64_t kba_aggregate_macs(int channels, int n_bases, int kernel_size, int h, int w)
{
    const std::uint64_t hwc = static_cast<std::uint64_t>(h) * w * channels;
    const std::uint64_t k2 = static_cast<std::uint64_t>(kernel_size) * kernel_size;
    return n_bases * hwc * kKbaGroupChannels * k2 + hwc * n_bases;
}

namespace {

class Walker {
public:
    explicit Walker(MacReport& r) : report_(r) {}

    void conv(const std::string& name, const Conv2d<float>& c, int h, int w)
    {
        report_.layers.push_back({name, conv_macs(c.spec, h, w)});
    }

    void block(const std::string& name, Block<float>& b, int h, int w)
    {
        auto& m = b.mff;
        if (m.branches.dw) {
            conv(name + ".mff.dw3x3", m.dw3x3, h, w);
        }
        if (m.branches.ca) {
            conv(name + ".mff.ca.reduce", m.ca.reduce, 1, 1);
            conv(name + ".mff.ca.expand", m.ca.expand, 1, 1);
        }
        if (m.branches.kba) {
            conv(name + ".mff.kba.coeff_conv1", m.kba.coeff_conv1, h, w);
            conv(name + ".mff.kba.coeff_conv2", m.kba.coeff_conv2, h, w);
            conv(name + ".mff.kba.feature_transform", m.kba.feature_transform, h, w);
            report_.layers.push_back({name + ".mff.kba.aggregate",
                                      kba_aggregate_macs(m.kba.channels(), m.kba.n_bases(), m.kba.kernel_size(), h, w)});
        }
        conv(name + ".mff.out_proj", m.out_proj, h, w);
        conv(name + ".ffn.expand", b.ffn.expand, h, w);
        conv(name + ".ffn.project", b.ffn.project, h, w);
    }

private:
    MacReport& report_;
};

} // namespace

MacReport count_macs(const NetConfig& config, int h, int w)
{
    if (h < 1 || w < 1 || h % kSizeMultiple != 0 || w % kSizeMultiple != 0) {
        throw ShapeError("count_macs: size " + std::to_string(h) + "x" + std::to_string(w) +
                         " must be a positive multiple of 16");
    }
    // Shapes only; the zero-filled parameter tensors are never read.
    Network<float> net(config);
    MacReport report;
    Walker walk(report);
    walk.conv("head", net.head, h, w);
    for (int s = 0; s < kStages; ++s) {
        const int hs = h >> s;
        const int ws = w >> s;
        for (std::size_t i = 0; i < net.encoders[s].size(); ++i) {
            walk.block("enc" + std::to_string(s) + ".block" + std::to_string(i), net.encoders[s][i], hs, ws);
        }
        walk.conv("down" + std::to_string(s), net.downs[s], hs, ws);
    }
    for (int s = kStages - 1; s >= 0; --s) {
        walk.conv("up" + std::to_string(s), net.ups[s], h >> (s + 1), w >> (s + 1));
        for (std::size_t i = 0; i < net.decoders[s].size(); ++i) {
            walk.block("dec" + std::to_string(s) + ".block" + std::to_string(i), net.decoders[s][i], h >> s, w >> s);
        }
    }
    walk.conv("tail", net.tail, h, w);
    return report;
}

} // namespace kbnet
