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

#include "kbnet/net.hpp"

#include <sstream>

namespace kbnet {

MffConfig NetConfig::block_config(int stage) const
{
    MffConfig m;
    m.kba = KbaConfig{stage_width(stage), n_bases, kernel_size, normalize_mode};
    m.ca_reduction = ca_reduction;
    m.branches = branches;
    return m;
}

void NetConfig::validate() const
{
    auto fail = [](const std::string& msg) { throw ShapeError("NetConfig: " + msg); };
    if (in_channels < 1 || out_channels < 1) {
        fail("in/out channels must be positive");
    }
    if (global_residual && in_channels != out_channels) {
        fail("global_residual requires in_channels == out_channels");
    }
    if (base_width < 1) {
        fail("base_width must be positive");
    }
    if (ffn_expansion < 1) {
        fail("ffn_expansion must be >= 1");
    }
    if (n_bases < 2 || n_bases % 2 != 0) {
        fail("n_bases = " + std::to_string(n_bases) + " must be even (SimpleGate halves the coefficient branch)");
    }
    if (kernel_size < 1 || kernel_size % 2 == 0) {
        fail("kernel_size = " + std::to_string(kernel_size) + " must be odd");
    }
    if (!branches.any()) {
        fail("branch mask enables no branch");
    }
    for (int s = 0; s < kStages; ++s) {
        if (encoder_blocks[s] < 0 || decoder_blocks[s] < 0) {
            fail("stage " + std::to_string(s) + ": negative block count");
        }
        const int w = stage_width(s);
        const std::string at = "stage " + std::to_string(s) + " width " + std::to_string(w) + ": ";
        if (w % kKbaGroupChannels != 0) {
            fail(at + "not divisible by 4 (KBA kernel bases use groups of 4 channels)");
        }
        if (w % n_bases != 0) {
            fail(at + "not divisible by n_bases = " + std::to_string(n_bases) +
                 " (KBA coefficient conv uses n_bases groups)");
        }
        if (w % ca_reduction != 0) {
            fail(at + "not divisible by channel-attention reduction " + std::to_string(ca_reduction));
        }
    }
}

namespace {

std::string join_ints(const std::array<int, kStages>& v)
{
    std::string out;
    for (int i = 0; i < kStages; ++i) {
        out += (i ? "," : "") + std::to_string(v[i]);
    }
    return out;
}

std::array<int, kStages> four_ints(const std::string& key, const std::string& value)
{
    const auto v = parse_int_list(key, value);
    if (v.size() != kStages) {
        throw ConfigError("key '" + key + "': expected 4 comma-separated integers, got '" + value + "'");
    }
    return {v[0], v[1], v[2], v[3]};
}

} // namespace

void apply_net_config(NetConfig& cfg, KeyValues& kv)
{
    if (auto* v = kv.take("base_width")) cfg.base_width = parse_int("base_width", *v);
    if (auto* v = kv.take("encoder_blocks")) cfg.encoder_blocks = four_ints("encoder_blocks", *v);
    if (auto* v = kv.take("decoder_blocks")) cfg.decoder_blocks = four_ints("decoder_blocks", *v);
    if (auto* v = kv.take("n_bases")) cfg.n_bases = parse_int("n_bases", *v);
    if (auto* v = kv.take("kernel_size")) cfg.kernel_size = parse_int("kernel_size", *v);
    if (auto* v = kv.take("ffn_expansion")) cfg.ffn_expansion = parse_int("ffn_expansion", *v);
    if (auto* v = kv.take("ca_reduction")) cfg.ca_reduction = parse_int("ca_reduction", *v);
    try {
        if (auto* v = kv.take("normalize_mode")) cfg.normalize_mode = parse_normalize_mode(*v);
        if (auto* v = kv.take("branch_mask")) cfg.branches = parse_branch_mask(*v);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (auto* v = kv.take("global_residual")) cfg.global_residual = parse_bool("global_residual", *v);
    if (auto* v = kv.take("in_channels")) cfg.in_channels = parse_int("in_channels", *v);
    if (auto* v = kv.take("out_channels")) cfg.out_channels = parse_int("out_channels", *v);
}

std::string format_net_config(const NetConfig& cfg)
{
    std::ostringstream out;
    out << "base_width = " << cfg.base_width << "\n"
        << "encoder_blocks = " << join_ints(cfg.encoder_blocks) << "\n"
        << "decoder_blocks = " << join_ints(cfg.decoder_blocks) << "\n"
        << "n_bases = " << cfg.n_bases << "\n"
        << "kernel_size = " << cfg.kernel_size << "\n"
        << "ffn_expansion = " << cfg.ffn_expansion << "\n"
        << "ca_reduction = " << cfg.ca_reduction << "\n"
        << "normalize_mode = " << to_string(cfg.normalize_mode) << "\n"
        << "branch_mask = " << to_string(cfg.branches) << "\n"
        << "global_residual = " << (cfg.global_residual ? "true" : "false") << "\n"
        << "in_channels = " << cfg.in_channels << "\n"
        << "out_channels = " << cfg.out_channels << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------

template <typename T>
Network<T>::Network(const NetConfig& cfg) : config((cfg.validate(), cfg))
{
    head = Conv2d<T>(ConvSpec::same(cfg.in_channels, cfg.base_width, 3));
    for (int s = 0; s < kStages; ++s) {
        const int w = cfg.stage_width(s);
        const MffConfig block = cfg.block_config(s);
        for (int i = 0; i < cfg.encoder_blocks[s]; ++i) {
            encoders[s].push_back(Block<T>{MffParams<T>(block), FfnParams<T>(w, cfg.ffn_expansion)});
        }
        for (int i = 0; i < cfg.decoder_blocks[s]; ++i) {
            decoders[s].push_back(Block<T>{MffParams<T>(block), FfnParams<T>(w, cfg.ffn_expansion)});
        }
        downs[s] = Conv2d<T>(ConvSpec{w, 2 * w, 3, 2, 1, 1, true});
        // Input is the next stage's width 2w; 4w channels shuffle down to w.
        ups[s] = Conv2d<T>(ConvSpec::same(2 * w, 4 * w, 1));
    }
    tail = Conv2d<T>(ConvSpec::same(cfg.base_width, cfg.out_channels, 3));
}

template <typename T>
Network<T> build(const NetConfig& config, std::uint64_t seed)
{
    Network<T> net(config);
    Rng rng(seed);
    auto init_block = [&](Block<T>& b) {
        init_mff(b.mff, rng);
        init_ffn(b.ffn, rng);
    };
    init_conv(net.head, rng);
    for (int s = 0; s < kStages; ++s) {
        for (auto& b : net.encoders[s]) {
            init_block(b);
        }
        init_conv(net.downs[s], rng);
    }
    for (int s = kStages - 1; s >= 0; --s) {
        init_conv(net.ups[s], rng);
        for (auto& b : net.decoders[s]) {
            init_block(b);
        }
    }
    net.tail.weight.set_zero();
    net.tail.bias.set_zero();
    return net;
}

namespace {

template <typename T>
Tensor4<T> block_forward(const Tensor4<T>& x, const Block<T>& b, KbaPath path, BlockCache<T>* cache)
{
    Tensor4<T> y = mff_forward(x, b.mff, path, cache ? &cache->mff : nullptr);
    return ffn_forward(y, b.ffn, cache ? &cache->ffn : nullptr);
}

template <typename T>
Tensor4<T> block_backward(const Block<T>& b, const BlockCache<T>& cache, const Tensor4<T>& g, Block<T>& grads)
{
    Tensor4<T> gy = ffn_backward(b.ffn, cache.ffn, g, grads.ffn);
    return mff_backward(b.mff, cache.mff, gy, grads.mff);
}

} // namespace

template <typename T>
Tensor4<T> net_forward(const Tensor4<T>& img, const Network<T>& net, std::type_identity_t<NetCache<T>>* cache, KbaPath path)
{
    const NetConfig& cfg = net.config;
    if (img.c() != cfg.in_channels) {
        throw ShapeError("network expects " + std::to_string(cfg.in_channels) + " input channels, got " +
                         to_string(img.shape()));
    }
    if (img.h() % kSizeMultiple != 0 || img.w() % kSizeMultiple != 0) {
        throw ShapeError("network input " + std::to_string(img.h()) + "x" + std::to_string(img.w()) +
                         " is not a multiple of 16; pad it with pad_to_multiple() first");
    }
    if (cache) {
        *cache = NetCache<T>{};
        cache->input = img;
    }

    std::array<Tensor4<T>, kStages> skips;
    Tensor4<T> h = net.head.forward(img);
    for (int s = 0; s < kStages; ++s) {
        if (cache) {
            cache->encoders[s].resize(net.encoders[s].size());
        }
        for (std::size_t i = 0; i < net.encoders[s].size(); ++i) {
            h = block_forward(h, net.encoders[s][i], path, cache ? &cache->encoders[s][i] : nullptr);
        }
        skips[s] = h;
        h = net.downs[s].forward(h);
        if (cache) {
            cache->down_inputs[s] = std::move(skips[s]);
        }
    }
    for (int s = kStages - 1; s >= 0; --s) {
        Tensor4<T> up = pixel_shuffle(net.ups[s].forward(h), 2);
        if (cache) {
            cache->up_inputs[s] = std::move(h);
        }
        add_inplace(up, cache ? cache->down_inputs[s] : skips[s]);
        h = std::move(up);
        if (cache) {
            cache->decoders[s].resize(net.decoders[s].size());
        }
        for (std::size_t i = 0; i < net.decoders[s].size(); ++i) {
            h = block_forward(h, net.decoders[s][i], path, cache ? &cache->decoders[s][i] : nullptr);
        }
    }
    Tensor4<T> out = net.tail.forward(h);
    if (cache) {
        cache->tail_input = std::move(h);
    }
    if (cfg.global_residual) {
        add_inplace(out, img);
    }
    return out;
}

template <typename T>
Tensor4<T> net_backward(const Network<T>& net, const NetCache<T>& cache, const Tensor4<T>& grad_out,
                        Network<T>& grads)
{
    Tensor4<T> g_img = net.config.global_residual ? grad_out : Tensor4<T>(cache.input.shape());
    Tensor4<T> g = net.tail.backward(cache.tail_input, grad_out, grads.tail);

    std::array<Tensor4<T>, kStages> g_skips;
    for (int s = 0; s < kStages; ++s) {
        for (int i = static_cast<int>(net.decoders[s].size()) - 1; i >= 0; --i) {
            g = block_backward(net.decoders[s][i], cache.decoders[s][i], g, grads.decoders[s][i]);
        }
        g_skips[s] = g;
        g = net.ups[s].backward(cache.up_inputs[s], pixel_unshuffle(g, 2), grads.ups[s]);
    }
    for (int s = kStages - 1; s >= 0; --s) {
        g = net.downs[s].backward(cache.down_inputs[s], g, grads.downs[s]);
        add_inplace(g, g_skips[s]);
        for (int i = static_cast<int>(net.encoders[s].size()) - 1; i >= 0; --i) {
            g = block_backward(net.encoders[s][i], cache.encoders[s][i], g, grads.encoders[s][i]);
        }
    }
    add_inplace(g_img, net.head.backward(cache.input, g, grads.head));
    return g_img;
}

// ---------------------------------------------------------------------------

namespace {

// Whole-sample symmetric reflection (edge not repeated), periodic for
// arbitrarily large offsets.
int reflect_index(int i, int n)
{
    if (n == 1) {
        return 0;
    }
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) {
        i += period;
    }
    return i < n ? i : period - i;
}

int round_up(int v, int m)
{
    return (v + m - 1) / m * m;
}

} // namespace

template <typename T>
Tensor4<T> pad_to_multiple(const Tensor4<T>& img, CropRecord& record, int multiple)
{
    record.height = img.h();
    record.width = img.w();
    const int hp = round_up(img.h(), multiple);
    const int wp = round_up(img.w(), multiple);
    record.pad_bottom = hp - img.h();
    record.pad_right = wp - img.w();
    if (record.trivial()) {
        return img;
    }
    Tensor4<T> out(img.n(), img.c(), hp, wp);
    for (int b = 0; b < img.n(); ++b) {
        for (int c = 0; c < img.c(); ++c) {
            for (int y = 0; y < hp; ++y) {
                const int sy = reflect_index(y, img.h());
                for (int x = 0; x < wp; ++x) {
                    out(b, c, y, x) = img(b, c, sy, reflect_index(x, img.w()));
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor4<T> unpad(const Tensor4<T>& out, const CropRecord& record)
{
    if (record.trivial()) {
        return out;
    }
    if (out.h() < record.height || out.w() < record.width) {
        throw ShapeError("unpad: tensor " + to_string(out.shape()) + " smaller than recorded size");
    }
    Tensor4<T> res(out.n(), out.c(), record.height, record.width);
    for (int b = 0; b < out.n(); ++b) {
        for (int c = 0; c < out.c(); ++c) {
            for (int y = 0; y < record.height; ++y) {
                for (int x = 0; x < record.width; ++x) {
                    res(b, c, y, x) = out(b, c, y, x);
                }
            }
        }
    }
    return res;
}

#define KBNET_INSTANTIATE(T)                                                                                       \
    template struct Network<T>;                                                                                    \
    template Network<T> build(const NetConfig&, std::uint64_t);                                                    \
    template Tensor4<T> net_forward(const Tensor4<T>&, const Network<T>&, NetCache<T>*, KbaPath);                  \
    template Tensor4<T> net_backward(const Network<T>&, const NetCache<T>&, const Tensor4<T>&, Network<T>&);       \
    template Tensor4<T> pad_to_multiple(const Tensor4<T>&, CropRecord&, int);                                      \
    template Tensor4<T> unpad(const Tensor4<T>&, const CropRecord&);

KBNET_INSTANTIATE(float)
KBNET_INSTANTIATE(double)

#undef KBNET_INSTANTIATE

} // namespace kbnet
