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

#include "oracles.hpp"

#include "kbnet/nnops.hpp"

#include <doctest.h>

using namespace kbnet;

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Squeeze-excitation written out per channel.
Tensor4<double> se_oracle(const Tensor4<double>& x, const ChannelAttentionParams<double>& p)
{
    const int c = x.c(), r = p.reduce.spec.out_channels;
    Tensor4<double> out(x.shape());
    for (int b = 0; b < x.n(); ++b) {
        std::vector<double> pooled(c), hidden(r);
        for (int ch = 0; ch < c; ++ch) {
            double s = 0;
            for (int i = 0; i < x.h(); ++i)
                for (int j = 0; j < x.w(); ++j) s += x(b, ch, i, j);
            pooled[ch] = s / (x.h() * x.w());
        }
        for (int k = 0; k < r; ++k) {
            double s = p.reduce.bias[k];
            for (int ch = 0; ch < c; ++ch) s += p.reduce.weight(k, ch, 0, 0) * pooled[ch];
            hidden[k] = std::max(0.0, s);
        }
        for (int ch = 0; ch < c; ++ch) {
            double s = p.expand.bias[ch];
            for (int k = 0; k < r; ++k) s += p.expand.weight(ch, k, 0, 0) * hidden[k];
            const double g = sigmoid(s);
            for (int i = 0; i < x.h(); ++i)
                for (int j = 0; j < x.w(); ++j) out(b, ch, i, j) = x(b, ch, i, j) * g;
        }
    }
    return out;
}

template <typename P>
void randomize_params(P& p, std::uint64_t seed, double scale = 0.5)
{
    for (auto& ref : param_list(p)) oracle::randomize(*ref.tensor, seed++, scale);
}

} // namespace

TEST_SUITE("nnops")
{
    TEST_CASE("simple gate examples")
    {
        Tensor4<float> x(1, 2, 3, 3);
        for (int i = 0; i < 9; ++i) {
            x[i] = 2.0f;
            x[9 + i] = 3.0f;
        }
        const auto y = simple_gate_forward(x);
        CHECK(y.c() == 1);
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 6.0f);

        auto a = oracle::random_tensor<double>(1, 8, 4, 4, 1);
        auto zeros = Tensor4<double>(1, 4, 4, 4);
        CHECK(sum_squares(simple_gate_forward(concat_channels(slice_channels(a, 0, 4), zeros))) == 0.0);
    }

    TEST_CASE("simple gate oracle and gradient")
    {
        auto x = oracle::random_tensor<double>(1, 8, 4, 4, 2);
        const auto y = simple_gate_forward(x);
        for (int c = 0; c < 4; ++c)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) CHECK(y(0, c, i, j) == x(0, c, i, j) * x(0, c + 4, i, j));
        const auto g = oracle::random_tensor<double>(1, 4, 4, 4, 3);
        const auto gx = simple_gate_backward(x, g);
        auto loss = [&] { return oracle::inner(g, simple_gate_forward(x)); };
        CHECK(oracle::max_rel(gx, oracle::fd_gradient(x, loss)) < 1e-6);
    }

    TEST_CASE("property: simple_gate(concat(a, ones)) == a")
    {
        for (std::uint64_t s = 0; s < 10; ++s) {
            const int c = 1 + static_cast<int>(s % 5);
            const auto a = oracle::random_tensor<float>(2, c, 3 + static_cast<int>(s), 4, s);
            const auto y = simple_gate_forward(concat_channels(a, Tensor4<float>(2, c, a.h(), 4, 1.0f)));
            CHECK(y.vec() == a.vec());
        }
    }

    TEST_CASE("layer norm examples")
    {
        LayerNormParams<double> p(6);
        Tensor4<double> flat(1, 6, 3, 3, 0.37);
        const auto y = layer_norm2d_forward(flat, p);
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i]) < 1e-6);

        p.gamma.set_zero();
        oracle::randomize(p.beta, 4);
        const auto x = oracle::random_tensor<double>(2, 6, 3, 3, 5);
        const auto yb = layer_norm2d_forward(x, p);
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 6; ++c)
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) CHECK(yb(b, c, i, j) == p.beta[c]);
    }

    TEST_CASE("layer norm statistics and gradient")
    {
        LayerNormParams<double> p(6);
        auto x = oracle::random_tensor<double>(2, 6, 3, 3, 6, -3.0, 5.0);
        const auto y = layer_norm2d_forward(x, p);
        for (int b = 0; b < 2; ++b)
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    double m = 0, v = 0;
                    for (int c = 0; c < 6; ++c) m += y(b, c, i, j) / 6;
                    for (int c = 0; c < 6; ++c) v += (y(b, c, i, j) - m) * (y(b, c, i, j) - m) / 6;
                    CHECK(std::abs(m) < 1e-6);
                    CHECK(std::abs(v - 1.0) < 1e-4);
                }

        randomize_params(p, 7);
        const auto g = oracle::random_tensor<double>(2, 6, 3, 3, 8);
        LayerNormCache<double> cache;
        layer_norm2d_forward(x, p, &cache);
        LayerNormParams<double> grads = zeros_like(p);
        const auto gx = layer_norm2d_backward(p, cache, g, grads);
        auto loss = [&] { return oracle::inner(g, layer_norm2d_forward(x, p)); };
        CHECK(oracle::max_rel(gx, oracle::fd_gradient(x, loss)) < 1e-5);
        CHECK(oracle::max_rel(grads.gamma, oracle::fd_gradient(p.gamma, loss)) < 1e-5);
        CHECK(oracle::max_rel(grads.beta, oracle::fd_gradient(p.beta, loss)) < 1e-5);
    }

    TEST_CASE("channel attention examples")
    {
        ChannelAttentionParams<double> p(8, 4);
        const auto x = oracle::random_tensor<double>(1, 8, 4, 4, 9);
        CHECK(max_abs_diff(channel_attention_forward(x, p), mul(x, 0.5)) < 1e-15);

        randomize_params(p, 10, 1.0);
        CHECK(sum_squares(channel_attention_forward(Tensor4<double>(1, 8, 4, 4), p)) == 0.0);
    }

    TEST_CASE("channel attention oracle and gradient")
    {
        ChannelAttentionParams<double> p(8, 4);
        randomize_params(p, 7, 1.0);
        auto x = oracle::random_tensor<double>(1, 8, 4, 4, 7);
        CHECK(max_abs_diff(channel_attention_forward(x, p), se_oracle(x, p)) < 1e-12);

        const auto g = oracle::random_tensor<double>(1, 8, 4, 4, 11);
        ChannelAttentionCache<double> cache;
        channel_attention_forward(x, p, &cache);
        ChannelAttentionParams<double> grads = zeros_like(p);
        const auto gx = channel_attention_backward(p, cache, g, grads);
        auto loss = [&] { return oracle::inner(g, channel_attention_forward(x, p)); };
        CHECK(oracle::max_rel(gx, oracle::fd_gradient(x, loss)) < 1e-5);
        auto ps = param_list(p);
        auto gs = param_list(grads);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            CAPTURE(ps[i].name);
            CHECK(oracle::max_rel(*gs[i].tensor, oracle::fd_gradient(*ps[i].tensor, loss), 1e-6) < 1e-5);
        }
    }

    TEST_CASE("pixel shuffle definition and inverse")
    {
        Tensor4<float> x(Shape{1, 4, 1, 1}, std::vector<float>{1, 2, 3, 4});
        const auto y = pixel_shuffle(x, 2);
        CHECK(y.shape() == Shape{1, 1, 2, 2});
        CHECK(y(0, 0, 0, 0) == 1);
        CHECK(y(0, 0, 0, 1) == 2);
        CHECK(y(0, 0, 1, 0) == 3);
        CHECK(y(0, 0, 1, 1) == 4);

        const auto r = oracle::random_tensor<double>(2, 8, 3, 5, 12);
        const auto s = pixel_shuffle(r, 2);
        CHECK(s.shape() == Shape{2, 2, 6, 10});
        CHECK(pixel_unshuffle(s, 2).vec() == r.vec());
        CHECK(sum_squares(s) == doctest::Approx(sum_squares(r)).epsilon(1e-14));
    }

    TEST_CASE("property: pixel shuffle is an index bijection")
    {
        for (std::uint64_t seed = 0; seed < 12; ++seed) {
            const int rr = 1 + static_cast<int>(seed % 3);
            const int c = 1 + static_cast<int>(seed % 2), h = 1 + static_cast<int>(seed % 4), w = 2 + static_cast<int>(seed % 3);
            Tensor4<double> x(2, c * rr * rr, h, w);
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
            const auto y = pixel_shuffle(x, rr);
            std::vector<char> seen(x.size(), 0);
            for (int b = 0; b < 2; ++b)
                for (int ch = 0; ch < c; ++ch)
                    for (int yy = 0; yy < h * rr; ++yy)
                        for (int xx = 0; xx < w * rr; ++xx) {
                            const double v = y(b, ch, yy, xx);
                            const int i = yy % rr, j = xx % rr;
                            CHECK(v == x(b, ch * rr * rr + i * rr + j, yy / rr, xx / rr));
                            seen[static_cast<std::size_t>(v)] = 1;
                        }
            CHECK(std::count(seen.begin(), seen.end(), 1) == static_cast<long>(x.size()));
            CHECK(pixel_unshuffle(y, rr).vec() == x.vec());
        }
    }

    TEST_CASE("ffn examples and gradient")
    {
        FfnParams<double> p(8, 2);
        Rng rng(1);
        init_ffn(p, rng);
        p.expand.weight.set_zero();
        p.expand.bias.set_zero();
        auto x = oracle::random_tensor<double>(1, 8, 6, 6, 13);
        const auto y0 = ffn_forward(x, p);
        CHECK(y0.shape() == x.shape());
        CHECK(max_abs_diff(y0, add(x, conv2d_forward(Tensor4<double>(1, 16, 6, 6), p.project.weight, &p.project.bias,
                                                      p.project.spec))) < 1e-15);

        randomize_params(p, 14);
        const auto g = oracle::random_tensor<double>(1, 8, 6, 6, 15);
        FfnCache<double> cache;
        ffn_forward(x, p, &cache);
        FfnParams<double> grads = zeros_like(p);
        const auto gx = ffn_backward(p, cache, g, grads);
        auto loss = [&] { return oracle::inner(g, ffn_forward(x, p)); };
        CHECK(oracle::max_rel(gx, oracle::fd_gradient(x, loss)) < 1e-5);
        auto ps = param_list(p);
        auto gs = param_list(grads);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            CAPTURE(ps[i].name);
            CHECK(oracle::max_rel(*gs[i].tensor, oracle::fd_gradient(*ps[i].tensor, loss), 1e-6) < 1e-5);
        }
    }

    TEST_CASE("property: nnops adjoint dot-product tests")
    {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto x = oracle::random_tensor<double>(2, 8, 5, 4, seed);
            const auto dx = oracle::random_tensor<double>(2, 8, 5, 4, seed + 50);
            const double h = 1e-6;
            auto check = [&](const std::function<Tensor4<double>(const Tensor4<double>&)>& f, const Tensor4<double>& gx,
                             const Tensor4<double>& gout) {
                // <gout, J dx> by central differences against <J^T gout, dx>.
                const double jdx = (oracle::inner(gout, f(add(x, mul(dx, h)))) - oracle::inner(gout, f(sub(x, mul(dx, h))))) / (2 * h);
                const double rhs = oracle::inner(gx, dx);
                CHECK(std::abs(jdx - rhs) <= 1e-7 * std::max(1.0, std::abs(rhs)));
            };
            const auto g4 = oracle::random_tensor<double>(2, 4, 5, 4, seed + 60);
            check([](const Tensor4<double>& v) { return simple_gate_forward(v); }, simple_gate_backward(x, g4), g4);

            const auto g8 = oracle::random_tensor<double>(2, 8, 5, 4, seed + 70);
            LayerNormParams<double> ln(8);
            randomize_params(ln, seed + 80);
            LayerNormCache<double> lc;
            layer_norm2d_forward(x, ln, &lc);
            LayerNormParams<double> lg = zeros_like(ln);
            check([&](const Tensor4<double>& v) { return layer_norm2d_forward(v, ln); },
                  layer_norm2d_backward(ln, lc, g8, lg), g8);

            // Pixel shuffle is linear, so the adjoint identity is exact.
            const auto gs = oracle::random_tensor<double>(2, 2, 10, 8, seed + 90);
            CHECK(oracle::inner(gs, pixel_shuffle(dx, 2)) == doctest::Approx(oracle::inner(pixel_unshuffle(gs, 2), dx)).epsilon(1e-12));
        }
    }
}
