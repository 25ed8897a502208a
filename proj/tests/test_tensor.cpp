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

#include "kbnet/conv.hpp"

#include <doctest.h>

using namespace kbnet;

TEST_SUITE("tensor")
{
    TEST_CASE("elementwise examples")
    {
        Tensor4<float> a(Shape{1, 1, 1, 2}, std::vector<float>{1, 2});
        Tensor4<float> b(Shape{1, 1, 1, 2}, std::vector<float>{3, 4});
        const auto s = add(a, b);
        CHECK(s[0] == 4);
        CHECK(s[1] == 6);

        const auto x = oracle::random_tensor<float>(2, 3, 4, 5, 1);
        const auto z = mul(x, 0.0f);
        CHECK(z.shape() == x.shape());
        CHECK(sum_squares(z) == 0.0);

        Tensor4<double> seq(1, 1, 10, 10);
        for (std::size_t i = 0; i < seq.size(); ++i) seq[i] = static_cast<double>(i + 1);
        CHECK(sum(seq) == 5050.0);
    }

    TEST_CASE("shape mismatch throws")
    {
        Tensor4<float> a(1, 2, 3, 3), b(1, 2, 3, 4);
        CHECK_THROWS_AS(add(a, b), ShapeError);
        CHECK_THROWS_AS((Tensor4<float>(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3})), ShapeError);
    }

    TEST_CASE("slice and concat are inverse")
    {
        const auto x = oracle::random_tensor<double>(2, 6, 3, 4, 2);
        const auto a = slice_channels(x, 0, 2);
        const auto b = slice_channels(x, 2, 4);
        CHECK(max_abs_diff(concat_channels(a, b), x) == 0.0);
    }

    TEST_CASE("finite scan")
    {
        Tensor4<float> x(1, 1, 2, 2, 1.0f);
        CHECK(all_finite(x));
        x[3] = std::nanf("");
        CHECK_FALSE(all_finite(x));
    }

    TEST_CASE("conv spec validation")
    {
        CHECK_THROWS_AS(ConvSpec::same(6, 4, 3, 4).validate(), ShapeError);
        CHECK_THROWS_AS((ConvSpec{4, 4, 3, 3, 1, 1, true}).validate(), ShapeError);
        CHECK_NOTHROW(ConvSpec::same(8, 4, 3, 2).validate());
    }

    TEST_CASE("conv delta kernel is identity")
    {
        const auto x = oracle::random_tensor<float>(1, 4, 6, 7, 3);
        const ConvSpec spec = ConvSpec::same(4, 4, 3, 4, false);
        Tensor4<float> w(spec.weight_shape());
        for (int c = 0; c < 4; ++c) w(c, 0, 1, 1) = 1.0f;
        CHECK(max_abs_diff(conv2d_forward(x, w, nullptr, spec), x) == 0.0);
    }

    TEST_CASE("all-ones depthwise kernel on constant image")
    {
        Tensor4<float> x(1, 2, 5, 5, 7.0f);
        const ConvSpec spec = ConvSpec::same(2, 2, 3, 2, false);
        Tensor4<float> w(spec.weight_shape(), 1.0f);
        const auto y = conv2d_forward(x, w, nullptr, spec);
        for (int c = 0; c < 2; ++c)
            for (int i = 1; i < 4; ++i)
                for (int j = 1; j < 4; ++j) CHECK(y(0, c, i, j) == 63.0f);
        CHECK(y(0, 0, 0, 0) == 28.0f); // corner sees 4 pixels
    }

    TEST_CASE("conv matches direct summation")
    {
        const auto x = oracle::random_tensor<float>(1, 4, 5, 5, 42);
        const ConvSpec spec = ConvSpec::same(4, 4, 3, 2);
        auto w = oracle::random_tensor<float>(4, 2, 3, 3, 43);
        auto b = oracle::random_tensor<float>(1, 4, 1, 1, 44);
        CHECK(max_abs_diff(conv2d_forward(x, w, &b, spec), oracle::conv(x, w, &b, 1, 1, 2)) < 1e-6);

        // Stride 2, non-square input, several kernel sizes.
        for (int k : {1, 3, 5}) {
            const auto x2 = oracle::random_tensor<double>(2, 6, 9, 7, 45 + k);
            const ConvSpec s2{6, 9, k, 2, k / 2, 3, true};
            auto w2 = oracle::random_tensor<double>(9, 2, k, k, 46 + k);
            auto b2 = oracle::random_tensor<double>(1, 9, 1, 1, 47 + k);
            CHECK(max_abs_diff(conv2d_forward(x2, w2, &b2, s2), oracle::conv(x2, w2, &b2, 2, k / 2, 3)) < 1e-12);
        }
    }

    TEST_CASE("conv backward: zeros, 1x1 outer product, finite differences")
    {
        const ConvSpec spec = ConvSpec::same(4, 4, 3, 2);
        auto x = oracle::random_tensor<double>(2, 4, 8, 8, 5);
        auto w = oracle::random_tensor<double>(4, 2, 3, 3, 6);
        auto b = oracle::random_tensor<double>(1, 4, 1, 1, 7);

        const auto zero = conv2d_backward(x, w, Tensor4<double>(2, 4, 8, 8), spec);
        CHECK(sum_squares(zero.grad_x) == 0.0);
        CHECK(sum_squares(zero.grad_w) == 0.0);
        CHECK(sum_squares(zero.grad_b) == 0.0);

        {
            const ConvSpec s1 = ConvSpec::same(3, 2, 1);
            const auto xs = oracle::random_tensor<double>(1, 3, 1, 1, 8);
            const auto gs = oracle::random_tensor<double>(1, 2, 1, 1, 9);
            const auto ws = oracle::random_tensor<double>(2, 3, 1, 1, 10);
            const auto g = conv2d_backward(xs, ws, gs, s1);
            for (int o = 0; o < 2; ++o)
                for (int i = 0; i < 3; ++i) CHECK(g.grad_w(o, i, 0, 0) == doctest::Approx(gs[o] * xs[i]).epsilon(1e-15));
        }

        const auto gout = oracle::random_tensor<double>(2, 4, 8, 8, 11);
        const auto g = conv2d_backward(x, w, gout, spec);
        auto loss = [&] { return oracle::inner(gout, conv2d_forward(x, w, &b, spec)); };
        CHECK(oracle::max_rel(g.grad_x, oracle::fd_gradient(x, loss)) < 1e-6);
        CHECK(oracle::max_rel(g.grad_w, oracle::fd_gradient(w, loss)) < 1e-6);
        CHECK(oracle::max_rel(g.grad_b, oracle::fd_gradient(b, loss)) < 1e-6);
    }

    TEST_CASE("property: conv is linear in input and weight")
    {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const ConvSpec spec{8, 8, 3, 1 + static_cast<int>(seed % 2), 1, 4, false};
            const auto x = oracle::random_tensor<double>(1, 8, 7, 6, seed);
            const auto x2 = oracle::random_tensor<double>(1, 8, 7, 6, seed + 100);
            const auto w1 = oracle::random_tensor<double>(8, 2, 3, 3, seed + 200);
            const auto w2 = oracle::random_tensor<double>(8, 2, 3, 3, seed + 300);
            const double a = 0.7, c = -1.3;
            const auto lhs = conv2d_forward(x, add(mul(w1, a), mul(w2, c)), nullptr, spec);
            const auto rhs = add(mul(conv2d_forward(x, w1, nullptr, spec), a), mul(conv2d_forward(x, w2, nullptr, spec), c));
            CHECK(max_abs_diff(lhs, rhs) < 1e-10);
            const auto lx = conv2d_forward(add(mul(x, a), mul(x2, c)), w1, nullptr, spec);
            const auto rx = add(mul(conv2d_forward(x, w1, nullptr, spec), a), mul(conv2d_forward(x2, w1, nullptr, spec), c));
            CHECK(max_abs_diff(lx, rx) < 1e-10);
        }
    }

    TEST_CASE("property: conv adjoint dot-product test")
    {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const int k = 1 + 2 * static_cast<int>(seed % 3);
            const int stride = 1 + static_cast<int>(seed % 2);
            const ConvSpec spec{4, 6, k, stride, k / 2, 2, false};
            const auto x = oracle::random_tensor<double>(2, 4, 7, 9, seed);
            const auto w = oracle::random_tensor<double>(6, 2, k, k, seed + 1);
            const auto dx = oracle::random_tensor<double>(2, 4, 7, 9, seed + 2);
            const auto y = conv2d_forward(x, w, nullptr, spec);
            const auto gout = oracle::random_tensor<double>(y.n(), y.c(), y.h(), y.w(), seed + 3);
            const auto g = conv2d_backward(x, w, gout, spec);
            const double lhs = oracle::inner(gout, conv2d_forward(dx, w, nullptr, spec));
            const double rhs = oracle::inner(g.grad_x, dx);
            CHECK(std::abs(lhs - rhs) <= 1e-8 * std::max(std::abs(lhs), 1.0));
        }
    }

    TEST_CASE("conv is deterministic")
    {
        const ConvSpec spec = ConvSpec::same(8, 8, 3, 1);
        const auto x = oracle::random_tensor<float>(2, 8, 16, 16, 1);
        const auto w = oracle::random_tensor<float>(8, 8, 3, 3, 2);
        CHECK(conv2d_forward(x, w, nullptr, spec).vec() == conv2d_forward(x, w, nullptr, spec).vec());
    }
}
