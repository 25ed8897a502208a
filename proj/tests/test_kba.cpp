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

#include "kbnet/kba.hpp"

#include <doctest.h>

#include <numeric>

using namespace kbnet;

namespace {

// bases[t] as a static grouped-conv weight (C, 4, K, K).
Tensor4<double> basis_weight(const Tensor4<double>& bases, int t, int k)
{
    Tensor4<double> w(bases.c(), 4, k, k);
    std::copy_n(bases.data() + static_cast<std::size_t>(t) * w.size(), w.size(), w.data());
    return w;
}

KbaParams<double> random_kba(int c, int n, int k, NormalizeMode mode, std::uint64_t seed)
{
    KbaParams<double> p(KbaConfig{c, n, k, mode});
    for (auto& ref : param_list(p)) oracle::randomize(*ref.tensor, seed++, 0.5);
    return p;
}

} // namespace

TEST_SUITE("kba")
{
    TEST_CASE("config validation")
    {
        CHECK_THROWS_AS((KbaConfig{6, 2, 3}).validate(), ShapeError);  // C % 4
        CHECK_THROWS_AS((KbaConfig{8, 3, 3}).validate(), ShapeError);  // N odd
        CHECK_THROWS_AS((KbaConfig{12, 8, 3}).validate(), ShapeError); // C % N
        CHECK_THROWS_AS((KbaConfig{8, 4, 2}).validate(), ShapeError);  // K even
        CHECK_NOTHROW((KbaConfig{8, 4, 3}).validate());
    }

    TEST_CASE("coefficients: zero weights, shape, softmax sums")
    {
        const auto x = oracle::random_tensor<double>(2, 16, 6, 6, 3);
        KbaParams<double> zero(KbaConfig{16, 8, 3, NormalizeMode::none});
        const auto f0 = predict_coefficients(x, zero);
        CHECK(f0.shape() == Shape{2, 8, 6, 6});
        CHECK(sum_squares(f0) == 0.0);
        zero.config.normalize_mode = NormalizeMode::softmax;
        const auto fs = predict_coefficients(x, zero);
        for (std::size_t i = 0; i < fs.size(); ++i) CHECK(fs[i] == doctest::Approx(1.0 / 8).epsilon(1e-15));

        const auto p = random_kba(16, 8, 3, NormalizeMode::softmax, 3);
        const auto f = predict_coefficients(x, p);
        for (int b = 0; b < 2; ++b)
            for (int i = 0; i < 6; ++i)
                for (int j = 0; j < 6; ++j) {
                    double s = 0;
                    for (int t = 0; t < 8; ++t) {
                        CHECK(f(b, t, i, j) > 0.0);
                        CHECK(f(b, t, i, j) < 1.0);
                        s += f(b, t, i, j);
                    }
                    CHECK(std::abs(s - 1.0) <= 1e-6);
                }
    }

    TEST_CASE("fuse_kernels_at: selection, annihilator, cancellation")
    {
        const auto bases = oracle::random_tensor<double>(3, 8, 4, 9, 4);
        Tensor4<double> f(1, 3, 2, 2);
        f(0, 1, 1, 0) = 1.0;
        const auto m = fuse_kernels_at(f, bases, 0, 1, 0);
        CHECK(std::equal(m.data(), m.data() + m.size(), bases.data() + m.size()));
        CHECK(sum_squares(fuse_kernels_at(f, bases, 0, 0, 0)) == 0.0);

        Tensor4<double> pair(2, 8, 4, 9);
        for (std::size_t i = 0; i < pair.size() / 2; ++i) {
            pair[i] = bases[i];
            pair[i + pair.size() / 2] = -bases[i];
        }
        Tensor4<double> half(1, 2, 1, 1, 0.5);
        CHECK(sum_squares(fuse_kernels_at(half, pair, 0, 0, 0)) == 0.0);
    }

    TEST_CASE("N = 1 with unit coefficients is a static grouped conv")
    {
        const auto xe = oracle::random_tensor<double>(2, 8, 5, 6, 5);
        auto bases = oracle::random_tensor<double>(1, 8, 4, 9, 6);
        const Tensor4<double> ones(2, 1, 5, 6, 1.0);
        const auto w = basis_weight(bases, 0, 3);
        const auto ref = oracle::conv(xe, w, nullptr, 1, 1, 2);
        CHECK(max_abs_diff(aggregate_oracle(xe, ones, bases, 3), ref) < 1e-12);
        CHECK(max_abs_diff(aggregate_fuse_kernels(xe, ones, bases, 3), ref) < 1e-12);
        CHECK(max_abs_diff(aggregate_fuse_outputs(xe, ones, bases, 3), ref) < 1e-12);

        // Gradient w.r.t. the basis reduces to the static weight gradient.
        const auto g = oracle::random_tensor<double>(2, 8, 5, 6, 7);
        const auto ag = aggregate_backward(xe, ones, bases, 3, Tensor4<double>(), g);
        const auto cg = conv2d_backward(xe, w, g, ConvSpec::same(8, 8, 3, 2, false));
        CHECK(max_abs_diff(ag.grad_bases.reshaped(cg.grad_w.shape()), cg.grad_w) < 1e-12);
        CHECK(max_abs_diff(ag.grad_xe, cg.grad_x) < 1e-12);
    }

    TEST_CASE("zero features or zero coefficients give zero output")
    {
        auto p = random_kba(8, 4, 3, NormalizeMode::none, 8);
        p.feature_transform.weight.set_zero();
        p.feature_transform.bias.set_zero();
        const auto x = oracle::random_tensor<double>(1, 8, 5, 5, 9);
        CHECK(sum_squares(kba_oracle(x, p)) == 0.0);
        CHECK(sum_squares(kba_forward(x, p, KbaPath::fuse_kernels)) == 0.0);

        auto q = random_kba(8, 4, 3, NormalizeMode::none, 10);
        q.coeff_conv2.weight.set_zero();
        q.coeff_conv2.bias.set_zero();
        CHECK(sum_squares(kba_forward(x, q)) == 0.0);
    }

    TEST_CASE("aggregation paths against direct per-pixel oracle")
    {
        for (std::uint64_t seed = 0; seed < 6; ++seed) {
            const int k = 1 + 2 * static_cast<int>(seed % 3);
            const int n = 1 + static_cast<int>(seed % 4);
            const auto xe = oracle::random_tensor<double>(1, 8, 6, 5, seed);
            const auto f = oracle::random_tensor<double>(1, n, 6, 5, seed + 1);
            const auto bases = oracle::random_tensor<double>(n, 8, 4, k * k, seed + 2);
            // Sum over bases of coefficient-weighted static conv responses.
            Tensor4<double> ref(1, 8, 6, 5);
            for (int t = 0; t < n; ++t) {
                const auto y = oracle::conv(xe, basis_weight(bases, t, k), nullptr, 1, k / 2, 2);
                for (int c = 0; c < 8; ++c)
                    for (int i = 0; i < 6; ++i)
                        for (int j = 0; j < 5; ++j) ref(0, c, i, j) += f(0, t, i, j) * y(0, c, i, j);
            }
            CHECK(max_abs_diff(aggregate_oracle(xe, f, bases, k), ref) < 1e-12);
            CHECK(max_abs_diff(aggregate_fuse_kernels(xe, f, bases, k), ref) < 1e-12);
            CHECK(max_abs_diff(aggregate_fuse_outputs(xe, f, bases, k), ref) < 1e-12);
        }
    }

    TEST_CASE("full operator paths agree (single and double)")
    {
        const auto p = random_kba(8, 4, 3, NormalizeMode::none, 11);
        const auto x = oracle::random_tensor<double>(1, 8, 6, 6, 12);
        const auto ref = kba_oracle(x, p);
        CHECK(ref.shape() == x.shape());
        CHECK(max_abs_diff(kba_forward(x, p, KbaPath::fuse_kernels), ref) < 1e-10);
        CHECK(max_abs_diff(kba_forward(x, p, KbaPath::fuse_outputs), ref) < 1e-10);

        KbaParams<float> pf(p.config);
        auto src = param_list(const_cast<KbaParams<double>&>(p));
        auto dst = param_list(pf);
        for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->cast<float>();
        const auto xf = x.cast<float>();
        const auto reff = kba_oracle(xf, pf);
        CHECK(max_abs_diff(kba_forward(xf, pf, KbaPath::fuse_kernels), reff) < 1e-5);
        CHECK(max_abs_diff(kba_forward(xf, pf, KbaPath::fuse_outputs), reff) < 1e-5);
    }

    TEST_CASE("property: permuting bases with coefficient channels is invariant")
    {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto mode = seed % 2 ? NormalizeMode::softmax : NormalizeMode::none;
            const auto p = random_kba(8, 4, 3, mode, 20 + seed * 10);
            const auto x = oracle::random_tensor<double>(1, 8, 5, 5, seed);
            std::vector<int> perm(4);
            std::iota(perm.begin(), perm.end(), 0);
            std::mt19937_64 gen(seed);
            std::shuffle(perm.begin(), perm.end(), gen);
            auto q = p;
            const std::size_t bsz = q.bases.size() / 4;
            const std::size_t wsz = q.coeff_conv2.weight.size() / 4;
            for (int t = 0; t < 4; ++t) {
                std::copy_n(p.bases.data() + perm[t] * bsz, bsz, q.bases.data() + t * bsz);
                std::copy_n(p.coeff_conv2.weight.data() + perm[t] * wsz, wsz, q.coeff_conv2.weight.data() + t * wsz);
                q.coeff_conv2.bias[t] = p.coeff_conv2.bias[perm[t]];
            }
            CHECK(max_abs_diff(kba_forward(x, p), kba_forward(x, q)) < 1e-12);
        }
    }

    TEST_CASE("backward: zero upstream and finite differences")
    {
        for (auto mode : {NormalizeMode::none, NormalizeMode::softmax}) {
            auto p = random_kba(8, 4, 3, mode, 30);
            auto x = oracle::random_tensor<double>(1, 8, 5, 5, 31);
            KbaCache<double> cache;
            kba_forward(x, p, KbaPath::fuse_outputs, &cache);

            KbaParams<double> gz = zeros_like(p);
            const auto gxz = kba_backward(p, cache, Tensor4<double>(1, 8, 5, 5), gz);
            CHECK(sum_squares(gxz) == 0.0);
            for (auto& ref : param_list(gz)) CHECK(sum_squares(*ref.tensor) == 0.0);

            const auto g = oracle::random_tensor<double>(1, 8, 5, 5, 32);
            KbaParams<double> grads = zeros_like(p);
            const auto gx = kba_backward(p, cache, g, grads);
            auto loss = [&] { return oracle::inner(g, kba_forward(x, p)); };
            CHECK(oracle::max_rel(gx, oracle::fd_gradient(x, loss), 1e-6) < 1e-5);
            auto ps = param_list(p);
            auto gs = param_list(grads);
            for (std::size_t i = 0; i < ps.size(); ++i) {
                CAPTURE(ps[i].name);
                CHECK(oracle::max_rel(*gs[i].tensor, oracle::fd_gradient(*ps[i].tensor, loss), 1e-6) < 1e-5);
            }
        }
    }

    TEST_CASE("property: kba adjoint dot-product test")
    {
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            auto p = random_kba(8, 4, 3, NormalizeMode::none, 40 + seed);
            const auto x = oracle::random_tensor<double>(1, 8, 6, 4, seed);
            const auto dx = oracle::random_tensor<double>(1, 8, 6, 4, seed + 9);
            const auto g = oracle::random_tensor<double>(1, 8, 6, 4, seed + 19);
            KbaCache<double> cache;
            kba_forward(x, p, KbaPath::fuse_outputs, &cache);
            KbaParams<double> grads = zeros_like(p);
            const double rhs = oracle::inner(kba_backward(p, cache, g, grads), dx);
            const double h = 1e-5;
            const double lhs = (oracle::inner(g, kba_forward(add(x, mul(dx, h)), p)) -
                                oracle::inner(g, kba_forward(sub(x, mul(dx, h)), p))) / (2 * h);
            CHECK(std::abs(lhs - rhs) <= 1e-8 * std::max(1.0, std::abs(rhs)));
        }
    }
}
