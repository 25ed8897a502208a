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

#include "kbnet/metrics.hpp"

#include "kbnet/params.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace kbnet {

template <typename T>
Tensor4<T> add_gaussian_noise(const Tensor4<T>& img, double sigma_255, std::uint64_t seed)
{
    Tensor4<T> out = img;
    if (sigma_255 == 0.0) {
        return out;
    }
    Rng rng(seed);
    const double s = sigma_255 / 255.0;
    for (auto& v : out.span()) {
        v = static_cast<T>(static_cast<double>(v) + s * rng.normal());
    }
    return out;
}

template <typename T>
double psnr(const Tensor4<T>& a, const Tensor4<T>& b, double peak)
{
    check_same_shape(a.shape(), b.shape(), "psnr");
    const double mse = sum_squares(sub(a, b)) / static_cast<double>(a.size());
    if (mse == 0.0) {
        return kPsnrIdentical;
    }
    return 10.0 * std::log10(peak * peak / mse);
}

namespace {

std::array<double, kSsimWindow> gaussian_window()
{
    std::array<double, kSsimWindow> g{};
    double total = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        total += g[i];
    }
    for (auto& v : g) {
        v /= total;
    }
    return g;
}

// Separable valid-region filter: (h, w) -> (h - 10, w - 10).
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::array<double, kSsimWindow>& g)
{
    const int ho = h - kSsimWindow + 1;
    const int wo = w - kSsimWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * wo);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < wo; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) {
                acc += g[k] * src[static_cast<std::size_t>(y) * w + x + k];
            }
            rows[static_cast<std::size_t>(y) * wo + x] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(ho) * wo);
    for (int y = 0; y < ho; ++y) {
        for (int x = 0; x < wo; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) {
                acc += g[k] * rows[static_cast<std::size_t>(y + k) * wo + x];
            }
            out[static_cast<std::size_t>(y) * wo + x] = acc;
        }
    }
    return out;
}

} // namespace

template <typename T>
double ssim(const Tensor4<T>& a, const Tensor4<T>& b)
{
    check_same_shape(a.shape(), b.shape(), "ssim");
    if (a.h() < kSsimWindow || a.w() < kSsimWindow) {
        throw ShapeError("ssim: image " + std::to_string(a.h()) + "x" + std::to_string(a.w()) +
                         " is smaller than the 11x11 window");
    }
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const auto g = gaussian_window();
    const int h = a.h();
    const int w = a.w();
    const std::size_t hw = static_cast<std::size_t>(h) * w;

    double total = 0.0;
    std::vector<double> pa(hw), pb(hw), paa(hw), pbb(hw), pab(hw);
    for (int n = 0; n < a.n(); ++n) {
        for (int c = 0; c < a.c(); ++c) {
            const T* sa = a.plane(n, c);
            const T* sb = b.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) {
                pa[i] = sa[i];
                pb[i] = sb[i];
                paa[i] = pa[i] * pa[i];
                pbb[i] = pb[i] * pb[i];
                pab[i] = pa[i] * pb[i];
            }
            const auto mu_a = filter_valid(pa, h, w, g);
            const auto mu_b = filter_valid(pb, h, w, g);
            const auto e_aa = filter_valid(paa, h, w, g);
            const auto e_bb = filter_valid(pbb, h, w, g);
            const auto e_ab = filter_valid(pab, h, w, g);
            double acc = 0.0;
            for (std::size_t i = 0; i < mu_a.size(); ++i) {
                const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
                const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
                const double cov = e_ab[i] - mu_a[i] * mu_b[i];
                const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
                const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
                acc += num / den;
            }
            total += acc / static_cast<double>(mu_a.size());
        }
    }
    return total / static_cast<double>(a.n() * a.c());
}

std::string to_string(LossKind k)
{
    return k == LossKind::l1 ? "l1" : "psnr_loss";
}

LossKind parse_loss_kind(const std::string& s)
{
    if (s == "psnr_loss" || s == "psnr") {
        return LossKind::psnr_loss;
    }
    if (s == "l1") {
        return LossKind::l1;
    }
    throw std::invalid_argument("unknown loss kind '" + s + "' (expected psnr_loss or l1)");
}

template <typename T>
LossResult<T> loss_forward_backward(const Tensor4<T>& pred, const Tensor4<T>& target, LossKind kind)
{
    check_same_shape(pred.shape(), target.shape(), "loss");
    LossResult<T> r;
    r.grad = Tensor4<T>(pred.shape());
    const std::size_t per_image = static_cast<std::size_t>(pred.c()) * pred.h() * pred.w();
    const T* p = pred.data();
    const T* t = target.data();
    T* g = r.grad.data();

    if (kind == LossKind::l1) {
        const double inv = 1.0 / static_cast<double>(pred.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
            acc += std::abs(d);
            g[i] = static_cast<T>(d > 0 ? inv : (d < 0 ? -inv : 0.0));
        }
        r.value = acc * inv;
        return r;
    }

    const double scale = 10.0 / std::numbers::ln10;
    const double inv_batch = 1.0 / pred.n();
    double acc = 0.0;
    for (int n = 0; n < pred.n(); ++n) {
        const std::size_t base = n * per_image;
        double se = 0.0;
        for (std::size_t i = 0; i < per_image; ++i) {
            const double d = static_cast<double>(p[base + i]) - static_cast<double>(t[base + i]);
            se += d * d;
        }
        const double mse = se / static_cast<double>(per_image) + kPsnrLossEpsilon;
        acc += scale * std::log(mse);
        const double k = scale * inv_batch / mse * 2.0 / static_cast<double>(per_image);
        for (std::size_t i = 0; i < per_image; ++i) {
            g[base + i] = static_cast<T>(k * (static_cast<double>(p[base + i]) - static_cast<double>(t[base + i])));
        }
    }
    r.value = acc * inv_batch;
    return r;
}

#define KBNET_INSTANTIATE(T)                                                                        \
    template Tensor4<T> add_gaussian_noise(const Tensor4<T>&, double, std::uint64_t);              \
    template double psnr(const Tensor4<T>&, const Tensor4<T>&, double);                            \
    template double ssim(const Tensor4<T>&, const Tensor4<T>&);                                    \
    template LossResult<T> loss_forward_backward(const Tensor4<T>&, const Tensor4<T>&, LossKind);

KBNET_INSTANTIATE(float)
KBNET_INSTANTIATE(double)

#undef KBNET_INSTANTIATE

} // namespace kbnet
