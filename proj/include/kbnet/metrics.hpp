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

#include "kbnet/tensor.hpp"

#include <cstdint>
#include <limits>
#include <string>

namespace kbnet {

/// img + N(0, (sigma_255 / 255)^2) per element, seeded, not clipped.
template <typename T>
Tensor4<T> add_gaussian_noise(const Tensor4<T>& img, double sigma_255, std::uint64_t seed);

/// Returned by psnr() for identical inputs.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE) over all elements.
template <typename T>
double psnr(const Tensor4<T>& a, const Tensor4<T>& b, double peak = 1.0);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Gaussian-window SSIM (11x11, sigma 1.5, K1 = 0.01, K2 = 0.03, peak 1)
/// over the valid region, averaged over channels and batch.
template <typename T>
double ssim(const Tensor4<T>& a, const Tensor4<T>& b);

enum class LossKind { psnr_loss, l1 };

std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

template <typename T>
struct LossResult {
    double value = 0.0;
    Tensor4<T> grad; // dL/dpred
};

/// psnr_loss: mean over images of 10 log10(mse_b + 1e-8), i.e. minus the
/// per-image PSNR at peak 1. l1: mean |pred - target|, with sign(0) = 0.
template <typename T>
LossResult<T> loss_forward_backward(const Tensor4<T>& pred, const Tensor4<T>& target, LossKind kind);

inline constexpr double kPsnrLossEpsilon = 1e-8;

} // namespace kbnet
