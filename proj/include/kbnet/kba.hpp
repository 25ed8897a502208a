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
#include "kbnet/params.hpp"
#include "kbnet/tensor.hpp"

#include <string>

namespace kbnet {

/// Channels per group of every kernel basis.
inline constexpr int kKbaGroupChannels = 4;

enum class NormalizeMode { none, softmax };
enum class KbaPath { fuse_kernels, fuse_outputs };

std::string to_string(NormalizeMode m);
NormalizeMode parse_normalize_mode(const std::string& s);
std::string to_string(KbaPath p);

struct KbaConfig {
    int channels = 16;
    int n_bases = 8;
    int kernel_size = 3;
    NormalizeMode normalize_mode = NormalizeMode::none;

    /// Throws ShapeError unless C % 4 == 0, C % N == 0, N even and K odd.
    void validate() const;
};

/// Kernel-basis attention parameters.
///
/// `bases` has shape (N, C, 4, K*K): basis t is a grouped convolution kernel
/// with C outputs and C/4 groups of 4 input channels. The coefficient branch is
/// coeff_conv1 (3x3, C -> N, N groups), SimpleGate (N -> N/2) and coeff_conv2
/// (3x3, N/2 -> N). feature_transform is the 1x1 convolution producing X_e.
template <typename T>
struct KbaParams {
    using scalar_type = T;

    KbaConfig config;
    Tensor4<T> bases;
    Conv2d<T> coeff_conv1;
    Conv2d<T> coeff_conv2;
    Conv2d<T> feature_transform;

    KbaParams() = default;
    explicit KbaParams(const KbaConfig& cfg);

    int channels() const noexcept { return config.channels; }
    int n_bases() const noexcept { return config.n_bases; }
    int kernel_size() const noexcept { return config.kernel_size; }
};

template <typename T>
void collect(KbaParams<T>& p, const std::string& prefix, ParamList<T>& out, Scope s = Scope::active)
{
    out.push_back({prefix + ".bases", &p.bases});
    collect(p.coeff_conv1, prefix + ".coeff_conv1", out, s);
    collect(p.coeff_conv2, prefix + ".coeff_conv2", out, s);
    collect(p.feature_transform, prefix + ".feature_transform", out, s);
}

/// Bases: fan-in uniform scaled by 1/sqrt(N). coeff_conv2 is scaled by 0.1 so
/// the predicted coefficients start near zero.
template <typename T>
void init_kba(KbaParams<T>& p, Rng& rng);

template <typename T>
struct KbaCache {
    Tensor4<T> x;
    Tensor4<T> coeff_hidden; // coeff_conv1 output, N channels
    Tensor4<T> coeff_gated;  // after SimpleGate, N/2 channels
    Tensor4<T> coeffs;       // F, (n, N, h, w), after optional softmax
    Tensor4<T> xe;           // feature_transform(x)
    Tensor4<T> responses;    // basis responses; empty if the path did not form them
};

// --- aggregation stage: operates on given coefficients F and features X_e ---

/// M[b, i, j] = sum_t F[b, t, i, j] * bases[t], returned as a (1, C, 4, K*K)
/// tensor.
template <typename T>
Tensor4<T> fuse_kernels_at(const Tensor4<T>& coeffs, const Tensor4<T>& bases, int b, int i, int j);

/// Literal per-pixel evaluation: materialise M[i, j], then run the grouped
/// dot product over the zero-padded K x K neighbourhood of X_e.
template <typename T>
Tensor4<T> aggregate_oracle(const Tensor4<T>& xe, const Tensor4<T>& coeffs, const Tensor4<T>& bases, int kernel_size);

/// Kernel fusion path: per-pixel kernels are formed a row at a time, then
/// applied to the unfolded neighbourhoods.
template <typename T>
Tensor4<T> aggregate_fuse_kernels(const Tensor4<T>& xe, const Tensor4<T>& coeffs, const Tensor4<T>& bases,
                                  int kernel_size);

/// Static grouped convolution of X_e with every basis.
///
/// Result is (n, N*C, h, w) with channel index g*4N + t*4 + o for group g,
/// basis t and output o within the group.
template <typename T>
Tensor4<T> basis_responses(const Tensor4<T>& xe, const Tensor4<T>& bases, int kernel_size);

/// Output fusion path: out[b, c, p] = sum_t F[b, t, p] * Y_t[b, c, p].
template <typename T>
Tensor4<T> aggregate_fuse_outputs(const Tensor4<T>& xe, const Tensor4<T>& coeffs, const Tensor4<T>& bases,
                                  int kernel_size, Tensor4<T>* responses_out = nullptr);

template <typename T>
struct AggregateGrads {
    Tensor4<T> grad_xe;
    Tensor4<T> grad_coeffs;
    Tensor4<T> grad_bases;
};

/// Adjoint of the aggregation stage. `responses` may be empty, in which case
/// it is recomputed.
template <typename T>
AggregateGrads<T> aggregate_backward(const Tensor4<T>& xe, const Tensor4<T>& coeffs, const Tensor4<T>& bases,
                                     int kernel_size, const Tensor4<T>& responses, const Tensor4<T>& grad_out);

// --- full operator ---

template <typename T>
Tensor4<T> predict_coefficients(const Tensor4<T>& x, const KbaParams<T>& p, KbaCache<T>* cache = nullptr);

/// Softmax over the channel axis at every pixel.
template <typename T>
Tensor4<T> softmax_channels(const Tensor4<T>& logits);

template <typename T>
Tensor4<T> kba_oracle(const Tensor4<T>& x, const KbaParams<T>& p);

template <typename T>
Tensor4<T> kba_forward(const Tensor4<T>& x, const KbaParams<T>& p, KbaPath path = KbaPath::fuse_outputs,
                       KbaCache<T>* cache = nullptr);

/// Accumulates into `grads` and returns dL/dx.
template <typename T>
Tensor4<T> kba_backward(const KbaParams<T>& p, const KbaCache<T>& cache, const Tensor4<T>& grad_out,
                        KbaParams<T>& grads);

} // namespace kbnet
