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
#include "kbnet/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace kbnet {

/// A named view of one trainable tensor. Names are hierarchical
/// ("enc0.block1.mff.kba.bases") and stable across builds.
template <typename T>
struct ParamRef {
    std::string name;
    Tensor4<T>* tensor;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

/// `active` lists only tensors that take part in the forward pass (ablated
/// branches are skipped); `all` lists every allocated tensor.
enum class Scope { active, all };

template <typename T>
void collect(Conv2d<T>& conv, const std::string& prefix, ParamList<T>& out, Scope = Scope::active)
{
    out.push_back({prefix + ".weight", &conv.weight});
    if (conv.spec.bias) {
        out.push_back({prefix + ".bias", &conv.bias});
    }
}

template <typename P>
auto param_list(P& p, const std::string& prefix = "", Scope scope = Scope::active)
{
    ParamList<typename P::scalar_type> out;
    collect(p, prefix, out, scope);
    return out;
}

/// Copy of `p` with every registered tensor zeroed; used as a gradient buffer.
template <typename P>
P zeros_like(const P& p)
{
    P z = p;
    for (auto& ref : param_list(z, "", Scope::all)) {
        ref.tensor->set_zero();
    }
    return z;
}

template <typename P>
std::size_t param_count(P& p)
{
    std::size_t n = 0;
    for (auto& ref : param_list(p)) {
        n += ref.tensor->size();
    }
    return n;
}

inline std::string join_name(const std::string& prefix, const std::string& leaf)
{
    return prefix.empty() ? leaf : prefix + "." + leaf;
}

/// Seeded generator shared by initialisation, sampling and noise synthesis.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
    std::uint64_t next() { return engine_(); }
    /// Uniform integer in [0, n).
    int index(int n) { return std::uniform_int_distribution<int>(0, n - 1)(engine_); }

private:
    std::mt19937_64 engine_;
};

/// SplitMix64 finaliser; derives independent stream seeds from (seed, salt).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

template <typename T>
void fill_uniform(Tensor4<T>& t, Rng& rng, double lo, double hi)
{
    for (auto& v : t.span()) {
        v = static_cast<T>(rng.uniform(lo, hi));
    }
}

template <typename T>
void fill_normal(Tensor4<T>& t, Rng& rng, double stddev)
{
    for (auto& v : t.span()) {
        v = static_cast<T>(stddev * rng.normal());
    }
}

/// Fan-in scaled uniform init, bound 1/sqrt(fan_in) for weight and bias,
/// times `scale`.
template <typename T>
void init_conv(Conv2d<T>& conv, Rng& rng, double scale = 1.0)
{
    const int k = conv.spec.kernel_size;
    const double bound = scale / std::sqrt(static_cast<double>(conv.spec.in_per_group() * k * k));
    fill_uniform(conv.weight, rng, -bound, bound);
    if (conv.spec.bias) {
        fill_uniform(conv.bias, rng, -bound, bound);
    }
}

} // namespace kbnet
