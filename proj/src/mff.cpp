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

#include "kbnet/mff.hpp"

#include <sstream>

namespace kbnet {

std::string to_string(const BranchMask& m)
{
    std::string out;
    auto append = [&](bool on, const char* name) {
        if (on) {
            out += out.empty() ? name : std::string(",") + name;
        }
    };
    append(m.dw, "dw");
    append(m.ca, "ca");
    append(m.kba, "kba");
    return out;
}

BranchMask parse_branch_mask(const std::string& s)
{
    BranchMask m{false, false, false};
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto first = item.find_first_not_of(" \t");
        const auto last = item.find_last_not_of(" \t");
        item = first == std::string::npos ? "" : item.substr(first, last - first + 1);
        if (item == "dw") {
            m.dw = true;
        } else if (item == "ca") {
            m.ca = true;
        } else if (item == "kba") {
            m.kba = true;
        } else {
            throw std::invalid_argument("unknown branch '" + item + "' (expected dw, ca, kba)");
        }
    }
    if (!m.any()) {
        throw std::invalid_argument("branch mask must enable at least one branch");
    }
    return m;
}

void MffConfig::validate() const
{
    if (!branches.any()) {
        throw ShapeError("MFF block needs at least one enabled branch");
    }
    kba.validate();
    if (channels() % ca_reduction != 0) {
        throw ShapeError("MFF block: width " + std::to_string(channels()) +
                         " not divisible by channel-attention reduction " + std::to_string(ca_reduction));
    }
}

template <typename T>
MffParams<T>::MffParams(const MffConfig& cfg)
    : branches((cfg.validate(), cfg.branches)), norm(cfg.channels()),
      dw3x3(ConvSpec::same(cfg.channels(), cfg.channels(), 3, cfg.channels())), ca(cfg.channels(), cfg.ca_reduction),
      kba(cfg.kba), out_proj(ConvSpec::same(cfg.channels(), cfg.channels(), 1))
{
}

template <typename T>
void init_mff(MffParams<T>& p, Rng& rng)
{
    init_conv(p.dw3x3, rng);
    init_conv(p.ca.reduce, rng);
    init_conv(p.ca.expand, rng);
    init_kba(p.kba, rng);
    init_conv(p.out_proj, rng);
}

template <typename T>
Tensor4<T> mff_forward(const Tensor4<T>& x, const MffParams<T>& p, KbaPath path, MffCache<T>* cache)
{
    MffCache<T> local;
    MffCache<T>& c = cache ? *cache : local;
    c = MffCache<T>{};
    c.x_norm = layer_norm2d_forward(x, p.norm, &c.norm);

    // Product formed in the fixed order dw * ca * kba.
    Tensor4<T> fused;
    auto fold = [&](const Tensor4<T>& branch) {
        fused = fused.empty() ? branch : mul(fused, branch);
    };
    if (p.branches.dw) {
        c.dw_out = p.dw3x3.forward(c.x_norm);
        fold(c.dw_out);
    }
    if (p.branches.ca) {
        c.ca_out = channel_attention_forward(c.x_norm, p.ca, &c.ca);
        fold(c.ca_out);
    }
    if (p.branches.kba) {
        c.kba_out = kba_forward(c.x_norm, p.kba, path, &c.kba);
        fold(c.kba_out);
    }
    Tensor4<T> out = p.out_proj.forward(fused);
    add_inplace(out, x);
    c.fused = std::move(fused);
    return out;
}

template <typename T>
Tensor4<T> mff_backward(const MffParams<T>& p, const MffCache<T>& cache, const Tensor4<T>& grad_out,
                        MffParams<T>& grads)
{
    const Tensor4<T> g_fused = p.out_proj.backward(cache.fused, grad_out, grads.out_proj);

    // Gradient reaching one branch: g_fused times the other enabled branches.
    auto branch_grad = [&](const Tensor4<T>* skip) {
        Tensor4<T> g = g_fused;
        for (const Tensor4<T>* other : {&cache.dw_out, &cache.ca_out, &cache.kba_out}) {
            if (other != skip && !other->empty()) {
                g = mul(g, *other);
            }
        }
        return g;
    };

    Tensor4<T> g_norm(cache.x_norm.shape());
    if (p.branches.dw) {
        add_inplace(g_norm, p.dw3x3.backward(cache.x_norm, branch_grad(&cache.dw_out), grads.dw3x3));
    }
    if (p.branches.ca) {
        add_inplace(g_norm, channel_attention_backward(p.ca, cache.ca, branch_grad(&cache.ca_out), grads.ca));
    }
    if (p.branches.kba) {
        add_inplace(g_norm, kba_backward(p.kba, cache.kba, branch_grad(&cache.kba_out), grads.kba));
    }
    Tensor4<T> gx = layer_norm2d_backward(p.norm, cache.norm, g_norm, grads.norm);
    add_inplace(gx, grad_out);
    return gx;
}

#define KBNET_INSTANTIATE(T)                                                                                  \
    template struct MffParams<T>;                                                                             \
    template void init_mff(MffParams<T>&, Rng&);                                                              \
    template Tensor4<T> mff_forward(const Tensor4<T>&, const MffParams<T>&, KbaPath, MffCache<T>*);           \
    template Tensor4<T> mff_backward(const MffParams<T>&, const MffCache<T>&, const Tensor4<T>&, MffParams<T>&);

KBNET_INSTANTIATE(float)
KBNET_INSTANTIATE(double)

#undef KBNET_INSTANTIATE

} // namespace kbnet
