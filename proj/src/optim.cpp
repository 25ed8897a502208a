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

#include "kbnet/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace kbnet {

template <typename T>
AdamState<T> make_adam_state(const ParamList<T>& params, const AdamConfig& config)
{
    AdamState<T> s;
    s.config = config;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& ref : params) {
        s.m.emplace_back(ref.tensor->shape());
        s.v.emplace_back(ref.tensor->shape());
    }
    return s;
}

template <typename T>
void adam_step(const ParamList<T>& params, const ParamList<T>& grads, AdamState<T>& state, double lr)
{
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw std::invalid_argument("adam_step: parameter, gradient and state lists differ in length");
    }
    const AdamConfig& c = state.config;
    ++state.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor4<T>& p = *params[k].tensor;
        const Tensor4<T>& g = *grads[k].tensor;
        check_same_shape(p.shape(), g.shape(), "adam_step");
        T* pd = p.data();
        const T* gd = g.data();
        T* md = state.m[k].data();
        T* vd = state.v[k].data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = gd[i];
            const double m = c.beta1 * md[i] + (1.0 - c.beta1) * gi;
            const double v = c.beta2 * vd[i] + (1.0 - c.beta2) * gi * gi;
            md[i] = static_cast<T>(m);
            vd[i] = static_cast<T>(v);
            const double update = (m / bc1) / (std::sqrt(v / bc2) + c.epsilon) + c.weight_decay * pd[i];
            pd[i] = static_cast<T>(pd[i] - lr * update);
        }
    }
}

std::string to_string(LrSchedule s)
{
    return s == LrSchedule::cosine ? "cosine" : "constant";
}

LrSchedule parse_lr_schedule(const std::string& s)
{
    if (s == "cosine") {
        return LrSchedule::cosine;
    }
    if (s == "constant") {
        return LrSchedule::constant;
    }
    throw std::invalid_argument("unknown lr schedule '" + s + "' (expected constant or cosine)");
}

double learning_rate_at(LrSchedule schedule, double base, double min_lr, int iter, int total)
{
    if (schedule == LrSchedule::constant || total <= 0) {
        return base;
    }
    const double t = static_cast<double>(iter) / total;
    return min_lr + (base - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

#define KBNET_INSTANTIATE(T)                                                                                   \
    template AdamState<T> make_adam_state(const ParamList<T>&, const AdamConfig&);                            \
    template void adam_step(const ParamList<T>&, const ParamList<T>&, AdamState<T>&, double);

KBNET_INSTANTIATE(float)
KBNET_INSTANTIATE(double)

#undef KBNET_INSTANTIATE

} // namespace kbnet
