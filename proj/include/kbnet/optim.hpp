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

#include "kbnet/params.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace kbnet {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.9;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

template <typename T>
struct AdamState {
    AdamConfig config;
    std::vector<Tensor4<T>> m;
    std::vector<Tensor4<T>> v;
    std::int64_t step = 0;
};

template <typename T>
AdamState<T> make_adam_state(const ParamList<T>& params, const AdamConfig& config = {});

/// One Adam update with bias correction and decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
/// `params` and `grads` must list matching tensors in the same order.
template <typename T>
void adam_step(const ParamList<T>& params, const ParamList<T>& grads, AdamState<T>& state, double lr);

enum class LrSchedule { constant, cosine };

std::string to_string(LrSchedule s);
LrSchedule parse_lr_schedule(const std::string& s);

/// Learning rate for 0-based iteration `iter` of `total`. Cosine decays from
/// `base` at iter 0 to `min_lr` at iter == total.
double learning_rate_at(LrSchedule schedule, double base, double min_lr, int iter, int total);

} // namespace kbnet
