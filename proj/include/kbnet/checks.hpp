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

#include "kbnet/kba.hpp"
#include "kbnet/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace kbnet {

// ---------------------------------------------------------------------------
// Finite-difference gradient checks (double precision).

/// |a - f| / max(|a|, |f|, 1e-8).
double relative_error(double analytic, double numeric);

/// One tensor whose analytic gradient is compared against central differences.
struct GradTarget {
    std::string name;
    Tensor4<double>* value;
    const Tensor4<double>* grad;
};

/// The objective is <weights, forward()>. `backward` refreshes every
/// target's analytic gradient. Central differences subtract the two outputs
/// elementwise before the dot product, so outputs untouched by a perturbation
/// cancel exactly.
struct GradProblem {
    std::vector<GradTarget> targets;
    std::function<Tensor4<double>()> forward;
    Tensor4<double> weights;
    std::function<void()> backward;
};

/// Each tensor is checked along `directions` random unit directions d
/// (analytic <grad, d> against the central difference along d) and entry by
/// entry: fully when it has at most `max_entries` elements, otherwise at that
/// many sampled entries.
struct GradCheckOptions {
    double epsilon = 1e-4;
    int directions = 3;
    std::size_t max_entries = 24;
    /// Entry checks for the whole network. Many of its gradient entries are
    /// small enough that central differences at epsilon = 1e-4 lose them to
    /// truncation or roundoff, so by default it is checked along directions
    /// only.
    std::size_t net_max_entries = 0;
    std::uint64_t seed = 0;
    /// Test fixture: scales every analytic gradient by 1.5 before comparing.
    bool corrupt_backward = false;
};

struct GradGroupError {
    std::string name;
    double max_rel_error = 0.0;   // over directions and entries
    double direction_error = 0.0; // worst direction
    std::size_t entries = 0;      // entries checked individually
};

struct GradCheckReport {
    std::string component;
    std::vector<GradGroupError> groups;
    double seconds = 0.0;

    double max_error() const noexcept;
    std::size_t entries() const noexcept;
};

GradCheckReport check_gradients(const std::string& component, GradProblem& problem, const GradCheckOptions& opt);

/// conv1x1, conv, conv_stride2, simple_gate, layer_norm, channel_attention,
/// ffn, kba, kba_softmax, mff, net.
std::vector<std::string> grad_check_components();

/// Builds a small randomised instance of `component` with loss
/// <w, f(x)> for fixed random w and checks every parameter tensor and the
/// input.
GradCheckReport grad_check(const std::string& component, const GradCheckOptions& opt = {});

// ---------------------------------------------------------------------------
// Kernel-basis aggregation equivalence.

struct EquivCase {
    int batch = 1;
    int n_bases = 1;
    int channels = 4;
    int kernel_size = 3;
    int height = 1;
    int width = 1;
    NormalizeMode mode = NormalizeMode::none;
    /// true: the whole operator including coefficient prediction; false: the
    /// aggregation stage with random coefficients (configs the coefficient
    /// branch cannot express, e.g. odd N).
    bool full_operator = false;
    double err_fuse_kernels = 0.0;
    double err_fuse_outputs = 0.0;

    double max_error() const noexcept { return err_fuse_kernels > err_fuse_outputs ? err_fuse_kernels : err_fuse_outputs; }
};

struct EquivReport {
    std::vector<EquivCase> cases;
    double max_error() const noexcept;
};

/// Samples `count` configs with N in {1,2,4,8}, C in {4,8,16}, K in {1,3,5}
/// and spatial sizes up to 16x16, and compares the literal oracle with both
/// fast paths by max absolute difference.
EquivReport equiv_check(int count, std::uint64_t seed);

} // namespace kbnet
