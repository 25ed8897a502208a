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

#include "kbnet/config.hpp"
#include "kbnet/metrics.hpp"
#include "kbnet/net.hpp"
#include "kbnet/optim.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace kbnet {

/// Training hyperparameters. Seeds for initialisation, patch sampling and
/// training noise are derived from `seed`; evaluation noise uses `eval_seed`
/// so that the held-out baseline does not depend on the training seed.
struct TrainConfig {
    double sigma = 25.0;
    int patch_size = 64;
    int batch_size = 8;
    int iterations = 2000;
    double learning_rate = 1e-3;
    double min_learning_rate = 1e-6;
    LrSchedule lr_schedule = LrSchedule::cosine;
    LossKind loss_kind = LossKind::psnr_loss;
    AdamConfig adam;
    std::uint64_t seed = 0;
    std::uint64_t eval_seed = 0;
    int eval_every = 500;  // 0: evaluate only at the end
    int log_every = 50;
    int checkpoint_every = 0; // 0: final checkpoint only
    std::string train_dir;
    std::string eval_dir;
    std::string output_dir; // empty: nothing is written
    bool log_wall_time = true;

    void validate() const;
};

void apply_train_config(TrainConfig& cfg, KeyValues& kv);
std::string format_train_config(const TrainConfig& cfg);

/// Stream seeds derived from the master seed.
std::uint64_t net_seed(const TrainConfig& cfg);
std::uint64_t data_seed(const TrainConfig& cfg);
std::uint64_t noise_seed(const TrainConfig& cfg);

/// Images of a directory (sorted by file name) as (1, channels, h, w)
/// tensors in [0, 1]. RGB files are converted to gray with BT.601 luma when
/// channels == 1; gray files are replicated when channels == 3.
struct Corpus {
    std::vector<std::string> paths;
    std::vector<Tensor4<float>> images;
};

Corpus load_corpus(const std::string& dir, int channels);
Tensor4<float> convert_channels(const Tensor4<float>& img, int channels);

/// Uniform random crops with independent horizontal and vertical flips,
/// drawn from a generator seeded by (seed, iteration).
Tensor4<float> sample_patches(const Corpus& corpus, int patch_size, int batch_size, std::uint64_t seed,
                              std::int64_t iteration);

struct EvalResult {
    double psnr = 0.0;       // mean over images
    double ssim = 0.0;
    double noisy_psnr = 0.0; // noisy input against clean
    double noisy_ssim = 0.0;
    std::vector<double> image_psnr;
    std::vector<double> image_noisy_psnr;
};

/// Noise seed of held-out image k.
std::uint64_t eval_noise_seed(std::uint64_t eval_seed, std::size_t k);

/// Pads each noisy image to a multiple of 16, denoises, crops back and
/// scores the raw network output against the clean image.
EvalResult evaluate(const Network<float>& net, const std::vector<Tensor4<float>>& clean, double sigma,
                    std::uint64_t eval_seed);

/// Runs the network on an arbitrary-size image via pad/unpad.
Tensor4<float> denoise(const Network<float>& net, const Tensor4<float>& img);

/// denoise() for images whose channel count differs from the network's: a
/// gray network runs on each channel of an RGB image separately; an RGB
/// network sees a gray image replicated and its output is reduced to luma.
Tensor4<float> denoise_image(const Network<float>& net, const Tensor4<float>& img);

struct LogRow {
    std::int64_t iter = 0;
    double loss = 0.0;      // mean training loss since the previous row
    double eval_psnr = 0.0; // NaN when no evaluation happened at this row
    double eval_ssim = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

inline constexpr const char* kMetricsHeader = "iter,loss,eval_psnr,eval_ssim,lr,wall_ms";
std::string format_log_row(const LogRow& row);

struct TrainResult {
    Network<float> net;
    std::vector<double> losses; // one per iteration
    std::vector<LogRow> log;
    EvalResult final_eval;      // empty when there is no eval set
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using LogCallback = std::function<void(const LogRow&)>;

/// Deterministic given the configs. Writes metrics.csv, periodic
/// ckpt_<iter>.kbnt files and final.kbnt into output_dir when it is set.
/// Throws TrainingError if the loss becomes non-finite.
TrainResult train(const NetConfig& net_config, const TrainConfig& train_config, const LogCallback& on_log = {});

/// Loss values smoothed with a trailing mean over `window` iterations.
std::vector<double> smooth(const std::vector<double>& values, std::size_t window);

} // namespace kbnet
