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

#include "kbnet/train.hpp"

#include "kbnet/checkpoint.hpp"
#include "kbnet/image.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace kbnet {

namespace fs = std::filesystem;

void TrainConfig::validate() const
{
    if (!(sigma > 0.0)) {
        throw ConfigError("sigma must be positive, got " + std::to_string(sigma));
    }
    if (patch_size < kSizeMultiple || patch_size % kSizeMultiple != 0) {
        throw ConfigError("patch_size " + std::to_string(patch_size) + " must be a positive multiple of 16");
    }
    if (batch_size < 1) {
        throw ConfigError("batch_size must be at least 1");
    }
    if (iterations < 0) {
        throw ConfigError("iterations must be non-negative");
    }
    if (!(learning_rate > 0.0) || min_learning_rate < 0.0) {
        throw ConfigError("learning rates must be positive");
    }
    if (eval_every < 0 || log_every < 1 || checkpoint_every < 0) {
        throw ConfigError("eval_every and checkpoint_every must be >= 0, log_every >= 1");
    }
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
}

namespace {

std::uint64_t parse_u64(const std::string& key, const std::string& value)
{
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(value, &used);
        if (used != value.size() || value.front() == '-') {
            throw std::invalid_argument(value);
        }
        return v;
    } catch (const std::exception&) {
        throw ConfigError("'" + key + "': expected an unsigned integer, got '" + value + "'");
    }
}

template <typename F>
auto wrap_config(F&& f)
{
    try {
        return f();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

} // namespace

void apply_train_config(TrainConfig& cfg, KeyValues& kv)
{
    if (auto* v = kv.take("sigma")) cfg.sigma = parse_double("sigma", *v);
    if (auto* v = kv.take("patch_size")) cfg.patch_size = parse_int("patch_size", *v);
    if (auto* v = kv.take("batch_size")) cfg.batch_size = parse_int("batch_size", *v);
    if (auto* v = kv.take("iterations")) cfg.iterations = parse_int("iterations", *v);
    if (auto* v = kv.take("learning_rate")) cfg.learning_rate = parse_double("learning_rate", *v);
    if (auto* v = kv.take("min_learning_rate")) cfg.min_learning_rate = parse_double("min_learning_rate", *v);
    if (auto* v = kv.take("lr_schedule")) cfg.lr_schedule = wrap_config([&] { return parse_lr_schedule(*v); });
    if (auto* v = kv.take("loss_kind")) cfg.loss_kind = wrap_config([&] { return parse_loss_kind(*v); });
    if (auto* v = kv.take("adam_beta1")) cfg.adam.beta1 = parse_double("adam_beta1", *v);
    if (auto* v = kv.take("adam_beta2")) cfg.adam.beta2 = parse_double("adam_beta2", *v);
    if (auto* v = kv.take("adam_epsilon")) cfg.adam.epsilon = parse_double("adam_epsilon", *v);
    if (auto* v = kv.take("weight_decay")) cfg.adam.weight_decay = parse_double("weight_decay", *v);
    if (auto* v = kv.take("seed")) cfg.seed = parse_u64("seed", *v);
    if (auto* v = kv.take("eval_seed")) cfg.eval_seed = parse_u64("eval_seed", *v);
    if (auto* v = kv.take("eval_every")) cfg.eval_every = parse_int("eval_every", *v);
    if (auto* v = kv.take("log_every")) cfg.log_every = parse_int("log_every", *v);
    if (auto* v = kv.take("checkpoint_every")) cfg.checkpoint_every = parse_int("checkpoint_every", *v);
    if (auto* v = kv.take("train_dir")) cfg.train_dir = *v;
    if (auto* v = kv.take("eval_dir")) cfg.eval_dir = *v;
    if (auto* v = kv.take("output_dir")) cfg.output_dir = *v;
    if (auto* v = kv.take("log_wall_time")) cfg.log_wall_time = parse_bool("log_wall_time", *v);
}

std::string format_train_config(const TrainConfig& cfg)
{
    std::ostringstream out;
    out << std::setprecision(17);
    out << "sigma = " << cfg.sigma << "\n"
        << "patch_size = " << cfg.patch_size << "\n"
        << "batch_size = " << cfg.batch_size << "\n"
        << "iterations = " << cfg.iterations << "\n"
        << "learning_rate = " << cfg.learning_rate << "\n"
        << "min_learning_rate = " << cfg.min_learning_rate << "\n"
        << "lr_schedule = " << to_string(cfg.lr_schedule) << "\n"
        << "loss_kind = " << to_string(cfg.loss_kind) << "\n"
        << "adam_beta1 = " << cfg.adam.beta1 << "\n"
        << "adam_beta2 = " << cfg.adam.beta2 << "\n"
        << "adam_epsilon = " << cfg.adam.epsilon << "\n"
        << "weight_decay = " << cfg.adam.weight_decay << "\n"
        << "seed = " << cfg.seed << "\n"
        << "eval_seed = " << cfg.eval_seed << "\n"
        << "eval_every = " << cfg.eval_every << "\n"
        << "log_every = " << cfg.log_every << "\n"
        << "checkpoint_every = " << cfg.checkpoint_every << "\n"
        << "train_dir = " << cfg.train_dir << "\n"
        << "eval_dir = " << cfg.eval_dir << "\n"
        << "output_dir = " << cfg.output_dir << "\n"
        << "log_wall_time = " << (cfg.log_wall_time ? "true" : "false") << "\n";
    return out.str();
}

std::uint64_t net_seed(const TrainConfig& cfg) { return mix_seed(cfg.seed, 1); }
std::uint64_t data_seed(const TrainConfig& cfg) { return mix_seed(cfg.seed, 2); }
std::uint64_t noise_seed(const TrainConfig& cfg) { return mix_seed(cfg.seed, 3); }

// ---------------------------------------------------------------------------

Tensor4<float> convert_channels(const Tensor4<float>& img, int channels)
{
    if (img.c() == channels) {
        return img;
    }
    Tensor4<float> out(img.n(), channels, img.h(), img.w());
    const std::size_t hw = static_cast<std::size_t>(img.h()) * img.w();
    for (int b = 0; b < img.n(); ++b) {
        if (img.c() == 3 && channels == 1) {
            const float* r = img.plane(b, 0);
            const float* g = img.plane(b, 1);
            const float* bl = img.plane(b, 2);
            float* dst = out.plane(b, 0);
            for (std::size_t i = 0; i < hw; ++i) {
                dst[i] = static_cast<float>(0.299 * r[i] + 0.587 * g[i] + 0.114 * bl[i]);
            }
        } else if (img.c() == 1) {
            for (int c = 0; c < channels; ++c) {
                std::copy_n(img.plane(b, 0), hw, out.plane(b, c));
            }
        } else {
            throw ShapeError("convert_channels: cannot map " + std::to_string(img.c()) + " channels to " +
                             std::to_string(channels));
        }
    }
    return out;
}

Corpus load_corpus(const std::string& dir, int channels)
{
    if (dir.empty()) {
        throw TrainingError("corpus directory is not set");
    }
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) {
        throw TrainingError("corpus directory '" + dir + "' does not exist");
    }
    Corpus corpus;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && is_image_path(entry.path().string())) {
            corpus.paths.push_back(entry.path().string());
        }
    }
    std::sort(corpus.paths.begin(), corpus.paths.end());
    if (corpus.paths.empty()) {
        throw TrainingError("corpus directory '" + dir + "' contains no .png/.ppm/.pgm images");
    }
    for (const auto& p : corpus.paths) {
        try {
            corpus.images.push_back(convert_channels(image_to_tensor(read_image(p)), channels));
        } catch (const std::exception& e) {
            throw TrainingError(std::string("cannot load corpus image: ") + e.what());
        }
    }
    return corpus;
}

Tensor4<float> sample_patches(const Corpus& corpus, int patch_size, int batch_size, std::uint64_t seed,
                              std::int64_t iteration)
{
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(iteration)));
    const int channels = corpus.images.front().c();
    Tensor4<float> batch(batch_size, channels, patch_size, patch_size);
    for (int b = 0; b < batch_size; ++b) {
        const auto& img = corpus.images[rng.index(static_cast<int>(corpus.images.size()))];
        const int y0 = rng.index(img.h() - patch_size + 1);
        const int x0 = rng.index(img.w() - patch_size + 1);
        const bool flip_h = rng.index(2) == 1;
        const bool flip_v = rng.index(2) == 1;
        for (int c = 0; c < channels; ++c) {
            const float* src = img.plane(0, c);
            float* dst = batch.plane(b, c);
            for (int y = 0; y < patch_size; ++y) {
                const int sy = y0 + (flip_v ? patch_size - 1 - y : y);
                for (int x = 0; x < patch_size; ++x) {
                    const int sx = x0 + (flip_h ? patch_size - 1 - x : x);
                    dst[static_cast<std::size_t>(y) * patch_size + x] = src[static_cast<std::size_t>(sy) * img.w() + sx];
                }
            }
        }
    }
    return batch;
}

// ---------------------------------------------------------------------------

std::uint64_t eval_noise_seed(std::uint64_t eval_seed, std::size_t k)
{
    return mix_seed(eval_seed ^ 0x6576616c6e6f6973ull, k);
}

Tensor4<float> denoise(const Network<float>& net, const Tensor4<float>& img)
{
    CropRecord record;
    const Tensor4<float> padded = pad_to_multiple(img, record);
    return unpad(net_forward(padded, net), record);
}

Tensor4<float> denoise_image(const Network<float>& net, const Tensor4<float>& img)
{
    const int in = net.config.in_channels;
    const int out = net.config.out_channels;
    if (img.c() == in) {
        return denoise(net, img);
    }
    if (in == 1 && out == 1) {
        Tensor4<float> result(img.n(), img.c(), img.h(), img.w());
        for (int b = 0; b < img.n(); ++b) {
            for (int c = 0; c < img.c(); ++c) {
                Tensor4<float> plane(1, 1, img.h(), img.w());
                std::copy_n(img.plane(b, c), plane.size(), plane.data());
                const Tensor4<float> y = denoise(net, plane);
                std::copy_n(y.data(), y.size(), result.plane(b, c));
            }
        }
        return result;
    }
    if (img.c() == 1 && in == 3) {
        const Tensor4<float> y = denoise(net, convert_channels(img, 3));
        return out == 1 ? y : convert_channels(y, 1);
    }
    throw ShapeError("cannot run a " + std::to_string(in) + "-channel network on a " + std::to_string(img.c()) +
                     "-channel image");
}

EvalResult evaluate(const Network<float>& net, const std::vector<Tensor4<float>>& clean, double sigma,
                    std::uint64_t eval_seed)
{
    EvalResult r;
    if (clean.empty()) {
        return r;
    }
    for (std::size_t k = 0; k < clean.size(); ++k) {
        const Tensor4<float> noisy = add_gaussian_noise(clean[k], sigma, eval_noise_seed(eval_seed, k));
        const Tensor4<float> out = denoise(net, noisy);
        r.image_psnr.push_back(psnr(out, clean[k]));
        r.image_noisy_psnr.push_back(psnr(noisy, clean[k]));
        r.psnr += r.image_psnr.back();
        r.noisy_psnr += r.image_noisy_psnr.back();
        r.ssim += ssim(out, clean[k]);
        r.noisy_ssim += ssim(noisy, clean[k]);
    }
    const double n = static_cast<double>(clean.size());
    r.psnr /= n;
    r.ssim /= n;
    r.noisy_psnr /= n;
    r.noisy_ssim /= n;
    return r;
}

std::string format_log_row(const LogRow& row)
{
    std::ostringstream out;
    out << row.iter << ',' << std::setprecision(9) << row.loss << ',';
    if (!std::isnan(row.eval_psnr)) {
        out << std::setprecision(6) << std::fixed << row.eval_psnr << ',' << row.eval_ssim << ',';
        out.unsetf(std::ios::fixed);
    } else {
        out << ",,";
    }
    out << std::setprecision(9) << row.lr << ',' << std::fixed << std::setprecision(1) << row.wall_ms;
    return out.str();
}

std::vector<double> smooth(const std::vector<double>& values, std::size_t window)
{
    std::vector<double> out(values.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        acc += values[i];
        if (i >= window) {
            acc -= values[i - window];
        }
        out[i] = acc / static_cast<double>(std::min(i + 1, window));
    }
    return out;
}

namespace {

std::string checkpoint_name(std::int64_t iter)
{
    std::ostringstream s;
    s << "ckpt_" << std::setw(6) << std::setfill('0') << iter << ".kbnt";
    return s.str();
}

} // namespace

TrainResult train(const NetConfig& net_config, const TrainConfig& cfg, const LogCallback& on_log)
{
    net_config.validate();
    cfg.validate();

    const Corpus corpus = load_corpus(cfg.train_dir, net_config.in_channels);
    for (std::size_t k = 0; k < corpus.images.size(); ++k) {
        const auto& img = corpus.images[k];
        if (img.h() < cfg.patch_size || img.w() < cfg.patch_size) {
            throw TrainingError("training image '" + corpus.paths[k] + "' (" + std::to_string(img.h()) + "x" +
                                std::to_string(img.w()) + ") is smaller than the patch size " +
                                std::to_string(cfg.patch_size));
        }
    }
    std::vector<Tensor4<float>> eval_images;
    if (!cfg.eval_dir.empty()) {
        eval_images = load_corpus(cfg.eval_dir, net_config.in_channels).images;
    }

    std::ofstream metrics;
    if (!cfg.output_dir.empty()) {
        fs::create_directories(cfg.output_dir);
        metrics.open(fs::path(cfg.output_dir) / "metrics.csv", std::ios::trunc);
        if (!metrics) {
            throw TrainingError("cannot write metrics.csv in '" + cfg.output_dir + "'");
        }
        metrics << kMetricsHeader << "\n";
    }

    TrainResult result{build<float>(net_config, net_seed(cfg)), {}, {}, {}};
    Network<float>& net = result.net;
    Network<float> grads = zeros_like(net);
    const auto params = param_list(net);
    const auto grad_params = param_list(grads);
    const auto all_grads = param_list(grads, "", Scope::all);
    AdamState<float> adam = make_adam_state(params, cfg.adam);

    const auto start = std::chrono::steady_clock::now();
    double loss_acc = 0.0;
    int loss_count = 0;

    auto emit = [&](std::int64_t iter, double lr, bool with_eval) {
        LogRow row;
        row.iter = iter;
        row.loss = loss_count > 0 ? loss_acc / loss_count : std::nan("");
        row.lr = lr;
        row.eval_psnr = std::nan("");
        row.eval_ssim = std::nan("");
        if (with_eval && !eval_images.empty()) {
            const EvalResult e = evaluate(net, eval_images, cfg.sigma, cfg.eval_seed);
            row.eval_psnr = e.psnr;
            row.eval_ssim = e.ssim;
            result.final_eval = e;
        }
        if (cfg.log_wall_time) {
            row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        }
        loss_acc = 0.0;
        loss_count = 0;
        result.log.push_back(row);
        if (metrics.is_open()) {
            metrics << format_log_row(row) << "\n" << std::flush;
        }
        if (on_log) {
            on_log(row);
        }
    };

    for (int it = 0; it < cfg.iterations; ++it) {
        const double lr =
            learning_rate_at(cfg.lr_schedule, cfg.learning_rate, cfg.min_learning_rate, it, cfg.iterations);
        const Tensor4<float> clean = sample_patches(corpus, cfg.patch_size, cfg.batch_size, data_seed(cfg), it);
        const Tensor4<float> noisy =
            add_gaussian_noise(clean, cfg.sigma, mix_seed(noise_seed(cfg), static_cast<std::uint64_t>(it)));

        NetCache<float> cache;
        const Tensor4<float> pred = net_forward(noisy, net, &cache);
        const LossResult<float> loss = loss_forward_backward(pred, clean, cfg.loss_kind);
        if (!std::isfinite(loss.value)) {
            throw TrainingError("loss became non-finite at iteration " + std::to_string(it));
        }
        for (const auto& ref : all_grads) {
            ref.tensor->set_zero();
        }
        net_backward(net, cache, loss.grad, grads);
        for (const auto& ref : grad_params) {
            if (!all_finite(*ref.tensor)) {
                throw TrainingError("non-finite gradient for '" + ref.name + "' at iteration " + std::to_string(it));
            }
        }
        adam_step(params, grad_params, adam, lr);

        result.losses.push_back(loss.value);
        loss_acc += loss.value;
        ++loss_count;

        const std::int64_t done = it + 1;
        const bool last = done == cfg.iterations;
        const bool do_eval = last || (cfg.eval_every > 0 && done % cfg.eval_every == 0);
        if (last || do_eval || done % cfg.log_every == 0) {
            emit(done, lr, do_eval);
        }
        if (!cfg.output_dir.empty() && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && !last) {
            save_checkpoint(net, (fs::path(cfg.output_dir) / checkpoint_name(done)).string());
        }
    }
    if (cfg.iterations == 0) {
        emit(0, cfg.learning_rate, true);
    }
    for (const auto& ref : params) {
        if (!all_finite(*ref.tensor)) {
            throw TrainingError("parameter '" + ref.name + "' became non-finite");
        }
    }
    if (!cfg.output_dir.empty()) {
        save_checkpoint(net, (fs::path(cfg.output_dir) / "final.kbnt").string());
    }
    return result;
}

} // namespace kbnet
