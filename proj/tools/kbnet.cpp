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

#include "kbnet/checkpoint.hpp"
#include "kbnet/checks.hpp"
#include "kbnet/image.hpp"
#include "kbnet/macs.hpp"
#include "kbnet/train.hpp"
#include "kbnet/viz.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <regex>

namespace fs = std::filesystem;
using namespace kbnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

/// Usage, IO and config problems; mapped to exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Configs {
    NetConfig net;
    TrainConfig train;
};

// Relative corpus/output paths in a config file are taken relative to the file.
std::string resolve(const fs::path& base, const std::string& p)
{
    if (p.empty() || fs::path(p).is_absolute()) {
        return p;
    }
    return (base / p).lexically_normal().string();
}

Configs load_configs(const std::string& path)
{
    if (!fs::is_regular_file(path)) {
        throw UsageError("config file '" + path + "' not found");
    }
    KeyValues kv = KeyValues::load(path);
    Configs c;
    apply_net_config(c.net, kv);
    apply_train_config(c.train, kv);
    kv.require_all_consumed();
    c.net.validate();
    const fs::path base = fs::path(path).parent_path();
    c.train.train_dir = resolve(base, c.train.train_dir);
    c.train.eval_dir = resolve(base, c.train.eval_dir);
    c.train.output_dir = resolve(base, c.train.output_dir);
    return c;
}

Network<float> open_checkpoint(const std::string& path)
{
    if (!fs::is_regular_file(path)) {
        throw UsageError("checkpoint '" + path + "' not found");
    }
    return load_checkpoint(path);
}

std::string fmt(double v, int digits = 4)
{
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::vector<fs::path> list_images(const fs::path& in)
{
    std::vector<fs::path> files;
    if (fs::is_directory(in)) {
        for (const auto& e : fs::directory_iterator(in)) {
            if (e.is_regular_file() && is_image_path(e.path().string())) {
                files.push_back(e.path());
            }
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            throw UsageError("no .png/.ppm/.pgm images in '" + in.string() + "'");
        }
    } else if (fs::is_regular_file(in)) {
        files.push_back(in);
    } else {
        throw UsageError("input '" + in.string() + "' not found");
    }
    return files;
}

// Keeps the input's format unless the channel count no longer fits it.
fs::path output_path(const fs::path& out_dir, const fs::path& src, int channels)
{
    fs::path name = src.filename();
    const std::string ext = name.extension().string();
    if (ext == ".pgm" && channels == 3) {
        name.replace_extension(".ppm");
    } else if (ext == ".ppm" && channels == 1) {
        name.replace_extension(".pgm");
    }
    return out_dir / name;
}

int cmd_train(const std::string& config, std::optional<std::uint64_t> seed)
{
    Configs c = load_configs(config);
    if (seed) {
        c.train.seed = *seed;
    }
    c.train.validate();
    std::cout << "training " << c.train.iterations << " iterations, seed " << c.train.seed << "\n";
    std::cout << kMetricsHeader << "\n";
    const TrainResult r = train(c.net, c.train, [](const LogRow& row) {
        std::cout << format_log_row(row) << std::endl;
    });
    if (!r.final_eval.image_psnr.empty()) {
        std::cout << "final eval: psnr " << fmt(r.final_eval.psnr) << " dB (noisy " << fmt(r.final_eval.noisy_psnr)
                  << " dB), ssim " << fmt(r.final_eval.ssim) << " (noisy " << fmt(r.final_eval.noisy_ssim) << ")\n";
    }
    if (!c.train.output_dir.empty()) {
        std::cout << "wrote " << (fs::path(c.train.output_dir) / "final.kbnt").string() << "\n";
    }
    return kExitOk;
}

int cmd_denoise(const std::string& ckpt, const std::string& in, const std::string& out)
{
    const Network<float> net = open_checkpoint(ckpt);
    const auto files = list_images(in);
    fs::create_directories(out);
    for (const auto& f : files) {
        const Image src = read_image(f.string());
        const Tensor4<float> y = denoise_image(net, image_to_tensor(src));
        const Image dst = tensor_to_image(y);
        const fs::path target = output_path(out, f, dst.channels);
        write_image(target.string(), dst);
        std::cout << f.string() << " -> " << target.string() << " (" << dst.width << "x" << dst.height << ")\n";
    }
    return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& clean, double sigma, std::uint64_t seed)
{
    const Network<float> net = open_checkpoint(ckpt);
    if (!fs::is_directory(clean)) {
        throw UsageError("clean image directory '" + clean + "' not found");
    }
    const Corpus corpus = load_corpus(clean, net.config.in_channels);
    const EvalResult r = evaluate(net, corpus.images, sigma, seed);
    for (std::size_t k = 0; k < corpus.paths.size(); ++k) {
        std::cout << fs::path(corpus.paths[k]).filename().string() << ": psnr " << fmt(r.image_psnr[k])
                  << " dB (noisy " << fmt(r.image_noisy_psnr[k]) << " dB)\n";
    }
    std::cout << "mean psnr " << fmt(r.psnr) << " dB, mean ssim " << fmt(r.ssim) << "\n";
    std::cout << "noisy psnr " << fmt(r.noisy_psnr) << " dB, noisy ssim " << fmt(r.noisy_ssim) << "\n";
    return kExitOk;
}

int cmd_grad_check(const std::vector<std::string>& components, double tol, std::uint64_t seed, bool corrupt)
{
    const auto known = grad_check_components();
    std::vector<std::string> selected = components.empty() ? known : components;
    for (const auto& c : selected) {
        if (std::find(known.begin(), known.end(), c) == known.end()) {
            throw UsageError("unknown component '" + c + "'");
        }
    }
    GradCheckOptions opt;
    opt.seed = seed;
    opt.corrupt_backward = corrupt;
    bool ok = true;
    double total = 0.0;
    for (const auto& c : selected) {
        const GradCheckReport r = grad_check(c, opt);
        const bool pass = r.max_error() < tol;
        ok = ok && pass;
        total += r.seconds;
        std::printf("%-18s max rel error %.3e  (%zu groups, %zu entries, %.2fs)  %s\n", c.c_str(), r.max_error(),
                    r.groups.size(), r.entries(), r.seconds, pass ? "ok" : "FAIL");
        if (!pass) {
            for (const auto& g : r.groups) {
                if (g.max_rel_error >= tol) {
                    std::printf("    %-40s %.3e\n", g.name.c_str(), g.max_rel_error);
                }
            }
        }
    }
    std::printf("grad-check %s, tolerance %.1e, %.2fs total\n", ok ? "passed" : "FAILED", tol, total);
    return ok ? kExitOk : kExitCheckFailed;
}

int cmd_equiv_check(int count, std::uint64_t seed, double tol)
{
    if (count < 1) {
        throw UsageError("--count must be positive");
    }
    const EquivReport r = equiv_check(count, seed);
    int full = 0;
    for (const auto& c : r.cases) {
        full += c.full_operator ? 1 : 0;
    }
    const bool ok = r.max_error() <= tol;
    std::printf("equiv-check: %d configs (%d full operator, %d aggregation only), max |diff| %.3e  %s\n", count, full,
                count - full, r.max_error(), ok ? "ok" : "FAIL");
    if (!ok) {
        for (const auto& c : r.cases) {
            if (c.max_error() > tol) {
                std::printf("    N=%d C=%d K=%d %dx%d batch %d %s: kernels %.3e outputs %.3e\n", c.n_bases,
                            c.channels, c.kernel_size, c.height, c.width, c.batch, to_string(c.mode).c_str(),
                            c.err_fuse_kernels, c.err_fuse_outputs);
            }
        }
    }
    return ok ? kExitOk : kExitCheckFailed;
}

std::pair<int, int> parse_size(const std::string& s)
{
    static const std::regex re(R"((\d+)[xX](\d+))");
    std::smatch m;
    if (!std::regex_match(s, m, re)) {
        throw UsageError("--size expects HxW, got '" + s + "'");
    }
    const int h = std::stoi(m[1]);
    const int w = std::stoi(m[2]);
    if (h % kSizeMultiple != 0 || w % kSizeMultiple != 0 || h == 0 || w == 0) {
        throw UsageError("--size must be positive multiples of " + std::to_string(kSizeMultiple));
    }
    return {h, w};
}

int cmd_count_macs(const std::string& config, const std::string& size)
{
    const Configs c = load_configs(config);
    const auto [h, w] = parse_size(size);
    const MacReport r = count_macs(c.net, h, w);
    for (const auto& l : r.layers) {
        std::printf("%-48s %14llu\n", l.name.c_str(), static_cast<unsigned long long>(l.macs));
    }
    std::printf("%-48s %14llu\n", "total", static_cast<unsigned long long>(r.total()));
    return kExitOk;
}

int cmd_viz(const std::string& ckpt, const std::string& in, const std::string& out, int stage, std::uint64_t seed)
{
    const Network<float> net = open_checkpoint(ckpt);
    if (!fs::is_regular_file(in)) {
        throw UsageError("input image '" + in + "' not found");
    }
    const Tensor4<float> img = convert_channels(image_to_tensor(read_image(in)), net.config.in_channels);
    fs::create_directories(out);
    const std::string stem = fs::path(in).stem().string();
    for (const auto& m : coefficient_maps(net, img, stage, seed)) {
        const fs::path target = fs::path(out) / (stem + "_stage" + std::to_string(m.stage) + ".png");
        write_image(target.string(), m.image);
        std::cout << target.string() << "\n";
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Kernel-basis denoising network: training, inference and verification"};
    app.require_subcommand(1);

    std::string config, ckpt, in, out, clean, size;
    std::optional<std::uint64_t> train_seed;
    std::uint64_t seed = 0;
    double sigma = 25.0;
    double tol = 1e-4;
    double equiv_tol = 1e-10;
    int count = 50;
    int stage = -1;
    bool corrupt = false;
    std::vector<std::string> components;

    auto* train_cmd = app.add_subcommand("train", "train a network from a config file");
    train_cmd->add_option("--config", config, "key = value config file")->required();
    train_cmd->add_option("--seed", train_seed, "overrides the config seed");

    auto* denoise_cmd = app.add_subcommand("denoise", "denoise an image or every image in a directory");
    denoise_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
    denoise_cmd->add_option("--in", in, "image file or directory")->required();
    denoise_cmd->add_option("--out", out, "output directory")->required();

    auto* eval_cmd = app.add_subcommand("eval", "mean PSNR/SSIM on synthetically noised clean images");
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--clean", clean, "directory of clean images")->required();
    eval_cmd->add_option("--sigma", sigma, "noise level on the 0-255 scale")->check(CLI::NonNegativeNumber);
    eval_cmd->add_option("--seed", seed, "evaluation noise seed");

    auto* grad_cmd = app.add_subcommand("grad-check", "finite-difference gradient checks");
    grad_cmd->add_option("--component", components, "component(s) to check (default: all)");
    grad_cmd->add_option("--tol", tol, "maximum relative error")->check(CLI::PositiveNumber);
    grad_cmd->add_option("--seed", seed, "seed for parameters and directions");
    grad_cmd->add_flag("--corrupt", corrupt)->group("");

    auto* equiv_cmd = app.add_subcommand("equiv-check", "kernel-basis oracle vs both fast paths");
    equiv_cmd->add_option("--count", count, "number of random configs");
    equiv_cmd->add_option("--seed", seed, "sampling seed");
    equiv_cmd->add_option("--tol", equiv_tol, "maximum absolute difference")->check(CLI::PositiveNumber);

    auto* macs_cmd = app.add_subcommand("count-macs", "per-layer multiply-accumulate counts");
    macs_cmd->add_option("--config", config, "key = value config file")->required();
    macs_cmd->add_option("--size", size, "input size HxW")->required();

    auto* viz_cmd = app.add_subcommand("viz-coeffs", "render fusion coefficients as RGB maps");
    viz_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
    viz_cmd->add_option("--in", in, "input image")->required();
    viz_cmd->add_option("--out", out, "output directory")->required();
    viz_cmd->add_option("--stage", stage, "encoder stage (default: all)")->check(CLI::Range(0, kStages - 1));
    viz_cmd->add_option("--seed", seed, "projection seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*train_cmd) return cmd_train(config, train_seed);
        if (*denoise_cmd) return cmd_denoise(ckpt, in, out);
        if (*eval_cmd) return cmd_eval(ckpt, clean, sigma, seed);
        if (*grad_cmd) return cmd_grad_check(components, tol, seed, corrupt);
        if (*equiv_cmd) return cmd_equiv_check(count, seed, equiv_tol);
        if (*macs_cmd) return cmd_count_macs(config, size);
        if (*viz_cmd) return cmd_viz(ckpt, in, out, stage, seed);
    } catch (const TrainingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckFailed;
    } catch (const std::exception& e) {
        // Usage, config, checkpoint, image and filesystem errors.
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
