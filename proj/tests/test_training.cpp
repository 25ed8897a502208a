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

#include "oracles.hpp"

#include "kbnet/checkpoint.hpp"
#include "kbnet/optim.hpp"
#include "kbnet/train.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace kbnet;
namespace fs = std::filesystem;

namespace {

std::string corpus_dir(const char* sub)
{
    return (fs::path(KBNET_SOURCE_DIR) / "data" / "corpus" / sub).string();
}

TrainConfig quick_config(const std::string& out = "")
{
    TrainConfig t;
    t.patch_size = 32;
    t.batch_size = 2;
    t.iterations = 6;
    t.eval_every = 3;
    t.log_every = 2;
    t.train_dir = corpus_dir("train");
    t.eval_dir = corpus_dir("eval");
    t.output_dir = out;
    t.log_wall_time = false;
    return t;
}

std::string read_text(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

// Gaussian-window SSIM written directly from the definition.
double ssim_oracle(const Tensor4<double>& a, const Tensor4<double>& b)
{
    const int r = 5;
    double g[11], gs = 0;
    for (int i = 0; i < 11; ++i) {
        g[i] = std::exp(-((i - r) * (i - r)) / (2 * 1.5 * 1.5));
        gs += g[i];
    }
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0;
    int count = 0;
    for (int bb = 0; bb < a.n(); ++bb)
        for (int c = 0; c < a.c(); ++c)
            for (int y = r; y < a.h() - r; ++y)
                for (int x = r; x < a.w() - r; ++x) {
                    double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                    for (int i = -r; i <= r; ++i)
                        for (int j = -r; j <= r; ++j) {
                            const double w = g[i + r] * g[j + r] / (gs * gs);
                            const double va = a(bb, c, y + i, x + j), vb = b(bb, c, y + i, x + j);
                            ma += w * va;
                            mb += w * vb;
                            saa += w * va * va;
                            sbb += w * vb * vb;
                            sab += w * va * vb;
                        }
                    const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                    total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    ++count;
                }
    return total / count;
}

} // namespace

TEST_SUITE("metrics")
{
    TEST_CASE("gaussian noise")
    {
        const auto img = oracle::random_tensor<double>(1, 3, 256, 256, 1, 0.0, 1.0);
        CHECK(add_gaussian_noise(img, 0.0, 5).vec() == img.vec());
        const auto noisy = add_gaussian_noise(img, 25.0, 0);
        CHECK(noisy.vec() == add_gaussian_noise(img, 25.0, 0).vec());
        CHECK(noisy.vec() != add_gaussian_noise(img, 25.0, 1).vec());
        double m = 0, v = 0;
        for (std::size_t i = 0; i < img.size(); ++i) m += (noisy[i] - img[i]) / img.size();
        for (std::size_t i = 0; i < img.size(); ++i) v += std::pow(noisy[i] - img[i] - m, 2) / img.size();
        CHECK(std::abs(std::sqrt(v) - 25.0 / 255.0) < 0.02 * 25.0 / 255.0);
        CHECK(std::abs(m) < 1e-3);
    }

    TEST_CASE("psnr closed forms")
    {
        const auto a = oracle::random_tensor<double>(1, 1, 8, 8, 2);
        CHECK(psnr(a, a) == kPsnrIdentical);
        CHECK(psnr(Tensor4<double>(1, 1, 4, 4, 0.0), Tensor4<double>(1, 1, 4, 4, 1.0)) == doctest::Approx(0.0));
        CHECK(psnr(Tensor4<double>(1, 1, 4, 4, 0.3), Tensor4<double>(1, 1, 4, 4, 0.4)) == doctest::Approx(20.0).epsilon(1e-9));
        CHECK(psnr(Tensor4<double>(1, 1, 4, 4, 0.0), Tensor4<double>(1, 1, 4, 4, 2.0), 2.0) == doctest::Approx(0.0));
    }

    TEST_CASE("ssim: identity, contrast flip, symmetry, oracle")
    {
        const auto a = oracle::random_tensor<double>(1, 2, 20, 23, 3, 0.0, 1.0);
        const auto b = oracle::random_tensor<double>(1, 2, 20, 23, 4, 0.0, 1.0);
        CHECK(ssim(a, a) == 1.0);
        CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-14));
        CHECK(ssim(a, b) == doctest::Approx(ssim_oracle(a, b)).epsilon(1e-10));
        const auto mixed = add(mul(a, 0.8), mul(b, 0.2));
        CHECK(ssim(a, mixed) == doctest::Approx(ssim_oracle(a, mixed)).epsilon(1e-10));
        const Tensor4<double> k(1, 1, 16, 16, 0.1);
        // constant images: only the luminance term survives
        const double c1 = 0.01 * 0.01;
        CHECK(ssim(k, sub(Tensor4<double>(1, 1, 16, 16, 1.0), k)) ==
              doctest::Approx((2 * 0.1 * 0.9 + c1) / (0.01 + 0.81 + c1)).epsilon(1e-12));
        CHECK_THROWS_AS(ssim(Tensor4<double>(1, 1, 8, 30), Tensor4<double>(1, 1, 8, 30)), ShapeError);
    }

    TEST_CASE("losses and their gradients")
    {
        auto pred = oracle::random_tensor<double>(1, 3, 8, 8, 5);
        const auto target = oracle::random_tensor<double>(1, 3, 8, 8, 6);
        const auto same = loss_forward_backward(target, target, LossKind::l1);
        CHECK(same.value == 0.0);
        CHECK(sum_squares(same.grad) == 0.0);

        const auto l1 = loss_forward_backward(pred, target, LossKind::l1);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = pred[i] - target[i];
            CHECK(l1.grad[i] == (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / pred.size());
        }

        auto pred2 = oracle::random_tensor<double>(2, 3, 8, 8, 7);
        const auto target2 = oracle::random_tensor<double>(2, 3, 8, 8, 8);
        const auto pl = loss_forward_backward(pred2, target2, LossKind::psnr_loss);
        double expect = 0;
        for (int b = 0; b < 2; ++b) {
            double mse = 0;
            for (std::size_t i = 0; i < 192; ++i) mse += std::pow(pred2[b * 192 + i] - target2[b * 192 + i], 2) / 192;
            expect += 10 * std::log10(mse + 1e-8) / 2;
        }
        CHECK(pl.value == doctest::Approx(expect).epsilon(1e-12));
        auto f = [&] { return loss_forward_backward(pred2, target2, LossKind::psnr_loss).value; };
        CHECK(oracle::max_rel(pl.grad, oracle::fd_gradient(pred2, f)) < 1e-6);

        CHECK(parse_loss_kind("l1") == LossKind::l1);
        CHECK_THROWS(parse_loss_kind("l2"));
    }
}

TEST_SUITE("optim")
{
    TEST_CASE("zero gradients leave parameters unchanged")
    {
        Tensor4<float> p = oracle::random_tensor<float>(1, 2, 3, 3, 1), g(1, 2, 3, 3);
        const auto before = p.vec();
        ParamList<float> ps{{"p", &p}}, gs{{"g", &g}};
        auto st = make_adam_state(ps);
        for (int i = 0; i < 5; ++i) adam_step(ps, gs, st, 1e-3);
        CHECK(p.vec() == before);
    }

    TEST_CASE("first step moves by lr against the gradient sign")
    {
        for (double gval : {3.0, -0.02}) {
            Tensor4<double> p(1, 1, 1, 1, 0.5), g(1, 1, 1, 1, gval);
            ParamList<double> ps{{"p", &p}}, gs{{"g", &g}};
            auto st = make_adam_state(ps);
            adam_step(ps, gs, st, 0.01);
            CHECK(p[0] - 0.5 == doctest::Approx(-0.01 * (gval > 0 ? 1 : -1)).epsilon(1e-6));
        }
    }

    TEST_CASE("descends x^2 and applies decoupled weight decay")
    {
        Tensor4<double> x(1, 1, 1, 1, 1.0), g(1, 1, 1, 1);
        ParamList<double> ps{{"x", &x}}, gs{{"g", &g}};
        auto st = make_adam_state(ps);
        for (int i = 0; i < 100; ++i) {
            g[0] = 2 * x[0];
            adam_step(ps, gs, st, 0.1);
        }
        CHECK(std::abs(x[0]) < 0.05);

        Tensor4<double> y(1, 1, 1, 1, 2.0), gz(1, 1, 1, 1);
        ParamList<double> py{{"y", &y}}, gy{{"g", &gz}};
        AdamConfig cfg;
        cfg.weight_decay = 0.1;
        auto sy = make_adam_state(py, cfg);
        adam_step(py, gy, sy, 0.5);
        CHECK(y[0] == doctest::Approx(2.0 - 0.5 * 0.1 * 2.0));
    }

    TEST_CASE("schedules")
    {
        CHECK(learning_rate_at(LrSchedule::constant, 1e-3, 1e-6, 50, 100) == 1e-3);
        CHECK(learning_rate_at(LrSchedule::cosine, 1e-3, 1e-6, 0, 100) == doctest::Approx(1e-3));
        CHECK(learning_rate_at(LrSchedule::cosine, 1e-3, 1e-6, 50, 100) == doctest::Approx((1e-3 + 1e-6) / 2));
        CHECK(learning_rate_at(LrSchedule::cosine, 1e-3, 1e-6, 100, 100) == doctest::Approx(1e-6));
        double prev = 1.0;
        for (int i = 0; i < 100; ++i) {
            const double lr = learning_rate_at(LrSchedule::cosine, 1e-3, 1e-6, i, 100);
            CHECK(lr <= prev);
            prev = lr;
        }
    }
}

TEST_SUITE("training")
{
    TEST_CASE("corpus loading and patch sampling")
    {
        const auto corpus = load_corpus(corpus_dir("train"), 1);
        CHECK(corpus.images.size() >= 20);
        CHECK(std::is_sorted(corpus.paths.begin(), corpus.paths.end()));
        for (const auto& img : corpus.images) {
            CHECK(img.c() == 1);
            CHECK(img.h() >= 64);
            CHECK(img.w() >= 64);
        }
        const auto a = sample_patches(corpus, 32, 4, 7, 3);
        CHECK(a.shape() == Shape{4, 1, 32, 32});
        CHECK(a.vec() == sample_patches(corpus, 32, 4, 7, 3).vec());
        CHECK(a.vec() != sample_patches(corpus, 32, 4, 7, 4).vec());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i] >= 0.0f);
            CHECK(a[i] <= 1.0f);
        }
        CHECK_THROWS(load_corpus(corpus_dir("missing"), 1));
    }

    TEST_CASE("channel conversion")
    {
        Tensor4<float> rgb(1, 3, 1, 1);
        rgb[0] = 1.0f;
        rgb[1] = 0.5f;
        rgb[2] = 0.0f;
        CHECK(convert_channels(rgb, 1)[0] == doctest::Approx(0.299 + 0.5 * 0.587));
        const auto g3 = convert_channels(Tensor4<float>(1, 1, 2, 2, 0.25f), 3);
        CHECK(g3.c() == 3);
        CHECK(sum(g3) == doctest::Approx(3.0));
    }

    TEST_CASE("train config text")
    {
        TrainConfig t;
        KeyValues kv = KeyValues::parse("sigma = 15\nloss_kind = l1\nlr_schedule = constant\nadam_beta2 = 0.99\n");
        apply_train_config(t, kv);
        kv.require_all_consumed();
        CHECK(t.sigma == 15.0);
        CHECK(t.loss_kind == LossKind::l1);
        CHECK(t.lr_schedule == LrSchedule::constant);
        CHECK(t.adam.beta2 == 0.99);
        KeyValues back = KeyValues::parse(format_train_config(t));
        TrainConfig t2;
        apply_train_config(t2, back);
        CHECK(format_train_config(t2) == format_train_config(t));
        TrainConfig bad;
        bad.patch_size = 40;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }

    TEST_CASE("zero iterations returns the initialisation")
    {
        const auto dir = fs::temp_directory_path() / "kbnet_tests" / "zero_iter";
        fs::remove_all(dir);
        TrainConfig t = quick_config(dir.string());
        t.iterations = 0;
        const NetConfig cfg = oracle::tiny_config(8, 4, 1);
        auto r = train(cfg, t);
        auto init = build<float>(cfg, net_seed(t));
        CHECK(serialize_checkpoint(r.net) == serialize_checkpoint(init));
        const auto text = read_text(dir / "metrics.csv");
        CHECK(text.rfind(std::string(kMetricsHeader) + "\n", 0) == 0);
        CHECK(r.log.size() == 1);
        CHECK(r.final_eval.psnr > 0.0);
        // The untrained net is the identity, so it scores exactly the noisy baseline.
        CHECK(r.final_eval.psnr == doctest::Approx(r.final_eval.noisy_psnr).epsilon(1e-6));
    }

    TEST_CASE("seeded runs are bit identical and write the expected files")
    {
        const auto base = fs::temp_directory_path() / "kbnet_tests";
        fs::remove_all(base / "run_a");
        fs::remove_all(base / "run_b");
        const NetConfig cfg = oracle::tiny_config(8, 4, 1);
        TrainConfig ta = quick_config((base / "run_a").string());
        ta.checkpoint_every = 4;
        TrainConfig tb = ta;
        tb.output_dir = (base / "run_b").string();
        std::vector<std::int64_t> seen;
        const auto ra = train(cfg, ta, [&](const LogRow& row) { seen.push_back(row.iter); });
        const auto rb = train(cfg, tb);
        CHECK(ra.losses == rb.losses);
        CHECK(read_text(base / "run_a" / "final.kbnt") == read_text(base / "run_b" / "final.kbnt"));
        CHECK(read_text(base / "run_a" / "metrics.csv") == read_text(base / "run_b" / "metrics.csv"));
        CHECK(fs::exists(base / "run_a" / "ckpt_000004.kbnt"));
        CHECK(seen == std::vector<std::int64_t>{2, 3, 4, 6});
        // eval columns present only on eval rows
        CHECK(std::isnan(ra.log[0].eval_psnr));
        CHECK(std::isfinite(ra.log[1].eval_psnr));

        TrainConfig tc = ta;
        tc.output_dir.clear();
        tc.seed = 1;
        CHECK(train(cfg, tc).losses != ra.losses);
    }

    TEST_CASE("metrics row formatting")
    {
        LogRow r;
        r.iter = 10;
        r.loss = -25.5;
        r.eval_psnr = std::nan("");
        r.lr = 0.001;
        r.wall_ms = 12.34;
        CHECK(format_log_row(r) == "10,-25.5,,,0.001,12.3");
        r.eval_psnr = 28.25;
        r.eval_ssim = 0.75;
        CHECK(format_log_row(r) == "10,-25.5,28.250000,0.750000,0.001,12.3");
    }

    TEST_CASE("smoothing is a trailing mean")
    {
        const auto s = smooth({1, 2, 3, 4, 5}, 2);
        CHECK(s == std::vector<double>{1, 1.5, 2.5, 3.5, 4.5});
    }

    TEST_CASE("denoise keeps any image size; channel adaptation")
    {
        auto net = build<float>(oracle::tiny_config(8, 4, 1), 3);
        oracle::randomize(net.tail.weight, 4, 0.05);
        for (auto [h, w] : {std::pair{65, 70}, std::pair{16, 16}, std::pair{5, 33}}) {
            const auto img = oracle::random_tensor<float>(1, 1, h, w, 5, 0.0, 1.0);
            CHECK(denoise(net, img).shape() == img.shape());
        }
        const auto rgb = oracle::random_tensor<float>(1, 3, 20, 18, 6, 0.0, 1.0);
        const auto y = denoise_image(net, rgb);
        CHECK(y.shape() == rgb.shape());
        const auto g1 = denoise(net, slice_channels(rgb, 1, 1));
        CHECK(max_abs_diff(slice_channels(y, 1, 1), g1) == 0.0);

        auto net3 = build<float>(oracle::tiny_config(8, 4, 3), 3);
        const auto gray = oracle::random_tensor<float>(1, 1, 20, 18, 7, 0.0, 1.0);
        CHECK(denoise_image(net3, gray).shape() == gray.shape());
    }
}
