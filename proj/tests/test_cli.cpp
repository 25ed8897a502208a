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

#include "kbnet/image.hpp"
#include "kbnet/macs.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace kbnet;
namespace fs = std::filesystem;

namespace {

const fs::path& work_dir()
{
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "kbnet_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

struct Run {
    int code;
    std::string out;
};

Run run(const std::string& args)
{
    const fs::path log = work_dir() / "last_output.txt";
    const std::string cmd = std::string("\"") + KBNET_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream s;
    s << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, s.str()};
}

std::string read_bytes(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path write_config(const std::string& name, const std::string& extra)
{
    const fs::path p = work_dir() / name;
    std::ofstream out(p);
    const fs::path corpus = fs::path(KBNET_SOURCE_DIR) / "data" / "corpus";
    out << "# smoke run\n"
        << "base_width = 8\nencoder_blocks = 1,1,1,1\ndecoder_blocks = 1,1,1,1\nn_bases = 4\n"
        << "in_channels = 1\nout_channels = 1\n"
        << "patch_size = 32\nbatch_size = 2\niterations = 4\neval_every = 0\nlog_every = 2\n"
        << "log_wall_time = false\n"
        << "train_dir = " << (corpus / "train").string() << "\n"
        << "eval_dir = " << (corpus / "eval").string() << "\n"
        << extra;
    return p;
}

// Trains once and shares the checkpoint between test cases.
const fs::path& trained_checkpoint()
{
    static const fs::path ckpt = [] {
        const fs::path cfg = write_config("train.conf", "output_dir = run\n");
        const Run r = run("train --config \"" + cfg.string() + "\" --seed 3");
        REQUIRE(r.code == 0);
        return work_dir() / "run" / "final.kbnt";
    }();
    return ckpt;
}

} // namespace

TEST_SUITE("cli")
{
    TEST_CASE("usage errors exit with 2")
    {
        CHECK(run("").code == 2);
        CHECK(run("frobnicate").code == 2);
        CHECK(run("equiv-check --bogus-flag").code == 2);
        CHECK(run("count-macs --size 64x64").code == 2);
        CHECK(run("count-macs --config /nonexistent.conf --size 64x64").code == 2);
        CHECK(run("denoise --ckpt /nonexistent.kbnt --in x --out y").code == 2);
        CHECK(run("grad-check --component nonsense").code == 2);
        CHECK(run("--help").code == 0);

        const fs::path bad = write_config("bad.conf", "base_wdith = 8\n");
        const Run r = run("count-macs --config \"" + bad.string() + "\" --size 64x64");
        CHECK(r.code == 2);
        CHECK(r.out.find("base_wdith") != std::string::npos);
        const fs::path invalid = write_config("invalid.conf", "kernel_size = 4\n");
        CHECK(run("count-macs --config \"" + invalid.string() + "\" --size 64x64").code == 2);
        CHECK(run("count-macs --config \"" + bad.string() + "\" --size 60x64").code == 2);
    }

    TEST_CASE("check subcommands report and set the exit code")
    {
        Run ok = run("grad-check --component simple_gate --component kba");
        CHECK(ok.code == 0);
        CHECK(ok.out.find("simple_gate") != std::string::npos);
        CHECK(ok.out.find("kba") != std::string::npos);
        CHECK(run("grad-check --component kba --corrupt").code == 1);
        CHECK(run("grad-check --component kba --tol 1e-30").code == 1);
        CHECK(run("equiv-check --count 20 --seed 4").code == 0);
    }

    TEST_CASE("count-macs on the tiny config matches the oracle")
    {
        const fs::path cfg = fs::path(KBNET_SOURCE_DIR) / "configs" / "tiny.conf";
        const Run r = run("count-macs --config \"" + cfg.string() + "\" --size 64x96");
        REQUIRE(r.code == 0);
        const auto pos = r.out.rfind("total");
        REQUIRE(pos != std::string::npos);
        const std::uint64_t total = std::stoull(r.out.substr(pos + 5));
        CHECK(total == oracle::network_macs(oracle::tiny_config(8, 4, 1), 64, 96));
    }

    TEST_CASE("train, eval, denoise and viz-coeffs")
    {
        const fs::path& ckpt = trained_checkpoint();
        REQUIRE(fs::exists(ckpt));
        CHECK(fs::exists(ckpt.parent_path() / "metrics.csv"));

        const fs::path clean = fs::path(KBNET_SOURCE_DIR) / "data" / "corpus" / "eval";
        const Run e = run("eval --ckpt \"" + ckpt.string() + "\" --clean \"" + clean.string() + "\" --sigma 25 --seed 0");
        CHECK(e.code == 0);
        CHECK(e.out.find("mean psnr") != std::string::npos);
        CHECK(e.out == run("eval --ckpt \"" + ckpt.string() + "\" --clean \"" + clean.string() + "\" --sigma 25 --seed 0").out);

        // Odd-sized inputs in several formats keep their size.
        const fs::path in = work_dir() / "inputs";
        fs::create_directories(in);
        Image gray;
        gray.width = 70;
        gray.height = 65;
        gray.channels = 1;
        gray.samples.assign(gray.size(), 100);
        for (std::size_t i = 0; i < gray.size(); ++i) gray.samples[i] = static_cast<std::uint8_t>((i * 37) % 256);
        write_image((in / "odd.pgm").string(), gray);
        Image rgb = gray;
        rgb.channels = 3;
        rgb.width = 33;
        rgb.height = 17;
        rgb.samples.assign(rgb.size(), 50);
        write_image((in / "color.png").string(), rgb);

        const fs::path out = work_dir() / "denoised";
        const Run d = run("denoise --ckpt \"" + ckpt.string() + "\" --in \"" + in.string() + "\" --out \"" + out.string() + "\"");
        REQUIRE(d.code == 0);
        const Image og = read_image((out / "odd.pgm").string());
        CHECK(og.width == 70);
        CHECK(og.height == 65);
        const Image oc = read_image((out / "color.png").string());
        CHECK(oc.width == 33);
        CHECK(oc.height == 17);
        CHECK(oc.channels == 3);

        const fs::path v1 = work_dir() / "viz1", v2 = work_dir() / "viz2";
        const std::string src = (in / "odd.pgm").string();
        REQUIRE(run("viz-coeffs --ckpt \"" + ckpt.string() + "\" --in \"" + src + "\" --out \"" + v1.string() + "\" --seed 5").code == 0);
        REQUIRE(run("viz-coeffs --ckpt \"" + ckpt.string() + "\" --in \"" + src + "\" --out \"" + v2.string() + "\" --seed 5").code == 0);
        for (int s = 0; s < 4; ++s) {
            const std::string name = "odd_stage" + std::to_string(s) + ".png";
            CHECK(read_bytes(v1 / name) == read_bytes(v2 / name));
            const Image m = read_image((v1 / name).string());
            CHECK(m.width == 70);
            CHECK(m.height == 65);
        }
        const fs::path v3 = work_dir() / "viz3";
        CHECK(run("viz-coeffs --ckpt \"" + ckpt.string() + "\" --in \"" + src + "\" --out \"" + v3.string() + "\" --stage 1").code == 0);
        CHECK(fs::exists(v3 / "odd_stage1.png"));
        CHECK_FALSE(fs::exists(v3 / "odd_stage0.png"));
        CHECK(run("viz-coeffs --ckpt \"" + ckpt.string() + "\" --in \"" + src + "\" --out \"" + v3.string() + "\" --stage 7").code == 2);

        // A corrupted checkpoint is an IO-class error.
        std::string bytes = read_bytes(ckpt);
        bytes[bytes.size() / 2] ^= 0x10;
        const fs::path broken = work_dir() / "broken.kbnt";
        std::ofstream(broken, std::ios::binary) << bytes;
        const Run b = run("denoise --ckpt \"" + broken.string() + "\" --in \"" + in.string() + "\" --out \"" + out.string() + "\"");
        CHECK(b.code == 2);
        CHECK(b.out.find("checksum") != std::string::npos);
    }
}
