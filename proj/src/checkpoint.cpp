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

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace kbnet {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace {

using Kind = CheckpointError::Kind;

class Writer {
public:
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i) {
            buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) {
            buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(const std::string& s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    std::size_t size() const noexcept { return buf_.size(); }
    std::span<const std::uint8_t> since(std::size_t start) const { return {buf_.data() + start, buf_.size() - start}; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    Reader(std::span<const std::uint8_t> data, std::size_t end) : data_(data), end_(end) {}

    std::size_t pos() const noexcept { return pos_; }

    std::uint32_t u32(const char* what)
    {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        }
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what)
    {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        }
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32("parameter value")); }
    std::string str(std::size_t len, const char* what)
    {
        need(len, what);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), len);
        pos_ += len;
        return s;
    }
    void need(std::size_t n, const char* what) const
    {
        if (n > end_ || pos_ > end_ - n) {
            throw CheckpointError(Kind::checksum_mismatch, std::string("checkpoint truncated at offset ") +
                                                               std::to_string(pos_) + " while reading " + what);
        }
    }

private:
    std::span<const std::uint8_t> data_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

constexpr std::size_t kHeaderSize = 8;
constexpr std::size_t kTrailerSize = 8;

// Walks the record structure checking per-section checksums, to name the
// region that a whole-file checksum failure comes from.
std::string locate_corruption(std::span<const std::uint8_t> bytes)
{
    try {
        Reader r(bytes, bytes.size() >= kTrailerSize ? bytes.size() - kTrailerSize : 0);
        r.str(kHeaderSize, "header");
        const std::size_t cfg_start = r.pos();
        const std::uint32_t cfg_len = r.u32("config length");
        r.str(cfg_len, "config");
        const std::size_t cfg_end = r.pos();
        if (r.u64("config checksum") != fnv1a64(bytes.subspan(cfg_start, cfg_end - cfg_start))) {
            return "config section, bytes [" + std::to_string(cfg_start) + ", " + std::to_string(cfg_end) + ")";
        }
        const std::uint32_t count = r.u32("parameter count");
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::size_t start = r.pos();
            const std::uint32_t name_len = r.u32("name length");
            const std::string name = r.str(name_len, "name");
            std::uint64_t numel = 1;
            for (int d = 0; d < 4; ++d) {
                numel *= r.u32("shape");
            }
            r.str(numel * 4, "values");
            const std::size_t end = r.pos();
            if (r.u64("record checksum") != fnv1a64(bytes.subspan(start, end - start))) {
                return "parameter record " + std::to_string(i) + " ('" + name + "'), bytes [" + std::to_string(start) +
                       ", " + std::to_string(end) + ")";
            }
        }
        return "record table or trailer, bytes [" + std::to_string(r.pos()) + ", " + std::to_string(bytes.size()) +
               ")";
    } catch (const CheckpointError& e) {
        return e.what();
    }
}

} // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Network<float>& net)
{
    auto& mutable_net = const_cast<Network<float>&>(net);
    Writer w;
    w.bytes("KBNT");
    w.u32(kCheckpointVersion);

    const std::size_t cfg_start = w.size();
    const std::string cfg = format_net_config(net.config);
    w.u32(static_cast<std::uint32_t>(cfg.size()));
    w.bytes(cfg);
    w.u64(fnv1a64(w.since(cfg_start)));

    const auto params = param_list(mutable_net);
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& ref : params) {
        const std::size_t start = w.size();
        w.u32(static_cast<std::uint32_t>(ref.name.size()));
        w.bytes(ref.name);
        const Shape& s = ref.tensor->shape();
        w.u32(s.n);
        w.u32(s.c);
        w.u32(s.h);
        w.u32(s.w);
        for (float v : ref.tensor->span()) {
            w.f32(v);
        }
        w.u64(fnv1a64(w.since(start)));
    }
    w.u64(fnv1a64(w.since(kHeaderSize)));
    return w.take();
}

Network<float> deserialize_checkpoint(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "KBNT", 4) != 0) {
        throw CheckpointError(Kind::bad_magic, "not a checkpoint: missing 'KBNT' magic");
    }
    if (bytes.size() < kHeaderSize) {
        throw CheckpointError(Kind::checksum_mismatch, "checkpoint truncated inside the header");
    }
    {
        Reader r(bytes, bytes.size());
        r.str(4, "magic");
        const std::uint32_t version = r.u32("version");
        if (version != kCheckpointVersion) {
            throw CheckpointError(Kind::version_mismatch, "checkpoint version " + std::to_string(version) +
                                                              " is not supported (expected " +
                                                              std::to_string(kCheckpointVersion) + ")");
        }
    }
    if (bytes.size() < kHeaderSize + kTrailerSize) {
        throw CheckpointError(Kind::checksum_mismatch, "checkpoint truncated: no room for the trailing checksum");
    }
    const std::size_t payload_end = bytes.size() - kTrailerSize;
    Reader trailer(bytes, bytes.size());
    trailer.str(payload_end, "payload");
    const std::uint64_t stored = trailer.u64("checksum");
    if (stored != fnv1a64(bytes.subspan(kHeaderSize, payload_end - kHeaderSize))) {
        throw CheckpointError(Kind::checksum_mismatch,
                              "checkpoint checksum mismatch; damaged region: " + locate_corruption(bytes));
    }

    Reader r(bytes, payload_end);
    r.str(kHeaderSize, "header");
    const std::uint32_t cfg_len = r.u32("config length");
    const std::string cfg_text = r.str(cfg_len, "config");
    r.u64("config checksum");

    NetConfig cfg;
    try {
        KeyValues kv = KeyValues::parse(cfg_text, "checkpoint config");
        apply_net_config(cfg, kv);
        kv.require_all_consumed();
        cfg.validate();
    } catch (const std::exception& e) {
        throw CheckpointError(Kind::format, std::string("invalid network config in checkpoint: ") + e.what());
    }

    Network<float> net(cfg);
    auto params = param_list(net);
    const std::uint32_t count = r.u32("parameter count");
    if (count != params.size()) {
        throw CheckpointError(Kind::format, "checkpoint holds " + std::to_string(count) +
                                                " parameters, config implies " + std::to_string(params.size()));
    }
    for (auto& ref : params) {
        const std::uint32_t name_len = r.u32("name length");
        const std::string name = r.str(name_len, "name");
        if (name != ref.name) {
            throw CheckpointError(Kind::format, "expected parameter '" + ref.name + "', found '" + name + "'");
        }
        Shape s;
        s.n = static_cast<int>(r.u32("shape"));
        s.c = static_cast<int>(r.u32("shape"));
        s.h = static_cast<int>(r.u32("shape"));
        s.w = static_cast<int>(r.u32("shape"));
        if (s != ref.tensor->shape()) {
            throw CheckpointError(Kind::format, "parameter '" + name + "' has shape " + to_string(s) + ", expected " +
                                                    to_string(ref.tensor->shape()));
        }
        for (auto& v : ref.tensor->span()) {
            v = r.f32();
        }
        r.u64("record checksum");
    }
    if (r.pos() != payload_end) {
        throw CheckpointError(Kind::format, "trailing bytes after the last parameter record");
    }
    return net;
}

void save_checkpoint(const Network<float>& net, const std::string& path)
{
    const auto bytes = serialize_checkpoint(net);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw CheckpointError(Kind::io, "cannot open '" + path + "' for writing");
    }
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw CheckpointError(Kind::io, "failed writing '" + path + "'");
    }
}

Network<float> load_checkpoint(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw CheckpointError(Kind::io, "cannot open checkpoint '" + path + "'");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

} // namespace kbnet
