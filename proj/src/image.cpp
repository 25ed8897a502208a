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

#include "kbnet/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace kbnet {

std::string to_string(ImageFormat f)
{
    switch (f) {
    case ImageFormat::png:
        return "png";
    case ImageFormat::ppm:
        return "ppm";
    case ImageFormat::pgm:
        return "pgm";
    }
    return "?";
}

namespace {

constexpr std::array<std::uint8_t, 8> kPngSignature{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
// Guards against absurd header dimensions before allocating.
constexpr std::uint64_t kMaxPixels = 1ull << 28;

void check_dims(std::uint64_t w, std::uint64_t h, std::size_t offset)
{
    if (w == 0 || h == 0) {
        throw ImageError("image has zero width or height", offset);
    }
    if (w > 1u << 20 || h > 1u << 20 || w * h > kMaxPixels) {
        throw ImageError("image dimensions " + std::to_string(w) + "x" + std::to_string(h) + " are too large",
                         offset);
    }
}

// ---------------------------------------------------------------------------
// Netpbm

bool is_space(std::uint8_t c)
{
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

class PnmHeader {
public:
    explicit PnmHeader(std::span<const std::uint8_t> b) : b_(b) {}

    std::size_t pos() const noexcept { return pos_; }

    // Skips whitespace and '#' comments, then reads a decimal integer.
    std::uint64_t number(const char* what)
    {
        for (;;) {
            while (pos_ < b_.size() && is_space(b_[pos_])) {
                ++pos_;
            }
            if (pos_ < b_.size() && b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n' && b_[pos_] != '\r') {
                    ++pos_;
                }
                continue;
            }
            break;
        }
        if (pos_ >= b_.size()) {
            throw ImageError(std::string("netpbm header ends before the ") + what, pos_);
        }
        if (b_[pos_] < '0' || b_[pos_] > '9') {
            throw ImageError(std::string("netpbm header: expected a decimal ") + what, pos_);
        }
        std::uint64_t v = 0;
        while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') {
            v = v * 10 + (b_[pos_] - '0');
            if (v > (1u << 30)) {
                throw ImageError(std::string("netpbm header: ") + what + " out of range", pos_);
            }
            ++pos_;
        }
        return v;
    }

    // Exactly one whitespace character separates maxval from the raster.
    void raster_separator()
    {
        if (pos_ >= b_.size() || !is_space(b_[pos_])) {
            throw ImageError("netpbm header: missing whitespace after maxval", pos_);
        }
        ++pos_;
    }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 2;
};

// ---------------------------------------------------------------------------
// PNG

std::uint32_t read_be32(const std::uint8_t* p)
{
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4], const std::vector<std::uint8_t>& data)
{
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_be32(out, static_cast<std::uint32_t>(crc));
}

std::uint8_t paeth(int a, int b, int c)
{
    const int p = a + b - c;
    const int pa = std::abs(p - a);
    const int pb = std::abs(p - b);
    const int pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) {
        return static_cast<std::uint8_t>(a);
    }
    return static_cast<std::uint8_t>(pb <= pc ? b : c);
}

} // namespace

Image decode_netpbm(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw ImageError("not a binary netpbm file (expected P5 or P6)", 0);
    }
    Image img;
    img.channels = bytes[1] == '6' ? 3 : 1;
    img.format = bytes[1] == '6' ? ImageFormat::ppm : ImageFormat::pgm;

    PnmHeader hdr(bytes);
    const std::size_t dims_at = hdr.pos();
    const std::uint64_t w = hdr.number("width");
    const std::uint64_t h = hdr.number("height");
    check_dims(w, h, dims_at);
    const std::size_t maxval_at = hdr.pos();
    const std::uint64_t maxval = hdr.number("maxval");
    if (maxval < 1 || maxval > 65535) {
        throw ImageError("netpbm maxval " + std::to_string(maxval) + " outside 1..65535", maxval_at);
    }
    hdr.raster_separator();

    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    const std::size_t count = img.size();
    const std::size_t bps = maxval > 255 ? 2 : 1;
    const std::size_t start = hdr.pos();
    if (bytes.size() - start < count * bps) {
        throw ImageError("netpbm raster truncated: need " + std::to_string(count * bps) + " bytes, have " +
                             std::to_string(bytes.size() - start),
                         bytes.size());
    }
    img.samples.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t v = bps == 2 ? (static_cast<std::uint32_t>(bytes[start + 2 * i]) << 8) | bytes[start + 2 * i + 1]
                                   : bytes[start + i];
        if (v > maxval) {
            throw ImageError("netpbm sample " + std::to_string(v) + " exceeds maxval", start + i * bps);
        }
        if (maxval != 255) {
            v = static_cast<std::uint32_t>((v * 255u * 2 + maxval) / (2 * maxval));
        }
        img.samples[i] = static_cast<std::uint8_t>(v);
    }
    return img;
}

std::vector<std::uint8_t> encode_netpbm(const Image& img)
{
    if (img.channels != 1 && img.channels != 3) {
        throw std::invalid_argument("encode_netpbm: channels must be 1 or 3");
    }
    const std::string header = std::string(img.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(img.width) + " " +
                               std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.samples.begin(), img.samples.end());
    return out;
}

Image decode_png(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < kPngSignature.size() ||
        !std::equal(kPngSignature.begin(), kPngSignature.end(), bytes.begin())) {
        throw ImageError("missing PNG signature", 0);
    }
    Image img;
    img.format = ImageFormat::png;
    std::vector<std::uint8_t> idat;
    bool have_header = false;
    bool have_end = false;
    std::size_t pos = kPngSignature.size();
    std::size_t idat_at = 0;

    while (!have_end) {
        if (bytes.size() - pos < 12) {
            throw ImageError("PNG chunk truncated: header or CRC missing", pos);
        }
        const std::uint32_t len = read_be32(&bytes[pos]);
        const std::uint8_t* type = &bytes[pos + 4];
        if (len > bytes.size() - pos - 12) {
            throw ImageError("PNG chunk '" + std::string(type, type + 4) + "' truncated: declares " +
                                 std::to_string(len) + " bytes",
                             pos);
        }
        const std::uint8_t* data = type + 4;
        const std::uint32_t stored = read_be32(data + len);
        const auto crc = static_cast<std::uint32_t>(crc32(0L, type, len + 4));
        if (crc != stored) {
            throw ImageError("PNG chunk '" + std::string(type, type + 4) + "' fails its CRC", pos);
        }
        const std::string name(type, type + 4);
        if (!have_header && name != "IHDR") {
            throw ImageError("PNG: first chunk must be IHDR, found '" + name + "'", pos);
        }
        if (name == "IHDR") {
            if (have_header || len != 13) {
                throw ImageError("PNG: malformed IHDR", pos);
            }
            have_header = true;
            const std::uint32_t w = read_be32(data);
            const std::uint32_t h = read_be32(data + 4);
            check_dims(w, h, pos + 8);
            const int depth = data[8];
            const int color = data[9];
            if (depth != 8) {
                throw ImageError("PNG bit depth " + std::to_string(depth) + " unsupported (only 8)", pos + 16);
            }
            if (color != 0 && color != 2) {
                throw ImageError("PNG color type " + std::to_string(color) + " unsupported (gray or RGB only)",
                                 pos + 17);
            }
            if (data[10] != 0 || data[11] != 0) {
                throw ImageError("PNG: unknown compression or filter method", pos + 18);
            }
            if (data[12] != 0) {
                throw ImageError("PNG: interlaced images are not supported", pos + 20);
            }
            img.width = static_cast<int>(w);
            img.height = static_cast<int>(h);
            img.channels = color == 2 ? 3 : 1;
        } else if (name == "IDAT") {
            if (idat.empty()) {
                idat_at = pos;
            }
            idat.insert(idat.end(), data, data + len);
        } else if (name == "IEND") {
            have_end = true;
        } else if ((type[0] & 0x20) == 0 && name != "PLTE") {
            throw ImageError("PNG: unsupported critical chunk '" + name + "'", pos);
        }
        pos += 12 + len;
    }
    if (idat.empty()) {
        throw ImageError("PNG has no IDAT data", pos);
    }

    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    const std::size_t raw_size = (stride + 1) * img.height;
    std::vector<std::uint8_t> raw(raw_size + 1);
    uLongf got = static_cast<uLongf>(raw.size());
    const int rc = uncompress(raw.data(), &got, idat.data(), static_cast<uLong>(idat.size()));
    if ((rc != Z_OK && rc != Z_BUF_ERROR) || got != raw_size) {
        throw ImageError("PNG image data does not inflate to " + std::to_string(raw_size) + " bytes", idat_at);
    }

    const std::size_t bpp = img.channels;
    img.samples.resize(stride * img.height);
    for (int y = 0; y < img.height; ++y) {
        const std::uint8_t filter = raw[y * (stride + 1)];
        const std::uint8_t* src = &raw[y * (stride + 1) + 1];
        std::uint8_t* dst = &img.samples[y * stride];
        const std::uint8_t* up = y > 0 ? dst - stride : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= bpp ? dst[i - bpp] : 0;
            const int b = up ? up[i] : 0;
            const int c = (up && i >= bpp) ? up[i - bpp] : 0;
            int pred = 0;
            switch (filter) {
            case 0:
                break;
            case 1:
                pred = a;
                break;
            case 2:
                pred = b;
                break;
            case 3:
                pred = (a + b) / 2;
                break;
            case 4:
                pred = paeth(a, b, c);
                break;
            default:
                throw ImageError("PNG row " + std::to_string(y) + " has invalid filter type " +
                                     std::to_string(filter),
                                 idat_at);
            }
            dst[i] = static_cast<std::uint8_t>(src[i] + pred);
        }
    }
    return img;
}

std::vector<std::uint8_t> encode_png(const Image& img)
{
    if (img.channels != 1 && img.channels != 3) {
        throw std::invalid_argument("encode_png: channels must be 1 or 3");
    }
    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    std::vector<std::uint8_t> raw;
    raw.reserve((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), img.samples.begin() + y * stride, img.samples.begin() + (y + 1) * stride);
    }
    uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> packed(packed_size);
    if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw std::runtime_error("encode_png: deflate failed");
    }
    packed.resize(packed_size);

    std::vector<std::uint8_t> out(kPngSignature.begin(), kPngSignature.end());
    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(img.width));
    put_be32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.insert(ihdr.end(), {8, static_cast<std::uint8_t>(img.channels == 3 ? 2 : 0), 0, 0, 0});
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", packed);
    put_chunk(out, "IEND", {});
    return out;
}

Image decode_image(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
        return decode_netpbm(bytes);
    }
    if (bytes.size() >= 1 && bytes[0] == kPngSignature[0]) {
        return decode_png(bytes);
    }
    throw ImageError("unrecognised image format (expected PNG, P5 or P6)", 0);
}

std::vector<std::uint8_t> encode_image(const Image& img, ImageFormat format)
{
    if (img.samples.size() != img.size()) {
        throw std::invalid_argument("encode_image: sample count does not match dimensions");
    }
    switch (format) {
    case ImageFormat::png:
        return encode_png(img);
    case ImageFormat::ppm:
        if (img.channels != 3) {
            throw std::invalid_argument("PPM output needs 3 channels");
        }
        return encode_netpbm(img);
    case ImageFormat::pgm:
        if (img.channels != 1) {
            throw std::invalid_argument("PGM output needs 1 channel");
        }
        return encode_netpbm(img);
    }
    throw std::invalid_argument("encode_image: unknown format");
}

ImageFormat format_for_path(const std::string& path)
{
    std::string ext = std::filesystem::path(path).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") {
        return ImageFormat::png;
    }
    if (ext == ".ppm") {
        return ImageFormat::ppm;
    }
    if (ext == ".pgm") {
        return ImageFormat::pgm;
    }
    throw std::invalid_argument("unsupported image extension '" + ext + "' in " + path);
}

bool is_image_path(const std::string& path)
{
    try {
        format_for_path(path);
        return true;
    } catch (const std::invalid_argument&) {
        return false;
    }
}

Image read_image(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open image '" + path + "'");
    }
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
        return decode_image(bytes);
    } catch (const ImageError& e) {
        throw ImageError(path + ": " + e.what(), e.offset());
    }
}

void write_image(const std::string& path, const Image& img)
{
    const auto bytes = encode_image(img, format_for_path(path));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw std::runtime_error("failed writing '" + path + "'");
    }
}

Tensor4<float> image_to_tensor(const Image& img)
{
    Tensor4<float> t(1, img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c) {
        float* dst = t.plane(0, c);
        for (std::size_t p = 0; p < static_cast<std::size_t>(img.width) * img.height; ++p) {
            dst[p] = static_cast<float>(img.samples[p * img.channels + c]) / 255.0f;
        }
    }
    return t;
}

template <typename T>
Image tensor_to_image(const Tensor4<T>& t, int batch)
{
    if (t.c() != 1 && t.c() != 3) {
        throw ShapeError("tensor_to_image: expected 1 or 3 channels, got " + std::to_string(t.c()));
    }
    Image img;
    img.width = t.w();
    img.height = t.h();
    img.channels = t.c();
    img.samples.resize(img.size());
    for (int c = 0; c < t.c(); ++c) {
        const T* src = t.plane(batch, c);
        for (std::size_t p = 0; p < static_cast<std::size_t>(img.width) * img.height; ++p) {
            const double raw = static_cast<double>(src[p]);
            const double v = raw > 0.0 ? std::min(raw, 1.0) : 0.0;
            img.samples[p * img.channels + c] = static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
        }
    }
    return img;
}

template Image tensor_to_image(const Tensor4<float>&, int);
template Image tensor_to_image(const Tensor4<double>&, int);

} // namespace kbnet
