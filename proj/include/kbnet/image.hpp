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

#include "kbnet/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kbnet {

enum class ImageFormat { png, ppm, pgm };

std::string to_string(ImageFormat f);

/// 8-bit image with interleaved samples (row-major, channel fastest).
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0; // 1 or 3
    std::vector<std::uint8_t> samples;
    ImageFormat format = ImageFormat::png;

    std::size_t size() const noexcept { return static_cast<std::size_t>(width) * height * channels; }
};

/// Decode failure; `offset` is the byte position where parsing stopped.
class ImageError : public std::runtime_error {
public:
    ImageError(const std::string& msg, std::size_t offset)
        : std::runtime_error(msg + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset)
    {
    }
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Sniffs the format from the leading bytes.
Image decode_image(std::span<const std::uint8_t> bytes);
Image decode_netpbm(std::span<const std::uint8_t> bytes);
Image decode_png(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_image(const Image& img, ImageFormat format);
std::vector<std::uint8_t> encode_netpbm(const Image& img);
std::vector<std::uint8_t> encode_png(const Image& img);

/// Format from the file extension (.png, .ppm, .pgm); throws on anything else.
ImageFormat format_for_path(const std::string& path);
bool is_image_path(const std::string& path);

/// IO errors throw std::runtime_error; malformed data throws ImageError.
Image read_image(const std::string& path);
/// Writes in the format implied by the extension. PGM requires one channel
/// and PPM three.
void write_image(const std::string& path, const Image& img);

/// (1, channels, h, w), samples / 255.
Tensor4<float> image_to_tensor(const Image& img);
/// Clamps to [0, 1] (NaN to 0) and quantises with round-half-up: floor(v * 255 + 0.5).
template <typename T>
Image tensor_to_image(const Tensor4<T>& t, int batch = 0);

} // namespace kbnet
