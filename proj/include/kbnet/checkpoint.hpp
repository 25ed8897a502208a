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

#include "kbnet/net.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kbnet {

/// Checkpoint layout (all integers little-endian):
///
///   "KBNT"                       magic
///   u32 version                  currently 1
///   u32 len, len bytes           network config in key = value form
///   u64                          FNV-1a 64 of the config bytes
///   u32 count                    number of parameter records
///   count x record:
///     u32 len, len bytes         hierarchical parameter name
///     u32 n, c, h, w             shape
///     n*c*h*w x f32              values
///     u64                        FNV-1a 64 of the record bytes above
///   u64                          FNV-1a 64 of everything after the version
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { io, bad_magic, version_mismatch, checksum_mismatch, format };

    CheckpointError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize_checkpoint(const Network<float>& net);
Network<float> deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Network<float>& net, const std::string& path);
Network<float> load_checkpoint(const std::string& path);

} // namespace kbnet
