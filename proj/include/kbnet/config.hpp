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

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace kbnet {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Flat `key = value` text. Blank lines and `#` comments are ignored; keys
/// may not repeat.
class KeyValues {
public:
    static KeyValues parse(const std::string& text, const std::string& source = "<config>");
    static KeyValues load(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    void set(const std::string& key, const std::string& value);

    /// Returns the value and marks the key as consumed.
    const std::string* take(const std::string& key);
    /// Keys that were never taken; used to reject typos.
    std::vector<std::string> unconsumed() const;
    void require_all_consumed() const;

    const std::map<std::string, std::string>& entries() const noexcept { return values_; }
    const std::string& source() const noexcept { return source_; }

private:
    std::string source_;
    std::map<std::string, std::string> values_;
    std::map<std::string, bool> taken_;
};

int parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
std::vector<int> parse_int_list(const std::string& key, const std::string& value);

} // namespace kbnet
