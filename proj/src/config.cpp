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

#include "kbnet/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace kbnet {

namespace {

std::string trim(const std::string& s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
        return "";
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

} // namespace

KeyValues KeyValues::parse(const std::string& text, const std::string& source)
{
    KeyValues kv;
    kv.source_ = source;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.resize(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
        }
        if (kv.values_.count(key)) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        }
        kv.values_[key] = value;
    }
    return kv;
}

KeyValues KeyValues::load(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
}

const std::string& KeyValues::get(const std::string& key) const
{
    auto it = values_.find(key);
    if (it == values_.end()) {
        throw ConfigError(source_ + ": missing key '" + key + "'");
    }
    return it->second;
}

void KeyValues::set(const std::string& key, const std::string& value)
{
    values_[key] = value;
}

const std::string* KeyValues::take(const std::string& key)
{
    auto it = values_.find(key);
    if (it == values_.end()) {
        return nullptr;
    }
    taken_[key] = true;
    return &it->second;
}

std::vector<std::string> KeyValues::unconsumed() const
{
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
        if (!taken_.count(k)) {
            out.push_back(k);
        }
    }
    return out;
}

void KeyValues::require_all_consumed() const
{
    const auto left = unconsumed();
    if (!left.empty()) {
        std::string msg = source_ + ": unknown key";
        msg += left.size() > 1 ? "s" : "";
        for (const auto& k : left) {
            msg += " '" + k + "'";
        }
        throw ConfigError(msg);
    }
}

int parse_int(const std::string& key, const std::string& value)
{
    int out = 0;
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + value + "'");
    }
    return out;
}

double parse_double(const std::string& key, const std::string& value)
{
    try {
        std::size_t used = 0;
        const double d = std::stod(value, &used);
        if (used != value.size()) {
            throw std::invalid_argument(value);
        }
        return d;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value)
{
    if (value == "true" || value == "1" || value == "on" || value == "yes") {
        return true;
    }
    if (value == "false" || value == "0" || value == "off" || value == "no") {
        return false;
    }
    throw ConfigError("key '" + key + "': expected true/false, got '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value)
{
    std::vector<int> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_int(key, trim(item)));
    }
    return out;
}

} // namespace kbnet
