#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mirf/tensor.hpp"

namespace mirf {

// config errors exit with code 2 at the CLI, stage errors with 1
struct ConfigError : Error {
    using Error::Error;
};

// `key = value` lines, `#` comments. Values stay strings until queried.
class Config {
public:
    static Config parse_text(const std::string& text);
    static Config parse_file(const std::string& path);

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // throws ConfigError listing the valid keys on the first unknown one
    void require_known(const std::vector<std::string>& known) const;

    std::string canonical() const;  // sorted "key = value" lines
    uint64_t hash() const;          // FNV-1a over canonical()

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace mirf
