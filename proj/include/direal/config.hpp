#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "direal/data.hpp"
#include "direal/gan.hpp"

namespace direal {

// Flat `key = value` configuration with `#` comments. Unknown keys are
// rejected at parse time (with the line number); values are validated
// lazily, when a typed getter touches them, naming the offending key.
class ConfigMap {
public:
    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_real(const std::string& key, double fallback) const;
    std::size_t get_count(const std::string& key, std::size_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    // Comma-separated non-negative integers; empty/absent -> empty list.
    std::vector<std::size_t> get_index_list(const std::string& key) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

    static bool known_key(const std::string& key);

private:
    std::map<std::string, std::string> values_;
};

// Parses a config file; rejects unreadable files, lines without '=', and
// unknown keys, reporting the line number in the error message.
ConfigMap parse_config_file(const std::string& path);

// Applies repeatable `--set key=value` overrides on top of file values.
void apply_override(ConfigMap& cfg, const std::string& key_equals_value);

// Dataset described by the dataset/* keys; reproducible from the seed key.
Dataset build_dataset(const ConfigMap& cfg);

// TrainConfig assembled from the keys, validating enumerations.
TrainConfig build_train_config(const ConfigMap& cfg);

}  // namespace direal
