#pragma once

#include <map>
#include <string>
#include <vector>

namespace malbench::config {

/// Flat key-value config with INI-style sections:
///
///     # comment
///     [section]
///     key = value
///
/// Keys before any section header land in the "" section. Values are kept as
/// strings; typed getters parse on demand.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& section, const std::string& key) const;
    std::vector<std::string> section_names() const;

    std::string get_str(const std::string& section, const std::string& key,
                        const std::string& fallback) const;
    std::string require_str(const std::string& section, const std::string& key) const;
    long long get_int(const std::string& section, const std::string& key, long long fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    /// Comma-separated list, entries trimmed, empties dropped.
    std::vector<std::string> get_list(const std::string& section, const std::string& key) const;

    void set(const std::string& section, const std::string& key, const std::string& value);

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

std::vector<std::string> split_list(const std::string& csv);
std::string trim(const std::string& s);

}  // namespace malbench::config
