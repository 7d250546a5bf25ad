#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

namespace alignlab {

/// Flat `key = value` text configuration. Lines starting with '#' and blank
/// lines are ignored; keys are case-sensitive.
class KeyValueConfig {
  public:
    static KeyValueConfig from_file(const std::string& path);
    static KeyValueConfig from_string(const std::string& text);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    void set(const std::string& key, const std::string& value);
    const std::map<std::string, std::string>& entries() const { return entries_; }
    std::string to_text() const;

  private:
    std::map<std::string, std::string> entries_;
};

}  // namespace alignlab
