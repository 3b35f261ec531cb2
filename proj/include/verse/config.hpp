#pragma once

// JSON configuration files with dotted-key overrides.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace verse {

/// Recursively applies patch onto base. Every key in patch must already exist
/// in base; objects listed in open_keys (dotted paths) accept new keys.
nlohmann::json merge_strict(const nlohmann::json& base, const nlohmann::json& patch,
                            const std::vector<std::string>& open_keys = {});

/// "a.b.c=value". The value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& config, const std::string& assignment,
                    const std::vector<std::string>& open_keys = {});

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& value);

/// Starts from defaults, merges the optional file, then the overrides in order.
template <typename Config>
Config resolve_config(const Config& defaults, const std::optional<std::filesystem::path>& file,
                      const std::vector<std::string>& overrides, const std::vector<std::string>& open_keys = {});

}  // namespace verse
