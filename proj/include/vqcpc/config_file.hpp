#ifndef VQCPC_CONFIG_FILE_HPP
#define VQCPC_CONFIG_FILE_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace vqcpc {

/// Flat `key = value` UTF-8 text. '#' starts a comment; keys keep file
/// order; later assignments override earlier ones.
using FlatConfig = std::vector<std::pair<std::string, std::string>>;

FlatConfig parse_flat_config(const std::string& text);
FlatConfig load_flat_config(const std::string& path);
void save_flat_config(const FlatConfig& cfg, const std::string& path);
std::string flat_config_to_text(const FlatConfig& cfg);

std::optional<std::string> config_get(const FlatConfig& cfg, const std::string& key);
void config_set(FlatConfig& cfg, const std::string& key, const std::string& value);

std::size_t config_get_size(const FlatConfig& cfg, const std::string& key, std::size_t fallback);
double config_get_double(const FlatConfig& cfg, const std::string& key, double fallback);
bool config_get_bool(const FlatConfig& cfg, const std::string& key, bool fallback);
std::uint64_t config_get_u64(const FlatConfig& cfg, const std::string& key,
                             std::uint64_t fallback);

}  // namespace vqcpc

#endif
