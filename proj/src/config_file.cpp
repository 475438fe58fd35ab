#include "vqcpc/config_file.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vqcpc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

FlatConfig parse_flat_config(const std::string& text) {
  FlatConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
    config_set(cfg, key, value);
  }
  return cfg;
}

FlatConfig load_flat_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_flat_config(ss.str());
}

std::string flat_config_to_text(const FlatConfig& cfg) {
  std::ostringstream os;
  for (const auto& [k, v] : cfg) os << k << " = " << v << "\n";
  return os.str();
}

void save_flat_config(const FlatConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file " + path);
  out << flat_config_to_text(cfg);
}

std::optional<std::string> config_get(const FlatConfig& cfg, const std::string& key) {
  for (const auto& [k, v] : cfg)
    if (k == key) return v;
  return std::nullopt;
}

void config_set(FlatConfig& cfg, const std::string& key, const std::string& value) {
  for (auto& [k, v] : cfg)
    if (k == key) {
      v = value;
      return;
    }
  cfg.emplace_back(key, value);
}

std::size_t config_get_size(const FlatConfig& cfg, const std::string& key,
                            std::size_t fallback) {
  auto v = config_get(cfg, key);
  return v ? static_cast<std::size_t>(std::stoull(*v)) : fallback;
}

double config_get_double(const FlatConfig& cfg, const std::string& key, double fallback) {
  auto v = config_get(cfg, key);
  return v ? std::stod(*v) : fallback;
}

bool config_get_bool(const FlatConfig& cfg, const std::string& key, bool fallback) {
  auto v = config_get(cfg, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "on" || *v == "1") return true;
  if (*v == "false" || *v == "off" || *v == "0") return false;
  throw std::invalid_argument("config key " + key + ": expected a boolean, got '" + *v + "'");
}

std::uint64_t config_get_u64(const FlatConfig& cfg, const std::string& key,
                             std::uint64_t fallback) {
  auto v = config_get(cfg, key);
  return v ? std::stoull(*v) : fallback;
}

}  // namespace vqcpc
