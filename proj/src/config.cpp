#include "verse/config.hpp"

#include <algorithm>
#include <fstream>

#include "verse/errors.hpp"
#include "verse/eval.hpp"
#include "verse/training.hpp"

namespace verse {

namespace {

bool is_open(const std::vector<std::string>& open_keys, const std::string& path) {
  return std::find(open_keys.begin(), open_keys.end(), path) != open_keys.end();
}

void merge_into(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix,
                const std::vector<std::string>& open_keys) {
  if (!patch.is_object()) throw ConfigError("expected an object at '" + (prefix.empty() ? "<root>" : prefix) + "'");
  if (is_open(open_keys, prefix)) {
    base = patch;
    return;
  }
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    nlohmann::json& slot = base[key];
    if (slot.is_object()) {
      merge_into(slot, value, path, open_keys);
    } else {
      const bool numeric = slot.is_number() && value.is_number();
      if (!numeric && slot.type() != value.type() && !slot.is_null())
        throw ConfigError("config key '" + path + "' expects " + std::string(slot.type_name()) + ", got " +
                          value.type_name());
      slot = value;
    }
  }
}

}  // namespace

nlohmann::json merge_strict(const nlohmann::json& base, const nlohmann::json& patch,
                            const std::vector<std::string>& open_keys) {
  nlohmann::json out = base;
  merge_into(out, patch, "", open_keys);
  return out;
}

void apply_override(nlohmann::json& config, const std::string& assignment, const std::vector<std::string>& open_keys) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  nlohmann::json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
    parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (it->empty()) throw ConfigError("empty path segment in override '" + key + "'");
    patch = nlohmann::json{{*it, patch}};
  }
  merge_into(config, patch, "", open_keys);
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& value) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << value.dump(2) << "\n";
  if (!os) throw IoError("write failed for " + path.string());
}

template <typename Config>
Config resolve_config(const Config& defaults, const std::optional<std::filesystem::path>& file,
                      const std::vector<std::string>& overrides, const std::vector<std::string>& open_keys) {
  nlohmann::json j = defaults;
  if (file) j = merge_strict(j, read_json_file(*file), open_keys);
  for (const auto& o : overrides) apply_override(j, o, open_keys);
  try {
    Config c = j.get<Config>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  } catch (const ContractError& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

template TrainConfig resolve_config<TrainConfig>(const TrainConfig&, const std::optional<std::filesystem::path>&,
                                                 const std::vector<std::string>&, const std::vector<std::string>&);
template EvalProtocol resolve_config<EvalProtocol>(const EvalProtocol&, const std::optional<std::filesystem::path>&,
                                                   const std::vector<std::string>&, const std::vector<std::string>&);
template GenSpec resolve_config<GenSpec>(const GenSpec&, const std::optional<std::filesystem::path>&,
                                         const std::vector<std::string>&, const std::vector<std::string>&);

}  // namespace verse
