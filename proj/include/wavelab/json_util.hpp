#pragma once

#include <algorithm>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace wavelab {

// Invalid configuration; the message starts with the dotted field path.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace json_util {

inline void require_object(const nlohmann::json& j, const std::string& context) {
    if (!j.is_object()) throw ConfigError(context + ": expected a JSON object");
}

inline void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                               const std::string& context) {
    require_object(j, context);
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
            throw ConfigError(context + "." + it.key() + ": unknown key");
        }
    }
}

// Assigns j[key] to out when present; type errors name the field.
template <class T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& context) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(context + "." + key + ": " + e.what());
    }
}

}  // namespace json_util
}  // namespace wavelab
