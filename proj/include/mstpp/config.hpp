#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mstpp {

/// Flat dotted key=value text ("train.batch_size=20"). Blank lines and lines
/// starting with '#' are ignored.
class KeyValueConfig {
   public:
    static KeyValueConfig parse(std::istream& is) {
        KeyValueConfig cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return cfg;
    }

    static KeyValueConfig parse(const std::string& text) {
        std::istringstream is(text);
        return parse(is);
    }

    static KeyValueConfig load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::invalid_argument("cannot open config '" + path + "'");
        return parse(is);
    }

    void set(const std::string& key, std::string value) {
        if (key.empty()) throw std::invalid_argument("config: empty key");
        values_[key] = std::move(value);
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw std::invalid_argument("config: missing key '" + key + "'");
        return it->second;
    }

    template <typename T>
    T get_as(const std::string& key) const {
        return convert<T>(key, get(key));
    }

    /// Assigns `out` when the key is present.
    template <typename T>
    void read(const std::string& key, T& out) const {
        if (has(key)) out = get_as<T>(key);
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

    std::string dump() const {
        std::string s;
        for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
        return s;
    }

    template <typename T>
    static T convert(const std::string& key, const std::string& v) {
        if constexpr (std::is_same_v<T, std::string>) {
            return v;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (v == "true" || v == "1") return true;
            if (v == "false" || v == "0") return false;
            throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + v + "'");
        } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
            std::vector<std::size_t> out;
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ',')) out.push_back(convert<std::size_t>(key, trim(item)));
            return out;
        } else if constexpr (std::is_floating_point_v<T>) {
            std::size_t used = 0;
            double d = 0.0;
            try {
                d = std::stod(v, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != v.size() || v.empty())
                throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
            return static_cast<T>(d);
        } else {
            T out{};
            const auto* end = v.data() + v.size();
            const auto [ptr, ec] = std::from_chars(v.data(), end, out);
            if (ec != std::errc() || ptr != end)
                throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + v + "'");
            return out;
        }
    }

   private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace mstpp
