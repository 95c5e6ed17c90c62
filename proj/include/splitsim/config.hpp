#pragma once

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "splitsim/errors.hpp"
#include "splitsim/units.hpp"

// Structured-text run configuration: `[section]` headers, `key = value`
// lines, `#` comments. Values are quoted strings, numbers, or booleans.
// Getters record which keys were read so that a finished loader can reject
// leftovers -- a misspelled key should be an error, not a silent default.

namespace splitsim {

class Config {
public:
    Config() = default;

    static Config parse(const std::string& text, const std::string& origin = "<string>") {
        Config cfg;
        cfg.origin_ = origin;
        std::istringstream in(text);
        std::string line;
        std::string section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            cfg.parse_line(line, lineno, section);
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in)
            throw ValidationError("cannot open config file '" + path + "'");
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str(), path);
    }

    bool has(const std::string& section, const std::string& key) const {
        auto s = values_.find(section);
        return s != values_.end() && s->second.count(key) > 0;
    }

    bool has_section(const std::string& section) const {
        return values_.count(section) > 0;
    }

    // Raw string form of the value; throws if absent.
    std::string get_raw(const std::string& section, const std::string& key) const {
        auto s = values_.find(section);
        if (s == values_.end() || !s->second.count(key))
            throw ValidationError(origin_ + ": missing required key [" + section + "] " + key);
        touched_.insert(section + "." + key);
        return s->second.at(key).text;
    }

    std::string get_string(const std::string& section, const std::string& key) const {
        return get_raw(section, key);
    }
    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
        return has(section, key) ? get_raw(section, key) : fallback;
    }

    double get_number(const std::string& section, const std::string& key) const {
        return to_number(get_raw(section, key), section, key);
    }
    double get_number(const std::string& section, const std::string& key, double fallback) const {
        return has(section, key) ? get_number(section, key) : fallback;
    }

    long get_integer(const std::string& section, const std::string& key) const {
        const double v = get_number(section, key);
        const long n = static_cast<long>(v);
        if (static_cast<double>(n) != v)
            throw ValidationError(origin_ + ": [" + section + "] " + key +
                                  " must be an integer, got '" + get_peek(section, key) + "'");
        return n;
    }
    long get_integer(const std::string& section, const std::string& key, long fallback) const {
        return has(section, key) ? get_integer(section, key) : fallback;
    }

    std::uint64_t get_seed(const std::string& section, const std::string& key,
                           std::uint64_t fallback) const {
        if (!has(section, key)) return fallback;
        const std::string raw = get_raw(section, key);
        char* end = nullptr;
        const unsigned long long v = std::strtoull(raw.c_str(), &end, 10);
        if (end == raw.c_str() || *end != '\0')
            throw ValidationError(origin_ + ": [" + section + "] " + key +
                                  " must be a non-negative integer, got '" + raw + "'");
        return static_cast<std::uint64_t>(v);
    }

    bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
        if (!has(section, key)) return fallback;
        const std::string raw = get_raw(section, key);
        if (raw == "true") return true;
        if (raw == "false") return false;
        throw ValidationError(origin_ + ": [" + section + "] " + key +
                              " must be true or false, got '" + raw + "'");
    }

    // Unit-checked quantity ("80 um", "1.9 kG/cm", ...). The dimension is
    // fixed by the caller; a bare number or a token from another dimension
    // is rejected with the offending string in the message.
    double get_quantity(const std::string& section, const std::string& key,
                        const std::string& dimension) const {
        const std::string raw = get_raw(section, key);
        try {
            return parse_quantity(raw, dimension);
        } catch (const ValidationError& e) {
            throw ValidationError(origin_ + ": [" + section + "] " + key + ": " + e.what());
        }
    }
    double get_quantity(const std::string& section, const std::string& key,
                        const std::string& dimension, double fallback) const {
        return has(section, key) ? get_quantity(section, key, dimension) : fallback;
    }

    // Call after the loader has read everything it understands. Any key
    // never touched by a getter is reported -- catches typos and stale
    // options in one pass.
    void reject_unknown() const {
        std::vector<std::string> stray;
        for (const auto& [section, keys] : values_)
            for (const auto& [key, val] : keys)
                if (!touched_.count(section + "." + key))
                    stray.push_back("[" + section + "] " + key +
                                    " (line " + std::to_string(val.line) + ")");
        if (stray.empty()) return;
        std::string msg = origin_ + ": unrecognized config keys:";
        for (const std::string& s : stray) msg += "\n  " + s;
        throw ValidationError(msg);
    }

    // Canonical text for run manifests: sections and keys sorted, values
    // verbatim. Two configs with equal canonical text behave identically.
    std::string canonical_text() const {
        std::string out;
        for (const auto& [section, keys] : values_) {
            out += "[" + section + "]\n";
            for (const auto& [key, val] : keys)
                out += key + " = " + val.text + "\n";
        }
        return out;
    }

    const std::string& origin() const { return origin_; }

private:
    struct Value {
        std::string text;
        int line = 0;
    };

    std::string get_peek(const std::string& section, const std::string& key) const {
        return values_.at(section).at(key).text;
    }

    double to_number(const std::string& raw, const std::string& section,
                     const std::string& key) const {
        char* end = nullptr;
        const double v = std::strtod(raw.c_str(), &end);
        if (end == raw.c_str() || *end != '\0')
            throw ValidationError(origin_ + ": [" + section + "] " + key +
                                  " must be a number, got '" + raw + "'");
        return v;
    }

    void parse_line(const std::string& line, int lineno, std::string& section) {
        const auto fail = [&](const std::string& what) {
            throw ValidationError(origin_ + ":" + std::to_string(lineno) + ": " + what);
        };

        size_t i = 0;
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        if (i == line.size() || line[i] == '#') return;

        if (line[i] == '[') {
            const size_t close = line.find(']', i);
            if (close == std::string::npos) fail("unterminated section header");
            section = trim(line.substr(i + 1, close - i - 1));
            if (section.empty()) fail("empty section name");
            size_t rest = close + 1;
            while (rest < line.size() && std::isspace(static_cast<unsigned char>(line[rest]))) ++rest;
            if (rest < line.size() && line[rest] != '#')
                fail("trailing text after section header");
            return;
        }

        const size_t eq = line.find('=', i);
        if (eq == std::string::npos) fail("expected 'key = value'");
        const std::string key = trim(line.substr(i, eq - i));
        if (key.empty()) fail("empty key");
        if (section.empty()) fail("key '" + key + "' appears before any [section]");

        size_t v = eq + 1;
        while (v < line.size() && std::isspace(static_cast<unsigned char>(line[v]))) ++v;
        std::string value;
        if (v < line.size() && line[v] == '"') {
            const size_t close = line.find('"', v + 1);
            if (close == std::string::npos) fail("unterminated string for key '" + key + "'");
            value = line.substr(v + 1, close - v - 1);
            size_t rest = close + 1;
            while (rest < line.size() && std::isspace(static_cast<unsigned char>(line[rest]))) ++rest;
            if (rest < line.size() && line[rest] != '#')
                fail("trailing text after string value of '" + key + "'");
        } else {
            const size_t hash = line.find('#', v);
            value = trim(line.substr(v, hash == std::string::npos ? std::string::npos : hash - v));
            if (value.empty()) fail("missing value for key '" + key + "'");
        }

        auto& slot = values_[section][key];
        if (slot.line != 0)
            fail("duplicate key '" + key + "' in [" + section + "]"
                 " (first set on line " + std::to_string(slot.line) + ")");
        slot = Value{value, lineno};
    }

    static std::string trim(const std::string& s) {
        size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    std::string origin_ = "<none>";
    std::map<std::string, std::map<std::string, Value>> values_;
    mutable std::set<std::string> touched_;
};

} // namespace splitsim
