#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fairstitch/config.hpp"
#include "fairstitch/errors.hpp"

namespace fairstitch {

// ============================================================================
// Run-config file loader. Reads the TOML subset the config actually uses:
// [section] tables one level deep, key = value with booleans, integers,
// floats, quoted strings, flat arrays, and # comments. Every key is matched
// against the RunConfig schema; unknown or duplicate keys are rejected with
// their full path.
// ============================================================================

struct TomlValue {
    enum class Kind { Bool, Int, Float, String, Array };
    Kind kind = Kind::String;
    bool boolean = false;
    long long integer = 0;
    double real = 0.0;
    std::string text;
    std::vector<TomlValue> array;
};

namespace detail_toml {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// Removes an unquoted trailing comment.
inline std::string strip_comment(const std::string& s) {
    bool in_string = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') in_string = !in_string;
        if (s[i] == '#' && !in_string) return s.substr(0, i);
    }
    return s;
}

inline ConfigError bad_line(const std::filesystem::path& path, std::size_t line_no,
                            const std::string& what) {
    return ConfigError("config '" + path.string() + "' line " + std::to_string(line_no) +
                       ": " + what);
}

inline TomlValue parse_scalar(const std::string& raw, const std::filesystem::path& path,
                              std::size_t line_no) {
    TomlValue v;
    const std::string s = trim(raw);
    if (s.empty()) throw bad_line(path, line_no, "empty value");
    if (s == "true" || s == "false") {
        v.kind = TomlValue::Kind::Bool;
        v.boolean = s == "true";
        return v;
    }
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"') {
            throw bad_line(path, line_no, "unterminated string");
        }
        v.kind = TomlValue::Kind::String;
        v.text = s.substr(1, s.size() - 2);
        return v;
    }
    const bool looks_float =
        s.find('.') != std::string::npos || s.find('e') != std::string::npos ||
        s.find('E') != std::string::npos || s == "inf" || s == "nan";
    try {
        std::size_t used = 0;
        if (looks_float) {
            v.kind = TomlValue::Kind::Float;
            v.real = std::stod(s, &used);
        } else {
            v.kind = TomlValue::Kind::Int;
            v.integer = std::stoll(s, &used);
        }
        if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
        throw bad_line(path, line_no, "cannot parse value '" + s + "'");
    }
    return v;
}

inline TomlValue parse_value(const std::string& raw, const std::filesystem::path& path,
                             std::size_t line_no) {
    const std::string s = trim(raw);
    if (!s.empty() && s.front() == '[') {
        if (s.back() != ']') throw bad_line(path, line_no, "unterminated array");
        TomlValue v;
        v.kind = TomlValue::Kind::Array;
        const std::string inner = s.substr(1, s.size() - 2);
        std::string element;
        bool in_string = false;
        for (char c : inner) {
            if (c == '"') in_string = !in_string;
            if (c == ',' && !in_string) {
                v.array.push_back(parse_scalar(element, path, line_no));
                element.clear();
            } else {
                element += c;
            }
        }
        if (!trim(element).empty()) v.array.push_back(parse_scalar(element, path, line_no));
        return v;
    }
    return parse_scalar(s, path, line_no);
}

inline double number_of(const TomlValue& v, const std::string& key) {
    if (v.kind == TomlValue::Kind::Float) return v.real;
    if (v.kind == TomlValue::Kind::Int) return static_cast<double>(v.integer);
    throw ConfigError(key + ": expected a number");
}

inline std::uint64_t unsigned_of(const TomlValue& v, const std::string& key) {
    if (v.kind != TomlValue::Kind::Int || v.integer < 0) {
        throw ConfigError(key + ": expected a non-negative integer");
    }
    return static_cast<std::uint64_t>(v.integer);
}

inline std::string string_of(const TomlValue& v, const std::string& key) {
    if (v.kind != TomlValue::Kind::String) throw ConfigError(key + ": expected a string");
    return v.text;
}

inline bool bool_of(const TomlValue& v, const std::string& key) {
    if (v.kind != TomlValue::Kind::Bool) throw ConfigError(key + ": expected true|false");
    return v.boolean;
}

inline std::vector<double> number_array_of(const TomlValue& v, const std::string& key) {
    if (v.kind != TomlValue::Kind::Array) throw ConfigError(key + ": expected an array");
    std::vector<double> out;
    out.reserve(v.array.size());
    for (const TomlValue& e : v.array) out.push_back(number_of(e, key));
    return out;
}

inline std::vector<std::size_t> size_array_of(const TomlValue& v, const std::string& key) {
    if (v.kind != TomlValue::Kind::Array) throw ConfigError(key + ": expected an array");
    std::vector<std::size_t> out;
    out.reserve(v.array.size());
    for (const TomlValue& e : v.array) out.push_back(unsigned_of(e, key));
    return out;
}

} // namespace detail_toml

inline std::map<std::string, TomlValue> parse_toml(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
    std::map<std::string, TomlValue> values;
    std::string section;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = detail_toml::trim(detail_toml::strip_comment(line));
        if (stripped.empty()) continue;
        if (stripped.front() == '[') {
            if (stripped.back() != ']') {
                throw detail_toml::bad_line(path, line_no, "unterminated section header");
            }
            section = detail_toml::trim(stripped.substr(1, stripped.size() - 2));
            if (section.empty()) {
                throw detail_toml::bad_line(path, line_no, "empty section name");
            }
            continue;
        }
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw detail_toml::bad_line(path, line_no, "expected key = value");
        }
        const std::string key = detail_toml::trim(stripped.substr(0, eq));
        if (key.empty()) throw detail_toml::bad_line(path, line_no, "empty key");
        const std::string full = section.empty() ? key : section + "." + key;
        if (values.count(full) != 0) {
            throw detail_toml::bad_line(path, line_no, "duplicate key '" + full + "'");
        }
        values[full] = detail_toml::parse_value(stripped.substr(eq + 1), path, line_no);
    }
    return values;
}

// Applies a parsed config file onto a RunConfig. Every key must belong to the
// schema; value validation beyond types happens in RunConfig::validate().
inline void apply_toml(RunConfig& cfg, const std::map<std::string, TomlValue>& values) {
    using namespace detail_toml;
    for (const auto& [key, v] : values) {
        if (key == "out") {
            cfg.out_dir = string_of(v, key);
        } else if (key == "data.source") {
            cfg.data.source = string_of(v, key);
        } else if (key == "data.csv_train") {
            cfg.data.csv_train = string_of(v, key);
        } else if (key == "data.csv_val") {
            cfg.data.csv_val = string_of(v, key);
        } else if (key == "data.csv_test") {
            cfg.data.csv_test = string_of(v, key);
        } else if (key == "synth.n") {
            cfg.synth.n = unsigned_of(v, key);
        } else if (key == "synth.d") {
            cfg.synth.d = unsigned_of(v, key);
        } else if (key == "synth.cell_probs") {
            cfg.synth.cell_probs = number_array_of(v, key);
        } else if (key == "synth.class_separation") {
            cfg.synth.class_separation = number_of(v, key);
        } else if (key == "synth.attribute_shift") {
            cfg.synth.attribute_shift = number_of(v, key);
        } else if (key == "synth.label_noise") {
            cfg.synth.label_noise = number_of(v, key);
        } else if (key == "split.fractions") {
            cfg.split.fractions = number_array_of(v, key);
        } else if (key == "split.stratify") {
            cfg.split.stratify = bool_of(v, key);
        } else if (key == "split.balanced_carve") {
            cfg.split.balanced_carve = number_of(v, key);
        } else if (key == "seeds.init") {
            cfg.seeds.init = unsigned_of(v, key);
        } else if (key == "seeds.data") {
            cfg.seeds.data = unsigned_of(v, key);
        } else if (key == "seeds.train") {
            cfg.seeds.train = unsigned_of(v, key);
        } else if (key == "model.dims") {
            cfg.model.dims = size_array_of(v, key);
        } else if (key == "model.stitch_index") {
            cfg.model.stitch_index = unsigned_of(v, key);
        } else if (key == "constraint.kind") {
            cfg.constraint.kind = string_of(v, key);
        } else if (key == "constraint.alpha") {
            cfg.constraint.alpha = number_of(v, key);
        } else if (key == "constraint.eo_denominator") {
            cfg.constraint.eo_denominator = string_of(v, key);
        } else if (key == "optimizer.lr") {
            cfg.optimizer.lr = number_of(v, key);
        } else if (key == "optimizer.momentum") {
            cfg.optimizer.momentum = number_of(v, key);
        } else if (key == "optimizer.weight_decay") {
            cfg.optimizer.weight_decay = number_of(v, key);
        } else if (key == "train.erm_epochs") {
            cfg.train.erm_epochs = unsigned_of(v, key);
        } else if (key == "train.finetune_epochs") {
            cfg.train.finetune_epochs = unsigned_of(v, key);
        } else if (key == "eval.threshold") {
            cfg.eval.threshold = number_of(v, key);
        } else if (key == "eval.abroca_grid") {
            cfg.eval.abroca_grid = unsigned_of(v, key);
        } else if (key == "eval.eo_diff_mode") {
            cfg.eval.eo_diff_mode = string_of(v, key);
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
}

inline RunConfig load_config_file(const std::filesystem::path& path) {
    RunConfig cfg;
    apply_toml(cfg, parse_toml(path));
    return cfg;
}

} // namespace fairstitch
