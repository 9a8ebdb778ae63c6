#pragma once

// Layered run configuration: built-in defaults < config file < MELODIST_*
// environment variables < command-line flags. The fully resolved map is
// snapshotted into every output directory.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "melodist/common.hpp"

extern char** environ;

namespace melodist {

struct RunConfig {
    std::map<std::string, std::string> values;

    bool has(const std::string& key) const { return values.count(key) > 0; }
    void set(const std::string& key, const std::string& v) { values[key] = v; }

    std::string get(const std::string& key) const {
        auto it = values.find(key);
        if (it == values.end()) throw ConfigurationError("missing config key: " + key);
        return it->second;
    }
    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = values.find(key);
        return it == values.end() ? fallback : it->second;
    }
    long get_int(const std::string& key) const {
        try {
            return std::stol(get(key));
        } catch (const std::invalid_argument&) {
            throw ConfigurationError("config key " + key + " is not an integer: " + get(key));
        }
    }
    double get_double(const std::string& key) const {
        try {
            return std::stod(get(key));
        } catch (const std::invalid_argument&) {
            throw ConfigurationError("config key " + key + " is not a number: " + get(key));
        }
    }
    bool get_bool(const std::string& key) const {
        std::string v = get(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigurationError("config key " + key + " is not a boolean: " + v);
    }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace config_detail

// Minimal sectioned key/value format: `[section]` headers and `key = value`
// lines, '#' comments. Keys flatten to "section.key".
inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw MissingPrerequisiteError("config file not found: " + path);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = config_detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = config_detail::trim(t.substr(1, t.size() - 2));
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ValidationError(path + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = config_detail::trim(t.substr(0, eq));
        std::string val = config_detail::trim(t.substr(eq + 1));
        if (val.size() >= 2 && val.front() == '"' && val.back() == '"')
            val = val.substr(1, val.size() - 2);
        cfg.set(section.empty() ? key : section + "." + key, val);
    }
}

// MELODIST_TRAIN_STEPS=500 overrides key "train.steps" (single underscore
// splits section from key; later underscores stay in the key).
inline void apply_env_overrides(RunConfig& cfg, const std::string& prefix = "MELODIST_") {
    for (char** e = environ; e && *e; ++e) {
        std::string entry(*e);
        if (entry.rfind(prefix, 0) != 0) continue;
        std::size_t eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string raw = entry.substr(prefix.size(), eq - prefix.size());
        std::string val = entry.substr(eq + 1);
        std::string key;
        for (char c : raw) key.push_back(char(std::tolower(static_cast<unsigned char>(c))));
        std::size_t us = key.find('_');
        if (us != std::string::npos) key[us] = '.';
        cfg.set(key, val);
    }
}

inline RunConfig default_config() {
    RunConfig c;
    c.set("run.seed", "0");
    c.set("run.out", "artifacts");
    c.set("data.songs", "50");
    c.set("data.min_frames", "300");
    c.set("data.max_frames", "500");
    c.set("data.exclude_svs_extra", "false");
    c.set("data.exclude_song_data", "false");
    c.set("train.codec_steps", "2000");
    c.set("train.tritower_steps", "3000");
    c.set("train.svs_steps", "2000");
    c.set("train.v2a_steps", "2000");
    c.set("train.lr", "0.001");
    c.set("train.overfit", "0");  // 0 = use the whole training split
    c.set("train.segment_frames", "16");
    c.set("train.crop_frames", "128");
    c.set("model.n_q", "3");
    c.set("model.latent_dim", "16");
    c.set("model.codec_channels", "8");
    c.set("model.global_layers", "2");
    c.set("model.global_width", "64");
    c.set("model.global_heads", "4");
    c.set("model.local_layers", "1");
    c.set("model.local_width", "64");
    c.set("model.local_heads", "4");
    c.set("model.max_frames", "600");
    c.set("model.tritower_width", "64");
    c.set("model.tritower_layers", "2");
    c.set("tritower.text_aug", "true");
    c.set("tritower.spec_aug", "true");
    c.set("sample.top_k", "30");
    c.set("sample.temperature", "0.8");
    return c;
}

inline void snapshot_config(const RunConfig& cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::ofstream os(std::filesystem::path(out_dir) / "config_resolved.toml");
    if (!os) throw RuntimeFailure("cannot write config snapshot in " + out_dir);
    std::string section;
    for (const auto& [k, v] : cfg.values) {
        std::size_t dot = k.find('.');
        std::string sec = dot == std::string::npos ? "" : k.substr(0, dot);
        std::string key = dot == std::string::npos ? k : k.substr(dot + 1);
        if (sec != section) {
            os << "[" << sec << "]\n";
            section = sec;
        }
        os << key << " = " << v << "\n";
    }
}

}  // namespace melodist
