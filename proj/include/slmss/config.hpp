// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.
//
// key=value config files, one pair per line, dotted keys for sections
// (codec.m=8). '#' starts a comment. Typed accessors validate on read.

#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>

#include "slmss/common.hpp"

namespace slmss {

class KvConfig {
public:
    static KvConfig from_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw DataError("config: cannot open " + path);
        KvConfig c;
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw UsageError("config " + path + ":" + std::to_string(lineno) + ": expected key=value, got '" +
                                 trimmed + "'");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string val = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw UsageError("config " + path + ":" + std::to_string(lineno) + ": empty key");
            c.kv_[key] = val;
        }
        return c;
    }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    const std::map<std::string, std::string>& items() const { return kv_; }

    std::string str(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw UsageError("config: missing key '" + key + "'");
        return it->second;
    }
    std::string str(const std::string& key, const std::string& def) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? def : it->second;
    }

    int64_t i64(const std::string& key) const { return parse_i64(key, str(key)); }
    int64_t i64(const std::string& key, int64_t def) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? def : parse_i64(key, it->second);
    }

    double num(const std::string& key) const { return parse_num(key, str(key)); }
    double num(const std::string& key, double def) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? def : parse_num(key, it->second);
    }

    bool flag(const std::string& key, bool def) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return def;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw UsageError("config: key '" + key + "' expects true/false, got '" + it->second + "'");
    }

    // Overlay `other` onto this config; every key must already exist here,
    // so the base (defaults) acts as the schema.
    void overlay_checked(const KvConfig& other, const std::string& source) {
        for (const auto& [k, v] : other.kv_) {
            if (!kv_.count(k)) throw UsageError(source + ": unknown key '" + k + "'");
            kv_[k] = v;
        }
    }

private:
    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }
    static int64_t parse_i64(const std::string& key, const std::string& v) {
        try {
            size_t used = 0;
            const int64_t r = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw UsageError("config: key '" + key + "' expects integer, got '" + v + "'");
        }
    }
    static double parse_num(const std::string& key, const std::string& v) {
        try {
            size_t used = 0;
            const double r = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw UsageError("config: key '" + key + "' expects number, got '" + v + "'");
        }
    }

    std::map<std::string, std::string> kv_;
};

}  // namespace slmss
