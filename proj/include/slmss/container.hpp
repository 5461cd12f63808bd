// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.
//
// Checkpoint container: magic "SLMS", format version, a JSON config header,
// a table of named float64 tensors, and a trailing FNV-1a checksum so a
// truncated or corrupted file fails loudly instead of loading partially.
// All integers little-endian.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "slmss/common.hpp"
#include "slmss/tensor.hpp"

namespace slmss {

inline constexpr uint32_t kContainerVersion = 1;

struct Container {
    nlohmann::json config = nlohmann::json::object();
    std::map<std::string, Tensor> tensors;  // ordered by name
};

namespace detail {

inline void put_u32le(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64le(std::string& s, uint64_t v) {
    for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline uint32_t get_u32le(const std::string& s, size_t& pos, const std::string& path) {
    if (pos + 4 > s.size()) throw DataError("checkpoint " + path + ": truncated");
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<uint8_t>(s[pos + i]);
    pos += 4;
    return v;
}

}  // namespace detail

inline void save_container(const std::string& path, const Container& c) {
    std::string buf;
    buf += "SLMS";
    detail::put_u32le(buf, kContainerVersion);
    const std::string cfg = c.config.dump();
    detail::put_u32le(buf, static_cast<uint32_t>(cfg.size()));
    buf += cfg;
    detail::put_u32le(buf, static_cast<uint32_t>(c.tensors.size()));
    for (const auto& [name, t] : c.tensors) {
        detail::put_u32le(buf, static_cast<uint32_t>(name.size()));
        buf += name;
        detail::put_u32le(buf, static_cast<uint32_t>(t.shape().size()));
        for (int d : t.shape()) detail::put_u32le(buf, static_cast<uint32_t>(d));
        for (real v : t.data()) {
            const double dv = static_cast<double>(v);
            uint64_t bits;
            std::memcpy(&bits, &dv, 8);
            detail::put_u64le(buf, bits);
        }
    }
    detail::put_u64le(buf, fnv1a(buf.data(), buf.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("checkpoint: cannot open " + path + " for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("checkpoint: write failed for " + path);
}

inline Container load_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 4 + 4 + 8 || buf.compare(0, 4, "SLMS") != 0)
        throw DataError("checkpoint " + path + ": not a SLMS container");

    const uint64_t want = fnv1a(buf.data(), buf.size() - 8);
    uint64_t got = 0;
    for (int i = 7; i >= 0; --i) got = (got << 8) | static_cast<uint8_t>(buf[buf.size() - 8 + i]);
    if (want != got) throw DataError("checkpoint " + path + ": checksum mismatch (corrupt or truncated)");

    size_t pos = 4;
    const uint32_t version = detail::get_u32le(buf, pos, path);
    if (version != kContainerVersion)
        throw DataError("checkpoint " + path + ": format version " + std::to_string(version) +
                        ", this build reads version " + std::to_string(kContainerVersion));

    Container c;
    const uint32_t cfg_len = detail::get_u32le(buf, pos, path);
    if (pos + cfg_len > buf.size()) throw DataError("checkpoint " + path + ": truncated");
    try {
        c.config = nlohmann::json::parse(buf.substr(pos, cfg_len));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path + ": bad config header: " + e.what());
    }
    pos += cfg_len;

    const uint32_t count = detail::get_u32le(buf, pos, path);
    const size_t payload_end = buf.size() - 8;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = detail::get_u32le(buf, pos, path);
        if (pos + name_len > payload_end) throw DataError("checkpoint " + path + ": truncated");
        const std::string name = buf.substr(pos, name_len);
        pos += name_len;
        const uint32_t rank = detail::get_u32le(buf, pos, path);
        std::vector<int> shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(detail::get_u32le(buf, pos, path));
        const size_t n = numel_of(shape);
        if (pos + n * 8 > payload_end) throw DataError("checkpoint " + path + ": truncated tensor " + name);
        Tensor t = Tensor::zeros(shape);
        for (size_t e = 0; e < n; ++e) {
            uint64_t bits = 0;
            for (int b = 7; b >= 0; --b) bits = (bits << 8) | static_cast<uint8_t>(buf[pos + e * 8 + b]);
            double dv;
            std::memcpy(&dv, &bits, 8);
            t.data()[e] = static_cast<real>(dv);
        }
        pos += n * 8;
        if (!c.tensors.emplace(name, t).second)
            throw DataError("checkpoint " + path + ": duplicate tensor " + name);
    }
    if (pos != payload_end) throw DataError("checkpoint " + path + ": trailing bytes after tensor table");
    return c;
}

}  // namespace slmss
