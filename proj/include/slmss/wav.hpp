// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.
//
// 16-bit PCM mono WAV read/write. Samples are float in [-1,1] in memory.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "slmss/common.hpp"

namespace slmss {

struct WavData {
    std::vector<real> samples;
    int sample_rate = 0;
};

namespace detail {

inline void put_u32(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& s, uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace detail

inline void write_wav(const std::string& path, const std::vector<real>& samples, int sample_rate) {
    if (sample_rate <= 0) throw DataError("write_wav: bad sample rate " + std::to_string(sample_rate));
    const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
    std::string h;
    h.reserve(44);
    h += "RIFF";
    detail::put_u32(h, 36 + data_bytes);
    h += "WAVEfmt ";
    detail::put_u32(h, 16);
    detail::put_u16(h, 1);  // PCM
    detail::put_u16(h, 1);  // mono
    detail::put_u32(h, static_cast<uint32_t>(sample_rate));
    detail::put_u32(h, static_cast<uint32_t>(sample_rate * 2));  // byte rate
    detail::put_u16(h, 2);                                       // block align
    detail::put_u16(h, 16);                                      // bits
    h += "data";
    detail::put_u32(h, data_bytes);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_wav: cannot open " + path);
    f.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (real v : samples) {
        const real c = std::max(real(-1), std::min(real(1), v));
        const int16_t q = static_cast<int16_t>(std::lround(c * real(32767)));
        char b[2] = {static_cast<char>(q & 0xff), static_cast<char>((q >> 8) & 0xff)};
        f.write(b, 2);
    }
    if (!f) throw DataError("write_wav: write failed for " + path);
}

inline WavData read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_wav: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
        throw DataError("read_wav: " + path + " is not a RIFF/WAVE file");

    auto u16 = [&](size_t o) { return static_cast<uint16_t>(static_cast<uint8_t>(bytes[o]) | (static_cast<uint8_t>(bytes[o + 1]) << 8)); };
    auto u32 = [&](size_t o) {
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<uint8_t>(bytes[o + i]);
        return v;
    };

    WavData out;
    size_t pos = 12;
    bool have_fmt = false;
    while (pos + 8 <= bytes.size()) {
        const std::string id = bytes.substr(pos, 4);
        const uint32_t len = u32(pos + 4);
        const size_t body = pos + 8;
        if (body + len > bytes.size()) throw DataError("read_wav: truncated chunk in " + path);
        if (id == "fmt ") {
            if (len < 16) throw DataError("read_wav: short fmt chunk in " + path);
            if (u16(body) != 1 || u16(body + 2) != 1 || u16(body + 14) != 16)
                throw DataError("read_wav: " + path + " is not 16-bit PCM mono");
            out.sample_rate = static_cast<int>(u32(body + 4));
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) throw DataError("read_wav: data chunk before fmt in " + path);
            out.samples.resize(len / 2);
            for (size_t i = 0; i < out.samples.size(); ++i) {
                const int16_t q = static_cast<int16_t>(u16(body + 2 * i));
                out.samples[i] = static_cast<real>(q) / real(32767);
            }
            return out;
        }
        pos = body + len + (len & 1);  // chunks are word-aligned
    }
    throw DataError("read_wav: no data chunk in " + path);
}

}  // namespace slmss
