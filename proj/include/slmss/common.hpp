// Copyright (c) 2026 the slmss authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <sstream>
#include <string>
#include <vector>

namespace slmss {

// Default scalar type. Gradient-check tolerances assume double; define
// SLMSS_SINGLE_PRECISION to trade accuracy for speed.
#ifdef SLMSS_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

// Error taxonomy maps onto CLI exit codes: usage=1, data=2, numeric=3.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};
struct ShapeError : DataError {
    explicit ShapeError(const std::string& m) : DataError(m) {}
};

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline size_t numel_of(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

// FNV-1a, used for file checksums and dataset fingerprints.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace slmss
