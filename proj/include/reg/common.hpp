#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace reg {

// Error taxonomy. Every precondition failure in the library throws one of
// these; callers that need machine-readable failures catch by type.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Array shapes or sizes disagree.
struct shape_error : error {
    using error::error;
};

// Argument outside its mathematical domain (e.g. score at sigma(t)=0).
struct domain_error : error {
    using error::error;
};

// NaN/Inf surfaced where finite values are required.
struct numeric_error : error {
    using error::error;
};

// Filesystem / serialization failures; message carries the path.
struct io_error : error {
    using error::error;
};

inline void require_shape(bool ok, const std::string& what) {
    if (!ok) throw shape_error(what);
}

inline void require_domain(bool ok, const std::string& what) {
    if (!ok) throw domain_error(what);
}

// 64-bit FNV-1a. Used for config hashing; stable across platforms.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

inline std::string hex16(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// Shortest round-trip decimal form; used everywhere a double goes into a
// text artifact (CSV, SVG, manifests) so output bytes are deterministic.
std::string format_double(double v);

}  // namespace reg

#include <charconv>

namespace reg {

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace reg
