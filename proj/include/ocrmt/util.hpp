#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ocrmt {

inline constexpr const char* kVersion = "0.1.0";

// Bad or missing input data (files, formats, preconditions on user input).
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes in a numeric operation.
struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values or other numeric breakdown.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// splitmix64: cheap seed-derivation step, used to fan one user seed out into
// independent deterministic streams.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream));
}

inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b) {
    return derive_seed(derive_seed(seed, a), b);
}

inline uint64_t fnv1a64_bytes(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; i++) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64_bytes(s.data(), s.size(), h);
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline uint64_t file_hash(const std::string& path) {
    std::string bytes = read_file_bytes(path);
    return fnv1a64_bytes(bytes.data(), bytes.size());
}

inline std::string hex64(uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

// Shortest round-trippable decimal form; used everywhere a double is printed
// so that reports and CSVs are byte-reproducible.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    for (int prec = 1; prec < 17; prec++) {
        char shorter[40];
        std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
        std::sscanf(shorter, "%lf", &back);
        if (back == v) return std::string(shorter);
    }
    return std::string(buf);
}

// Little-endian binary helpers shared by tensor and checkpoint serialization.
inline void write_u64_le(std::ostream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; i++) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t read_u64_le(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw data_error("truncated stream while reading u64");
    uint64_t v = 0;
    for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_f64_le(std::ostream& out, double d) {
    uint64_t v;
    static_assert(sizeof(v) == sizeof(d));
    __builtin_memcpy(&v, &d, 8);
    write_u64_le(out, v);
}

inline double read_f64_le(std::istream& in) {
    uint64_t v = read_u64_le(in);
    double d;
    __builtin_memcpy(&d, &v, 8);
    return d;
}

inline std::string iso_timestamp_utc() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return std::string(buf);
}

// Run manifest: flat key=value text, one file per CLI run.
inline void write_manifest(const std::string& path,
                           const std::vector<std::pair<std::string, std::string>>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write manifest: " + path);
    out << "# ocrmt run manifest\n";
    for (const auto& [k, v] : entries) out << k << "=" << v << "\n";
    if (!out) throw data_error("failed writing manifest: " + path);
}

}  // namespace ocrmt
