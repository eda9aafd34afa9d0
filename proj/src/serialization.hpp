#pragma once

// Internal helpers shared by the binary container formats and JSON sidecars.

#include "dibrqa/error.hpp"

#include "json.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace dibrqa::io {

static_assert(std::endian::native == std::endian::little, "container formats assume a little-endian host");

using json = nlohmann::ordered_json;

inline void write_bytes(std::ostream& out, const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out)
        throw Error(Errc::FormatError, "write failed");
}

template <typename T>
void write_pod(std::ostream& out, T value) {
    write_bytes(out, &value, sizeof(T));
}

inline void read_bytes(std::istream& in, void* data, std::size_t n) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
        throw Error(Errc::FormatError, "unexpected end of file");
}

template <typename T>
T read_pod(std::istream& in) {
    T value{};
    read_bytes(in, &value, sizeof(T));
    return value;
}

inline void write_floats(std::ostream& out, std::span<const float> values) {
    write_bytes(out, values.data(), values.size_bytes());
}

inline std::vector<float> read_floats(std::istream& in, std::size_t count) {
    std::vector<float> values(count);
    read_bytes(in, values.data(), count * sizeof(float));
    return values;
}

inline void write_magic(std::ostream& out, const char (&magic)[9]) { write_bytes(out, magic, 8); }

inline void expect_magic(std::istream& in, const char (&magic)[9], const std::string& what) {
    char buf[8];
    read_bytes(in, buf, 8);
    if (std::memcmp(buf, magic, 8) != 0)
        throw Error(Errc::FormatError, "not a " + what + " file");
}

/// u64 length prefix followed by UTF-8 JSON text.
inline void write_json_block(std::ostream& out, const json& j) {
    const std::string text = j.dump();
    write_pod<std::uint64_t>(out, text.size());
    write_bytes(out, text.data(), text.size());
}

inline json read_json_block(std::istream& in) {
    const auto n = read_pod<std::uint64_t>(in);
    if (n > (std::uint64_t{1} << 32))
        throw Error(Errc::FormatError, "implausible header length");
    std::string text(n, '\0');
    read_bytes(in, text.data(), n);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Error(Errc::FormatError, std::string("bad JSON header: ") + e.what());
    }
}

} // namespace dibrqa::io
