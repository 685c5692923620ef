#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <type_traits>

#include <zlib.h>

#include "occdepth/error.hpp"
#include "occdepth/tensor.hpp"

// Binary tensor container (.odt), all integers little-endian:
//
//   0   char[4]   magic "ODTN"
//   4   u32       container version (1)
//   8   u32       dtype code: 1 = u8, 2 = i32, 3 = f32, 4 = f64
//   12  u32       rank R
//   16  u64[R]    dims, outermost first
//   ..  payload   prod(dims) elements, row-major, little-endian
//   ..  u32       CRC-32 (zlib polynomial) of every preceding byte

namespace occdepth::io {

inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr char kTensorMagic[4] = {'O', 'D', 'T', 'N'};

template <typename T>
constexpr std::uint32_t dtype_code() {
    if constexpr (std::is_same_v<T, std::uint8_t>) return 1;
    else if constexpr (std::is_same_v<T, std::int32_t>) return 2;
    else if constexpr (std::is_same_v<T, float>) return 3;
    else if constexpr (std::is_same_v<T, double>) return 4;
    else static_assert(sizeof(T) == 0, "unsupported tensor dtype");
}

inline std::uint32_t crc32_of(std::string_view bytes) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

template <typename T>
void put_le(std::string& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    out.append(raw, sizeof(T));
}

/// Little-endian cursor over a byte buffer; throws DataError on overrun.
class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        char raw[sizeof(T)];
        std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
        pos_ += sizeof(T);
        T value;
        std::memcpy(&value, raw, sizeof(T));
        return value;
    }

    std::string_view take(std::size_t n) {
        need(n);
        auto out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    [[nodiscard]] std::size_t position() const noexcept { return pos_; }
    [[nodiscard]] std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw DataError("truncated binary data");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

/// Verifies and strips the trailing CRC-32 of a buffer.
inline std::string_view checked_body(std::string_view bytes, const std::string& what) {
    if (bytes.size() < 4) throw DataError(what + ": file too short");
    const std::string_view body = bytes.substr(0, bytes.size() - 4);
    Reader tail(bytes.substr(bytes.size() - 4));
    if (tail.get<std::uint32_t>() != crc32_of(body)) throw DataError(what + ": checksum mismatch");
    return body;
}

template <typename T>
std::string encode_tensor(const Tensor<T>& tensor) {
    std::string out(kTensorMagic, 4);
    put_le(out, kTensorVersion);
    put_le(out, dtype_code<T>());
    put_le(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put_le(out, static_cast<std::uint64_t>(d));
    if constexpr (std::endian::native == std::endian::little) {
        out.append(reinterpret_cast<const char*>(tensor.data()), tensor.size() * sizeof(T));
    } else {
        for (const T& v : tensor.values()) put_le(out, v);
    }
    put_le(out, crc32_of(out));
    return out;
}

template <typename T>
Tensor<T> decode_tensor(std::string_view bytes, const std::string& what = "tensor") {
    Reader r(checked_body(bytes, what));
    if (r.take(4) != std::string_view(kTensorMagic, 4)) throw DataError(what + ": bad magic bytes");
    if (const auto version = r.get<std::uint32_t>(); version != kTensorVersion)
        throw DataError(what + ": unsupported container version " + std::to_string(version));
    if (r.get<std::uint32_t>() != dtype_code<T>()) throw DataError(what + ": unexpected dtype");
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw DataError(what + ": implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    const std::size_t n = shape_numel(shape);
    if (r.remaining() != n * sizeof(T)) throw DataError(what + ": payload size does not match shape");
    std::vector<T> values(n);
    for (auto& v : values) v = r.get<T>();
    return Tensor<T>(std::move(shape), std::move(values));
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

template <typename T>
void write_tensor_file(const std::filesystem::path& path, const Tensor<T>& tensor) {
    write_file_atomic(path, encode_tensor(tensor));
}

template <typename T>
Tensor<T> read_tensor_file(const std::filesystem::path& path) {
    return decode_tensor<T>(read_file(path), path.filename().string());
}

}  // namespace occdepth::io
