#pragma once

#include <bit>
#include <cstdint>
#include <string>

namespace rwf {

// Little-endian primitives shared by the dataset and checkpoint containers.
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    put_u32(out, static_cast<std::uint32_t>(v & 0xFFFFFFFFu));
    put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f32(std::string& out, float f) {
    put_u32(out, std::bit_cast<std::uint32_t>(f));
}

// Bounds-checked cursor; `Error` is thrown on truncation with `context`
// naming the container.
template <typename Error>
class ByteReader {
public:
    ByteReader(const std::string& bytes, const char* context) : bytes_(bytes), context_(context) {}

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        const std::uint64_t lo = u32(what);
        return lo | (static_cast<std::uint64_t>(u32(what)) << 32);
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    void skip(std::size_t n) { need(n, "padding"); pos_ += n; }

private:
    void need(std::size_t n, const char* what) const {
        if (n > bytes_.size() - pos_) throw Error(std::string("truncated ") + context_ + " while reading " + what);
    }

    const std::string& bytes_;
    const char* context_;
    std::size_t pos_ = 0;
};

}  // namespace rwf
