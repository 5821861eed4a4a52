#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lessnet/tensor.hpp"

// LTF1 tensor record (little endian):
//   "LTF1" | u8 dtype (1 = float32) | u8 rank | u16 reserved = 0 | rank x u32 extents | float32 payload
// LTC1 container:
//   "LTC1" | u32 entry count | per entry: u16 name length, UTF-8 name, LTF1 record

namespace lessnet::io {

class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " at byte " + std::to_string(offset)), reason_(what), offset_(offset)
    {
    }
    std::size_t offset() const noexcept { return offset_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::string reason_;
    std::size_t offset_;
};

using Bytes = std::vector<std::uint8_t>;

namespace detail {

inline void put_u16(Bytes& b, std::uint16_t v)
{
    b.push_back(static_cast<std::uint8_t>(v));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(Bytes& b, std::uint32_t v)
{
    for (int s = 0; s < 32; s += 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

class Reader {
public:
    explicit Reader(const Bytes& bytes, std::size_t pos = 0) : bytes_(bytes), pos_(pos) {}

    std::size_t pos() const { return pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }

    void need(std::size_t n, const char* what) const
    {
        if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated ") + what, pos_);
    }
    std::uint8_t u8(const char* what)
    {
        need(1, what);
        return bytes_[pos_++];
    }
    std::uint16_t u16(const char* what)
    {
        need(2, what);
        const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32(const char* what)
    {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::string text(std::size_t n, const char* what)
    {
        need(n, what);
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }

private:
    const Bytes& bytes_;
    std::size_t pos_;
};

} // namespace detail

inline void append_tensor(Bytes& out, const Tensor<float>& t)
{
    out.insert(out.end(), {'L', 'T', 'F', '1'});
    out.push_back(1);
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    detail::put_u16(out, 0);
    for (std::size_t e : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : t) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline Bytes encode_tensor(const Tensor<float>& t)
{
    Bytes b;
    append_tensor(b, t);
    return b;
}

inline Tensor<float> read_tensor_record(detail::Reader& r)
{
    const std::size_t start = r.pos();
    if (r.text(4, "magic") != "LTF1") throw FormatError("bad LTF magic", start);
    const std::size_t dtype_at = r.pos();
    if (r.u8("dtype") != 1) throw FormatError("unsupported LTF dtype (expected 1 = float32)", dtype_at);
    const std::size_t rank = r.u8("rank");
    const std::size_t reserved_at = r.pos();
    if (r.u16("reserved") != 0) throw FormatError("reserved LTF bytes must be zero", reserved_at);
    if (rank == 0) throw FormatError("LTF rank must be positive", start + 5);
    Shape shape(rank);
    for (auto& e : shape) {
        const std::size_t at = r.pos();
        e = r.u32("extent");
        if (e == 0) throw FormatError("LTF extent must be positive", at);
    }
    const std::size_t n = shape_volume(shape);
    r.need(n * 4, "payload");
    std::vector<float> data(n);
    for (auto& v : data) v = std::bit_cast<float>(r.u32("payload"));
    return Tensor<float>(std::move(shape), std::move(data));
}

inline Tensor<float> decode_tensor(const Bytes& bytes)
{
    detail::Reader r(bytes);
    Tensor<float> t = read_tensor_record(r);
    if (!r.at_end()) throw FormatError("trailing bytes after LTF record", r.pos());
    return t;
}

using Entries = std::vector<std::pair<std::string, Tensor<float>>>;

inline Bytes encode_container(const Entries& entries)
{
    Bytes b{'L', 'T', 'C', '1'};
    detail::put_u32(b, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        if (name.size() > 0xFFFF) throw std::invalid_argument("entry name too long: " + name);
        detail::put_u16(b, static_cast<std::uint16_t>(name.size()));
        b.insert(b.end(), name.begin(), name.end());
        append_tensor(b, t);
    }
    return b;
}

inline Entries decode_container(const Bytes& bytes)
{
    detail::Reader r(bytes);
    if (r.text(4, "magic") != "LTC1") throw FormatError("bad LTC magic", 0);
    const std::uint32_t count = r.u32("entry count");
    Entries out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t len = r.u16("name length");
        std::string name = r.text(len, "entry name");
        out.emplace_back(std::move(name), read_tensor_record(r));
    }
    if (!r.at_end()) throw FormatError("trailing bytes after LTC container", r.pos());
    return out;
}

inline Bytes read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const Bytes& bytes)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline void write_tensor(const std::filesystem::path& path, const Tensor<float>& t) { write_file(path, encode_tensor(t)); }

inline Tensor<float> read_tensor(const std::filesystem::path& path)
{
    try {
        return decode_tensor(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.reason(), e.offset());
    }
}

inline void write_container(const std::filesystem::path& path, const Entries& entries)
{
    write_file(path, encode_container(entries));
}

inline Entries read_container(const std::filesystem::path& path)
{
    try {
        return decode_container(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.reason(), e.offset());
    }
}

} // namespace lessnet::io
