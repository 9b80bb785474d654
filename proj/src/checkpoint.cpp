#include "ppc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ppc {

namespace bytes {

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v)
{
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

void Reader::need(std::size_t n) const
{
    if (pos_ + n > data_.size()) {
        throw std::runtime_error("truncated binary data at offset " + std::to_string(pos_));
    }
}

std::uint8_t Reader::u8()
{
    need(1);
    return data_[pos_++];
}

std::uint16_t Reader::u16()
{
    need(2);
    const auto v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
}

std::uint32_t Reader::u32()
{
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }

std::string Reader::str(std::size_t n)
{
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& data)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("short write to " + path.string());
}

}  // namespace bytes

namespace {
constexpr char kMagic[4] = {'P', 'P', 'C', '1'};
}

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray>& arrays)
{
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    bytes::put_u32(out, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        require(a.name.size() <= 0xffff, "checkpoint entry name too long");
        require(a.shape.size() <= 0xff, "checkpoint entry rank too large");
        require(shape_numel(a.shape) == a.data.size(), "checkpoint entry '" + a.name + "' has inconsistent shape");
        bytes::put_u16(out, static_cast<std::uint16_t>(a.name.size()));
        out.insert(out.end(), a.name.begin(), a.name.end());
        bytes::put_u8(out, static_cast<std::uint8_t>(a.shape.size()));
        for (auto d : a.shape) bytes::put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : a.data) bytes::put_f32(out, v);
    }
    return out;
}

std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& data)
{
    bytes::Reader in(data);
    if (in.str(4) != std::string(kMagic, 4)) {
        throw std::runtime_error("not a checkpoint (bad magic)");
    }
    const auto count = in.u32();
    std::vector<NamedArray> arrays;
    arrays.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray a;
        a.name = in.str(in.u16());
        const auto rank = in.u8();
        for (std::uint8_t r = 0; r < rank; ++r) a.shape.push_back(in.u32());
        a.data.resize(shape_numel(a.shape));
        for (auto& v : a.data) v = in.f32();
        arrays.push_back(std::move(a));
    }
    if (!in.done()) throw std::runtime_error("trailing bytes after checkpoint entries");
    return arrays;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays)
{
    bytes::write_file(path, encode_checkpoint(arrays));
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path)
{
    return decode_checkpoint(bytes::read_file(path));
}

}  // namespace ppc
