#pragma once

#include "ppc/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ppc {

/// One named array as stored in a checkpoint.
struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> data;

    bool operator==(const NamedArray&) const = default;
};

/// Parameter checkpoint, little-endian:
///   "PPC1", u32 count, then per entry: u16 name length, UTF-8 name,
///   u8 rank, u32 dims[rank], float32 data row-major.
std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray>& arrays);
std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);

/// Little-endian byte helpers shared by the binary codecs.
namespace bytes {

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v);
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v);
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& data) : data_(data) {}
    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    float f32();
    std::string str(std::size_t n);
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const;
    const std::vector<std::uint8_t>& data_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& data);

}  // namespace bytes

}  // namespace ppc
