#pragma once

// Little-endian byte writer/reader shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "steerkit/errors.hpp"

namespace steerkit::detail {

class ByteWriter {
public:
    void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    std::vector<std::uint8_t> take() { return std::move(out_); }
    const std::vector<std::uint8_t>& data() const { return out_; }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    // `file_kind` names the format in truncation errors.
    ByteReader(std::span<const std::uint8_t> data, std::string file_kind)
        : data_(data), kind_(std::move(file_kind)) {}

    std::string_view bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string_view s{reinterpret_cast<const char*>(data_.data() + pos_), n};
        pos_ += n;
        return s;
    }
    std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(le(1, what)); }
    std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(le(2, what)); }
    std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
    std::uint64_t u64(const char* what) { return le(8, what); }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n, const char* what) {
        if (data_.size() - pos_ < n) throw FormatError(kind_ + " truncated while reading " + what);
    }
    std::uint64_t le(int n, const char* what) {
        need(static_cast<std::size_t>(n), what);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::span<const std::uint8_t> data_;
    std::string kind_;
    std::size_t pos_ = 0;
};

}  // namespace steerkit::detail
