// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

// Little-endian binary readers and writers shared by the checkpoint,
// importance and partition formats.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dualpeft::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Magic = std::array<char, 8>;

class BinaryWriter {
public:
    void magic(const Magic& m) { raw(m.data(), m.size()); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void f64s(std::span<const double> v) { raw(v.data(), v.size() * sizeof(double)); }
    void u64s(std::span<const std::uint64_t> v) { raw(v.data(), v.size() * sizeof(std::uint64_t)); }

    const std::vector<char>& bytes() const { return buf_; }
    // Writes the buffer to `path` (whole file).
    void save(const std::filesystem::path& path) const;

private:
    void raw(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    std::vector<char> buf_;
};

class BinaryReader {
public:
    BinaryReader(std::vector<char> bytes, std::string what) : buf_(std::move(bytes)), what_(std::move(what)) {}
    static BinaryReader open(const std::filesystem::path& path, std::string what);

    void expect_magic(const Magic& m);
    std::uint32_t u32() { return pod<std::uint32_t>(); }
    std::uint64_t u64() { return pod<std::uint64_t>(); }
    double f64() { return pod<double>(); }
    std::vector<double> f64s(std::size_t n);
    std::vector<std::uint64_t> u64s(std::size_t n);

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }
    void expect_end() const;
    const std::string& what() const { return what_; }

private:
    void need(std::size_t n) const;
    template <class T>
    T pod() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::vector<char> buf_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace dualpeft::io
