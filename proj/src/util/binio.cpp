// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include "dualpeft/binio.hpp"

#include <fstream>
#include <iterator>

namespace dualpeft::io {

void BinaryWriter::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

BinaryReader BinaryReader::open(const std::filesystem::path& path, std::string what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + what + " file " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return BinaryReader(std::move(bytes), std::move(what));
}

void BinaryReader::need(std::size_t n) const {
    if (pos_ + n > buf_.size()) {
        throw FormatError(what_ + " file truncated: expected at least " + std::to_string(pos_ + n) +
                          " bytes, actual length " + std::to_string(buf_.size()));
    }
}

void BinaryReader::expect_magic(const Magic& m) {
    need(m.size());
    if (std::memcmp(buf_.data() + pos_, m.data(), m.size()) != 0) {
        throw FormatError(what_ + " file has a bad magic number");
    }
    pos_ += m.size();
}

std::vector<double> BinaryReader::f64s(std::size_t n) {
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
}

std::vector<std::uint64_t> BinaryReader::u64s(std::size_t n) {
    need(n * sizeof(std::uint64_t));
    std::vector<std::uint64_t> v(n);
    std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(std::uint64_t));
    pos_ += n * sizeof(std::uint64_t);
    return v;
}

void BinaryReader::expect_end() const {
    if (pos_ != buf_.size()) {
        throw FormatError(what_ + " file has " + std::to_string(buf_.size() - pos_) +
                          " trailing bytes: expected length " + std::to_string(pos_) + ", actual length " +
                          std::to_string(buf_.size()));
    }
}

}  // namespace dualpeft::io
