// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

// VDT1 tensor container. Layout, all integers unsigned 32-bit little-endian:
//   "VDT1" | count | count x entry
//   entry = name_len | name (UTF-8) | ndim | dims[ndim] | data (f32 LE, row-major)

#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "derain/tensor.hpp"

namespace derain {

struct TensorEntry {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::uint32_t d : dims) {
            n *= d;
        }
        return n;
    }
    bool operator==(const TensorEntry&) const = default;
};

class ContainerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr char kContainerMagic[4] = {'V', 'D', 'T', '1'};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw ContainerError(std::string("truncated container while reading ") + what);
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > std::numeric_limits<std::uint32_t>::max()) {
        throw ContainerError(std::string(what) + " does not fit in 32 bits");
    }
    return static_cast<std::uint32_t>(v);
}

}  // namespace detail

inline void write_container(std::ostream& out, const std::vector<TensorEntry>& entries) {
    std::set<std::string> names;
    for (const TensorEntry& e : entries) {
        if (!names.insert(e.name).second) {
            throw ContainerError("duplicate tensor name '" + e.name + "'");
        }
        if (e.numel() != e.data.size()) {
            throw ContainerError("tensor '" + e.name + "' has " + std::to_string(e.data.size()) +
                                 " values for its dims");
        }
    }
    out.write(kContainerMagic, 4);
    detail::put_u32(out, detail::checked_u32(entries.size(), "entry count"));
    for (const TensorEntry& e : entries) {
        detail::put_u32(out, detail::checked_u32(e.name.size(), "name length"));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::put_u32(out, detail::checked_u32(e.dims.size(), "ndim"));
        for (std::uint32_t d : e.dims) {
            detail::put_u32(out, d);
        }
        for (float v : e.data) {
            detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
        }
    }
    if (!out) {
        throw ContainerError("write failed");
    }
}

inline std::vector<TensorEntry> read_container(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kContainerMagic, 4) != 0) {
        throw ContainerError("not a VDT1 container");
    }
    const std::uint32_t count = detail::get_u32(in, "entry count");
    std::vector<TensorEntry> entries;
    std::set<std::string> names;
    for (std::uint32_t i = 0; i < count; ++i) {
        TensorEntry e;
        const std::uint32_t len = detail::get_u32(in, "name length");
        e.name.resize(len);
        if (len && !in.read(e.name.data(), len)) {
            throw ContainerError("truncated container while reading a name");
        }
        if (!names.insert(e.name).second) {
            throw ContainerError("duplicate tensor name '" + e.name + "'");
        }
        const std::uint32_t ndim = detail::get_u32(in, "ndim");
        if (ndim > 16) {
            throw ContainerError("tensor '" + e.name + "' has implausible rank " + std::to_string(ndim));
        }
        e.dims.resize(ndim);
        for (auto& d : e.dims) {
            d = detail::get_u32(in, "dims");
        }
        const std::size_t n = e.numel();
        if (n > (std::size_t{1} << 31)) {
            throw ContainerError("tensor '" + e.name + "' is implausibly large");
        }
        e.data.resize(n);
        for (auto& v : e.data) {
            v = std::bit_cast<float>(detail::get_u32(in, "data"));
        }
        entries.push_back(std::move(e));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw ContainerError("trailing bytes after the last entry");
    }
    return entries;
}

inline void write_container_file(const std::string& path, const std::vector<TensorEntry>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ContainerError("cannot open '" + path + "' for writing");
    }
    write_container(out, entries);
}

inline std::vector<TensorEntry> read_container_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ContainerError("cannot open '" + path + "'");
    }
    return read_container(in);
}

inline const TensorEntry& find_entry(const std::vector<TensorEntry>& entries, const std::string& name) {
    for (const TensorEntry& e : entries) {
        if (e.name == name) {
            return e;
        }
    }
    throw ContainerError("container has no tensor '" + name + "'");
}

template <class T>
TensorEntry video_entry(const std::string& name, const Video<T>& v) {
    TensorEntry e;
    e.name = name;
    e.dims = {detail::checked_u32(v.shape.frames, "dim"), detail::checked_u32(v.shape.channels, "dim"),
              detail::checked_u32(v.shape.height, "dim"), detail::checked_u32(v.shape.width, "dim")};
    e.data.reserve(v.size());
    for (T x : v.data) {
        e.data.push_back(static_cast<float>(x));
    }
    return e;
}

template <class T>
Video<T> entry_video(const TensorEntry& e) {
    if (e.dims.size() != 4) {
        throw ContainerError("tensor '" + e.name + "' is not a 4-d video");
    }
    Video<T> v({e.dims[0], e.dims[1], e.dims[2], e.dims[3]});
    for (std::size_t i = 0; i < v.size(); ++i) {
        v.data[i] = static_cast<T>(e.data[i]);
    }
    return v;
}

template <class T>
TensorEntry matrix_entry(const std::string& name, const Matrix<T>& m) {
    TensorEntry e;
    e.name = name;
    e.dims = {detail::checked_u32(m.rows, "dim"), detail::checked_u32(m.cols, "dim")};
    e.data.reserve(m.size());
    for (T x : m.data) {
        e.data.push_back(static_cast<float>(x));
    }
    return e;
}

}  // namespace derain
