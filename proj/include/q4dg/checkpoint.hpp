#pragma once

// "Q4DG" tensor container: magic, u32 format version, then a count-prefixed
// list of named f64 tensors. All integers and floats little-endian.
// Layout per record: u32 name length, name bytes, u32 ndim, ndim x u64 dims,
// prod(dims) x f64 data. Round-trips bit-exactly.

#include "q4dg/params.hpp"
#include "q4dg/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace q4dg {

inline constexpr char kContainerMagic[4] = {'Q', '4', 'D', 'G'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct NamedTensor {
    Shape shape;
    std::vector<double> data;
};

namespace io_detail {

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    // build is little-endian only (x86/arm64); byte order asserted by tests
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("corrupt container: truncated read");
    return v;
}

}  // namespace io_detail

inline void write_container(const std::string& path,
                            const std::map<std::string, NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(kContainerMagic, 4);
    io_detail::write_le<std::uint32_t>(os, kContainerVersion);
    io_detail::write_le<std::uint64_t>(os, tensors.size());
    for (const auto& [name, t] : tensors) {
        io_detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        io_detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) io_detail::write_le<std::uint64_t>(os, d);
        if (shape_numel(t.shape) != t.data.size())
            throw std::logic_error("container write: shape/data mismatch for " + name);
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::map<std::string, NamedTensor> read_container(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kContainerMagic, 4) != 0)
        throw std::runtime_error("corrupt container: bad magic in " + path);
    const auto version = io_detail::read_le<std::uint32_t>(is);
    if (version != kContainerVersion)
        throw std::runtime_error("unsupported container version " + std::to_string(version) +
                                 " in " + path);
    const auto count = io_detail::read_le<std::uint64_t>(is);
    std::map<std::string, NamedTensor> out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = io_detail::read_le<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw std::runtime_error("corrupt container: truncated name");
        const auto ndim = io_detail::read_le<std::uint32_t>(is);
        Shape shape(ndim);
        for (auto& d : shape) d = io_detail::read_le<std::uint64_t>(is);
        NamedTensor t;
        t.shape = std::move(shape);
        t.data.resize(shape_numel(t.shape));
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!is) throw std::runtime_error("corrupt container: truncated tensor data for " + name);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

inline void save_params(const std::string& path, const ParamStore& params) {
    std::map<std::string, NamedTensor> tensors;
    for (const auto& [name, t] : params.all())
        tensors.emplace(name, NamedTensor{t.shape(), t.value()});
    write_container(path, tensors);
}

// Loads values into an already-constructed ParamStore; shapes must match.
inline void load_params(const std::string& path, ParamStore& params) {
    auto tensors = read_container(path);
    for (const auto& [name, t] : params.all()) {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw std::runtime_error("checkpoint missing parameter: " + name);
        if (it->second.shape != t.shape())
            throw std::runtime_error("checkpoint shape mismatch for " + name);
        Tensor mut = t;
        mut.mutable_value() = it->second.data;
    }
}

}  // namespace q4dg
