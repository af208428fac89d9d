#include "terse/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace terse {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace {

constexpr char kMagic[9] = {'T', 'E', 'R', 'S', 'E', 'c', 'k', 'p', 't'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& is, const std::string& path, const char* what) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4))
        throw std::runtime_error(path + ": truncated while reading " + std::string(what));
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, NetKind kind,
                     const std::vector<NamedTensor<float>>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_u32(os, kVersion);
    const std::uint8_t k = static_cast<std::uint8_t>(kind);
    os.write(reinterpret_cast<const char*>(&k), 1);
    write_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& nt : tensors) {
        write_u32(os, static_cast<std::uint32_t>(nt.name.size()));
        os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
        write_u32(os, static_cast<std::uint32_t>(nt.tensor->ndim()));
        for (int d = 0; d < nt.tensor->ndim(); ++d)
            write_u32(os, static_cast<std::uint32_t>(nt.tensor->dim(d)));
        os.write(reinterpret_cast<const char*>(nt.tensor->ptr()),
                 static_cast<std::streamsize>(nt.tensor->size() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("write failure on checkpoint: " + path);
}

namespace {

struct Header {
    NetKind kind;
    std::uint32_t count;
};

Header read_header(std::istream& is, const std::string& path) {
    char magic[sizeof(kMagic)];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error(path + ": not a TERSEckpt file");
    const std::uint32_t version = read_u32(is, path, "version");
    if (version != kVersion)
        throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
    std::uint8_t kind = 0;
    if (!is.read(reinterpret_cast<char*>(&kind), 1))
        throw std::runtime_error(path + ": truncated while reading net kind");
    if (kind > 2) throw std::runtime_error(path + ": unknown net kind " + std::to_string(kind));
    return {static_cast<NetKind>(kind), read_u32(is, path, "entry count")};
}

}  // namespace

NetKind peek_checkpoint_kind(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    return read_header(is, path).kind;
}

void load_checkpoint(const std::string& path, NetKind expected_kind,
                     const std::vector<NamedTensor<float>>& tensors) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    const Header h = read_header(is, path);
    if (h.kind != expected_kind)
        throw std::runtime_error(path + ": checkpoint holds net kind " +
                                 std::to_string(static_cast<int>(h.kind)) + ", expected " +
                                 std::to_string(static_cast<int>(expected_kind)));
    std::map<std::string, NamedTensor<float>> by_name;
    for (const auto& nt : tensors) by_name.emplace(nt.name, nt);
    std::size_t loaded = 0;
    for (std::uint32_t e = 0; e < h.count; ++e) {
        const std::uint32_t name_len = read_u32(is, path, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len))
            throw std::runtime_error(path + ": truncated while reading entry name");
        const std::uint32_t ndim = read_u32(is, path, "dim count");
        std::vector<int> shape(ndim);
        for (std::uint32_t d = 0; d < ndim; ++d)
            shape[d] = static_cast<int>(read_u32(is, path, "extent"));
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error(path + ": unexpected entry '" + name + "'");
        Tensor<float>* dst = it->second.tensor;
        if (dst->shape != shape)
            throw std::runtime_error(path + ": entry '" + name + "' has shape " +
                                     Tensor<float>::shape_str(shape) + ", expected " +
                                     dst->shape_str());
        if (!is.read(reinterpret_cast<char*>(dst->ptr()),
                     static_cast<std::streamsize>(dst->size() * sizeof(float))))
            throw std::runtime_error(path + ": truncated payload for entry '" + name + "'");
        by_name.erase(it);
        ++loaded;
    }
    if (!by_name.empty())
        throw std::runtime_error(path + ": missing entry '" + by_name.begin()->first + "' (" +
                                 std::to_string(loaded) + " of " +
                                 std::to_string(tensors.size()) + " loaded)");
}

}  // namespace terse
