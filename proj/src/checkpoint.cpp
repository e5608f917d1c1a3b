#include "facetrace/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "facetrace/errors.hpp"

namespace facetrace {

namespace {

constexpr char kMagic[4] = {'F', 'T', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char(v >> 24)};
    os.write(b, 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    put_u32(os, uint32_t(v & 0xffffffffu));
    put_u32(os, uint32_t(v >> 32));
}

uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw DataError("truncated checkpoint: " + path);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

uint64_t get_u64(std::istream& is, const std::string& path) {
    uint64_t lo = get_u32(is, path);
    uint64_t hi = get_u32(is, path);
    return lo | (hi << 32);
}

} // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    if (!path.parent_path().empty())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw DataError("cannot write checkpoint: " + path.string());

    os.write(kMagic, 4);
    put_u32(os, kVersion);
    std::string meta = ck.meta.dump();
    put_u64(os, meta.size());
    os.write(meta.data(), std::streamsize(meta.size()));

    put_u32(os, uint32_t(ck.entries.size()));
    for (const auto& e : ck.entries) {
        put_u32(os, uint32_t(e.name.size()));
        os.write(e.name.data(), std::streamsize(e.name.size()));
        put_u32(os, uint32_t(e.dims.size()));
        int64_t n = 1;
        for (int d : e.dims) {
            put_u32(os, uint32_t(d));
            n *= d;
        }
        if (int64_t(e.data.size()) != n)
            throw DataError("checkpoint entry '" + e.name + "' payload does not match its shape");
        for (float v : e.data)
            put_u32(os, std::bit_cast<uint32_t>(v));
    }
    os.flush();
    if (!os)
        throw DataError("write failed for checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw DataError("cannot open checkpoint: " + path.string());
    std::string p = path.string();

    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("not a checkpoint file: " + p);
    uint32_t version = get_u32(is, p);
    if (version != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + p);

    uint64_t meta_len = get_u64(is, p);
    std::string meta(meta_len, '\0');
    if (!is.read(meta.data(), std::streamsize(meta_len)))
        throw DataError("truncated checkpoint: " + p);

    Checkpoint ck;
    try {
        ck.meta = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint metadata in " + p + ": " + e.what());
    }

    uint32_t n_entries = get_u32(is, p);
    ck.entries.reserve(n_entries);
    for (uint32_t i = 0; i < n_entries; ++i) {
        CheckpointEntry e;
        uint32_t name_len = get_u32(is, p);
        e.name.resize(name_len);
        if (!is.read(e.name.data(), std::streamsize(name_len)))
            throw DataError("truncated checkpoint: " + p);
        uint32_t ndim = get_u32(is, p);
        int64_t n = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            int dim = int(get_u32(is, p));
            if (dim <= 0)
                throw DataError("corrupt checkpoint entry '" + e.name + "' in " + p);
            e.dims.push_back(dim);
            n *= dim;
        }
        e.data.resize(size_t(n));
        for (int64_t j = 0; j < n; ++j)
            e.data[size_t(j)] = std::bit_cast<float>(get_u32(is, p));
        ck.entries.push_back(std::move(e));
    }
    return ck;
}

} // namespace facetrace
