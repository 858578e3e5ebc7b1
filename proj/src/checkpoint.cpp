#include "drophead/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace drophead {

std::string to_string(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

Dtype dtype_from_string(const std::string& s) {
    if (s == "f32") return Dtype::f32;
    if (s == "f64") return Dtype::f64;
    throw std::invalid_argument("unknown dtype: " + s);
}

namespace {

void put_u32le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const unsigned char* p;
    const unsigned char* end;

    void need(std::size_t n, const char* what) {
        if (static_cast<std::size_t>(end - p) < n) {
            throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
        }
    }
    std::uint32_t u32le(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        p += 4;
        return v;
    }
    std::uint64_t u64le(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        p += 8;
        return v;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return *p++;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<TensorRecord>& records) {
    std::string buf;
    buf += "DHCK";
    put_u32le(buf, kCheckpointVersion);
    put_u32le(buf, static_cast<std::uint32_t>(records.size()));
    for (const TensorRecord& r : records) {
        put_u32le(buf, static_cast<std::uint32_t>(r.name.size()));
        buf += r.name;
        buf.push_back(static_cast<char>(r.dtype));
        buf.push_back(static_cast<char>(r.extents.size()));
        for (std::uint64_t e : r.extents) put_u64le(buf, e);
        buf.append(reinterpret_cast<const char*>(r.payload.data()), r.payload.size());
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::vector<TensorRecord> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader rd{reinterpret_cast<const unsigned char*>(buf.data()),
              reinterpret_cast<const unsigned char*>(buf.data()) + buf.size()};
    rd.need(4, "magic");
    if (std::memcmp(rd.p, "DHCK", 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    rd.p += 4;
    const std::uint32_t version = rd.u32le("version");
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = rd.u32le("record count");
    std::vector<TensorRecord> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        TensorRecord r;
        const std::uint32_t name_len = rd.u32le("name length");
        rd.need(name_len, "name");
        r.name.assign(reinterpret_cast<const char*>(rd.p), name_len);
        rd.p += name_len;
        const std::uint8_t dt = rd.u8("dtype");
        if (dt > 1) throw std::runtime_error("checkpoint: bad dtype tag in " + r.name);
        r.dtype = static_cast<Dtype>(dt);
        const std::uint8_t rank = rd.u8("rank");
        for (std::uint8_t k = 0; k < rank; ++k) r.extents.push_back(rd.u64le("extent"));
        const std::size_t bytes = r.numel() * (r.dtype == Dtype::f32 ? 4 : 8);
        rd.need(bytes, "payload");
        r.payload.assign(rd.p, rd.p + bytes);
        rd.p += bytes;
        out.push_back(std::move(r));
    }
    if (rd.p != rd.end) throw std::runtime_error("checkpoint: trailing bytes in " + path);
    return out;
}

}  // namespace drophead
