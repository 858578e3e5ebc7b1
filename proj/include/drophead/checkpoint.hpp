#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <type_traits>
#include <vector>

#include "drophead/tensor.hpp"

namespace drophead {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

std::string to_string(Dtype d);
Dtype dtype_from_string(const std::string& s);

template <typename T>
constexpr Dtype dtype_of() {
    if constexpr (std::is_same_v<T, float>) return Dtype::f32;
    else return Dtype::f64;
}

// One named tensor in the on-disk layout: little-endian payload, row-major.
struct TensorRecord {
    std::string name;
    Dtype dtype = Dtype::f32;
    std::vector<std::uint64_t> extents;
    std::vector<unsigned char> payload;

    std::size_t numel() const {
        std::size_t n = 1;
        for (auto e : extents) n *= static_cast<std::size_t>(e);
        return n;
    }
};

// Format: magic "DHCK", u32le version, u32le record count; per record:
// u32le name length, name bytes, u8 dtype (0=f32, 1=f64), u8 rank,
// u64le extents, then the payload values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const std::vector<TensorRecord>& records);
std::vector<TensorRecord> load_checkpoint(const std::string& path);

template <typename T>
TensorRecord to_record(const std::string& name, const Tensor<T>& t) {
    TensorRecord r;
    r.name = name;
    r.dtype = dtype_of<T>();
    for (std::size_t e : t.shape()) r.extents.push_back(static_cast<std::uint64_t>(e));
    r.payload.resize(t.numel() * sizeof(T));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        T v = t.at(i);
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &v, sizeof(T));
        // Native layout is little-endian on every supported target; keep the
        // copy explicit so the format stays defined.
        std::memcpy(r.payload.data() + i * sizeof(T), bytes, sizeof(T));
    }
    return r;
}

template <typename T>
Tensor<T> from_record(const TensorRecord& r) {
    if (r.dtype != dtype_of<T>()) {
        throw std::runtime_error("checkpoint: record '" + r.name + "' has dtype " +
                                 to_string(r.dtype) + ", expected " +
                                 to_string(dtype_of<T>()));
    }
    std::vector<std::size_t> shape;
    for (auto e : r.extents) shape.push_back(static_cast<std::size_t>(e));
    std::vector<T> values(r.numel());
    if (r.payload.size() != values.size() * sizeof(T)) {
        throw std::runtime_error("checkpoint: record '" + r.name + "' payload size mismatch");
    }
    std::memcpy(values.data(), r.payload.data(), r.payload.size());
    return Tensor<T>::from(std::move(shape), std::move(values));
}

}  // namespace drophead
