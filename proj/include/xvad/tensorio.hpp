// tensorio.hpp - Portable on-disk tensor container and dataset manifests.
//
// File layout (little-endian, bit-exact across implementations):
//   magic   4 bytes  "ACTF"
//   version u8       1
//   dtype   u8       0=uint8, 1=float32, 2=float64
//   ndim    u8
//   dims    ndim x u32
//   payload row-major raw values
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xvad/tensor.hpp"

namespace xvad {

enum class Dtype : uint8_t { u8 = 0, f32 = 1, f64 = 2 };

inline size_t dtype_size(Dtype d) {
    switch (d) {
        case Dtype::u8: return 1;
        case Dtype::f32: return 4;
        case Dtype::f64: return 8;
    }
    return 0;
}

// Tagged union carrying exactly one payload vector (selected by dtype).
struct AnyTensor {
    Dtype dtype = Dtype::f64;
    std::vector<uint32_t> dims;
    std::vector<uint8_t> u8;
    std::vector<float> f32;
    std::vector<double> f64;

    uint64_t numel() const {
        uint64_t n = 1;
        for (uint32_t d : dims) n *= d;
        return n;
    }
};

struct TensorInfo {
    Dtype dtype;
    std::vector<uint32_t> dims;
};

void write_tensor(const std::filesystem::path& path, const AnyTensor& t);
AnyTensor read_tensor(const std::filesystem::path& path);
// Header-only peek; used for eager manifest validation without paying for
// the payload.
TensorInfo read_tensor_info(const std::filesystem::path& path);

// Convenience adapters for the in-memory tensor types.
void write_tensor_u8(const std::filesystem::path& path, const TensorU8& t);
TensorU8 read_tensor_u8(const std::filesystem::path& path);
void write_tensor_real(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor_real(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Dataset manifests
// ---------------------------------------------------------------------------

enum class DomainTag { source, target_normal, target_abnormal };

const char* domain_tag_name(DomainTag t);
DomainTag domain_tag_from_name(const std::string& s);

struct ManifestEntry {
    std::string video_path;   // as written in the JSON (relative to manifest dir)
    std::string resolved_path;  // absolute, filled by load_manifest
    int64_t label = 0;
    std::string anomaly_type;  // empty for source / normal entries
    int64_t n_frames = 0;
};

struct DatasetManifest {
    DomainTag domain_tag = DomainTag::source;
    std::vector<ManifestEntry> entries;
    uint64_t seed = 0;
    nlohmann::json generator_config = nlohmann::json::object();
};

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);

// Parses and validates eagerly: field presence and types, per-domain label
// and anomaly_type consistency, and that every video_path resolves to a
// 4-D [T,H,W,C] tensor file with T == n_frames.
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace xvad
