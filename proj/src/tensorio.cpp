#include "xvad/tensorio.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "xvad/errors.hpp"

namespace fs = std::filesystem;

namespace xvad {

namespace {

constexpr char kMagic[4] = {'A', 'C', 'T', 'F'};
constexpr uint8_t kVersion = 1;

void put_u32_le(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

template <typename T, typename U>
void append_payload_le(std::string& out, const std::vector<T>& values) {
    static_assert(sizeof(T) == sizeof(U));
    const size_t start = out.size();
    out.resize(start + values.size() * sizeof(T));
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out.data() + start, values.data(), values.size() * sizeof(T));
    } else {
        char* p = out.data() + start;
        for (const T& t : values) {
            U bits = std::bit_cast<U>(t);
            for (size_t b = 0; b < sizeof(U); ++b) {
                *p++ = static_cast<char>((bits >> (8 * b)) & 0xff);
            }
        }
    }
}

template <typename T, typename U>
void read_payload_le(const char* p, size_t count, std::vector<T>& out) {
    static_assert(sizeof(T) == sizeof(U));
    out.resize(count);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out.data(), p, count * sizeof(T));
    } else {
        for (size_t i = 0; i < count; ++i) {
            U bits = 0;
            for (size_t b = 0; b < sizeof(U); ++b) {
                bits |= static_cast<U>(static_cast<unsigned char>(p[i * sizeof(U) + b])) << (8 * b);
            }
            out[i] = std::bit_cast<T>(bits);
        }
    }
}

struct Header {
    Dtype dtype;
    std::vector<uint32_t> dims;
    uint64_t payload_bytes;
};

Header read_header(std::ifstream& in, const fs::path& path) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw data_error("tensor file has bad magic: " + path.string());
    }
    uint8_t version = 0, dtype_code = 0, ndim = 0;
    if (!in.read(reinterpret_cast<char*>(&version), 1) ||
        !in.read(reinterpret_cast<char*>(&dtype_code), 1) ||
        !in.read(reinterpret_cast<char*>(&ndim), 1)) {
        throw data_error("tensor file header truncated: " + path.string());
    }
    if (version != kVersion) {
        throw data_error("tensor file version mismatch (got " + std::to_string(version) +
                         ", expected " + std::to_string(kVersion) + "): " + path.string());
    }
    if (dtype_code > 2) {
        throw data_error("tensor file has unsupported dtype code " + std::to_string(dtype_code) +
                         ": " + path.string());
    }
    Header h;
    h.dtype = static_cast<Dtype>(dtype_code);
    h.dims.resize(ndim);
    uint64_t numel = 1;
    for (uint8_t i = 0; i < ndim; ++i) {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4)) {
            throw data_error("tensor file header truncated: " + path.string());
        }
        h.dims[i] = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                    (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
        numel *= h.dims[i];
    }
    h.payload_bytes = numel * dtype_size(h.dtype);
    return h;
}

}  // namespace

void write_tensor(const fs::path& path, const AnyTensor& t) {
    if (t.dims.size() > 255) throw data_error("tensor has too many dimensions");
    for (uint32_t d : t.dims) {
        if (d == 0) throw data_error("tensor dims must all be > 0");
    }
    const uint64_t n = t.numel();
    std::string buf;
    buf.reserve(16 + n * dtype_size(t.dtype));
    buf.append(kMagic, 4);
    buf.push_back(static_cast<char>(kVersion));
    buf.push_back(static_cast<char>(t.dtype));
    buf.push_back(static_cast<char>(t.dims.size()));
    for (uint32_t d : t.dims) put_u32_le(buf, d);
    switch (t.dtype) {
        case Dtype::u8:
            if (t.u8.size() != n) throw data_error("payload size does not match dims");
            buf.append(reinterpret_cast<const char*>(t.u8.data()), t.u8.size());
            break;
        case Dtype::f32:
            if (t.f32.size() != n) throw data_error("payload size does not match dims");
            append_payload_le<float, uint32_t>(buf, t.f32);
            break;
        case Dtype::f64:
            if (t.f64.size() != n) throw data_error("payload size does not match dims");
            append_payload_le<double, uint64_t>(buf, t.f64);
            break;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot open for write: " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw data_error("write failed: " + path.string());
}

AnyTensor read_tensor(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open tensor file: " + path.string());
    const Header h = read_header(in, path);
    std::string payload(h.payload_bytes, '\0');
    in.read(payload.data(), static_cast<std::streamsize>(h.payload_bytes));
    if (static_cast<uint64_t>(in.gcount()) != h.payload_bytes) {
        throw data_error("tensor file payload truncated: " + path.string());
    }
    AnyTensor t;
    t.dtype = h.dtype;
    t.dims = h.dims;
    const uint64_t n = t.numel();
    switch (h.dtype) {
        case Dtype::u8:
            t.u8.assign(payload.begin(), payload.end());
            break;
        case Dtype::f32:
            read_payload_le<float, uint32_t>(payload.data(), n, t.f32);
            break;
        case Dtype::f64:
            read_payload_le<double, uint64_t>(payload.data(), n, t.f64);
            break;
    }
    return t;
}

TensorInfo read_tensor_info(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open tensor file: " + path.string());
    const Header h = read_header(in, path);
    // Cheap truncation check without loading the payload.
    in.seekg(0, std::ios::end);
    const auto end = in.tellg();
    const uint64_t header_bytes = 7 + 4ull * h.dims.size();
    if (end < 0 || static_cast<uint64_t>(end) < header_bytes + h.payload_bytes) {
        throw data_error("tensor file payload truncated: " + path.string());
    }
    return {h.dtype, h.dims};
}

void write_tensor_u8(const fs::path& path, const TensorU8& t) {
    AnyTensor a;
    a.dtype = Dtype::u8;
    a.dims.assign(t.shape.begin(), t.shape.end());
    a.u8 = t.v;
    write_tensor(path, a);
}

TensorU8 read_tensor_u8(const fs::path& path) {
    AnyTensor a = read_tensor(path);
    if (a.dtype != Dtype::u8) throw data_error("expected uint8 tensor: " + path.string());
    TensorU8 t;
    t.shape.assign(a.dims.begin(), a.dims.end());
    t.v = std::move(a.u8);
    return t;
}

void write_tensor_real(const fs::path& path, const Tensor& t) {
    AnyTensor a;
    a.dims.assign(t.shape.begin(), t.shape.end());
#ifdef XVAD_REAL_FLOAT
    a.dtype = Dtype::f32;
    a.f32.assign(t.v.begin(), t.v.end());
#else
    a.dtype = Dtype::f64;
    a.f64 = t.v;
#endif
    write_tensor(path, a);
}

Tensor read_tensor_real(const fs::path& path) {
    AnyTensor a = read_tensor(path);
    Tensor t;
    t.shape.assign(a.dims.begin(), a.dims.end());
    switch (a.dtype) {
        case Dtype::f32:
            t.v.assign(a.f32.begin(), a.f32.end());
            break;
        case Dtype::f64:
            t.v.assign(a.f64.begin(), a.f64.end());
            break;
        default:
            throw data_error("expected float tensor: " + path.string());
    }
    return t;
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

const char* domain_tag_name(DomainTag t) {
    switch (t) {
        case DomainTag::source: return "source";
        case DomainTag::target_normal: return "target_normal";
        case DomainTag::target_abnormal: return "target_abnormal";
    }
    return "?";
}

DomainTag domain_tag_from_name(const std::string& s) {
    if (s == "source") return DomainTag::source;
    if (s == "target_normal") return DomainTag::target_normal;
    if (s == "target_abnormal") return DomainTag::target_abnormal;
    throw data_error("unknown domain_tag: " + s);
}

void save_manifest(const fs::path& path, const DatasetManifest& m) {
    nlohmann::json j;
    j["domain_tag"] = domain_tag_name(m.domain_tag);
    j["seed"] = m.seed;
    j["generator_config"] = m.generator_config;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : m.entries) {
        entries.push_back({{"video_path", e.video_path},
                           {"label", e.label},
                           {"anomaly_type", e.anomaly_type},
                           {"n_frames", e.n_frames}});
    }
    j["entries"] = std::move(entries);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw data_error("cannot open manifest for write: " + path.string());
    out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open manifest: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("manifest is not valid JSON: " + path.string() + ": " + e.what());
    }

    auto require = [&](const char* field) -> const nlohmann::json& {
        if (!j.contains(field)) {
            throw data_error(std::string("manifest missing field '") + field + "': " + path.string());
        }
        return j.at(field);
    };

    DatasetManifest m;
    const auto& tag_field = require("domain_tag");
    if (!tag_field.is_string()) throw data_error("manifest domain_tag must be a string");
    m.domain_tag = domain_tag_from_name(tag_field.get<std::string>());
    const auto& seed_field = require("seed");
    if (!seed_field.is_number()) throw data_error("manifest seed must be a number");
    m.seed = seed_field.get<uint64_t>();
    m.generator_config = require("generator_config");
    if (!m.generator_config.is_object()) {
        throw data_error("manifest generator_config must be an object");
    }

    const auto& entries = require("entries");
    if (!entries.is_array()) throw data_error("manifest entries must be an array");
    const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");

    for (const auto& je : entries) {
        ManifestEntry e;
        for (const char* field : {"video_path", "label", "anomaly_type", "n_frames"}) {
            if (!je.contains(field)) {
                throw data_error(std::string("manifest entry missing field '") + field + "'");
            }
        }
        if (!je.at("video_path").is_string() || !je.at("anomaly_type").is_string() ||
            !je.at("label").is_number_integer() || !je.at("n_frames").is_number_integer()) {
            throw data_error("manifest entry has a field of the wrong type");
        }
        e.video_path = je.at("video_path").get<std::string>();
        e.label = je.at("label").get<int64_t>();
        e.anomaly_type = je.at("anomaly_type").get<std::string>();
        e.n_frames = je.at("n_frames").get<int64_t>();

        switch (m.domain_tag) {
            case DomainTag::source:
                if (e.label < 0) throw data_error("source entry with negative label");
                if (!e.anomaly_type.empty()) {
                    throw data_error("source entry must have empty anomaly_type");
                }
                break;
            case DomainTag::target_normal:
                if (e.label != 0) {
                    throw data_error("target_normal entry must have label 0: " + e.video_path);
                }
                if (!e.anomaly_type.empty()) {
                    throw data_error("target_normal entry must have empty anomaly_type");
                }
                break;
            case DomainTag::target_abnormal:
                if (e.label != 1) {
                    throw data_error("target_abnormal entry must have label 1: " + e.video_path);
                }
                if (e.anomaly_type.empty()) {
                    throw data_error("target_abnormal entry must have nonempty anomaly_type");
                }
                break;
        }

        const fs::path vp = fs::path(e.video_path).is_absolute() ? fs::path(e.video_path)
                                                                 : base / e.video_path;
        e.resolved_path = vp.string();
        TensorInfo info;
        try {
            info = read_tensor_info(vp);
        } catch (const data_error& err) {
            throw data_error("manifest entry video_path does not resolve: " +
                             std::string(err.what()));
        }
        if (info.dims.size() != 4) {
            throw data_error("video tensor must be 4-D [T,H,W,C]: " + e.video_path);
        }
        if (static_cast<int64_t>(info.dims[0]) != e.n_frames) {
            throw data_error("manifest n_frames mismatch for " + e.video_path + ": file has " +
                             std::to_string(info.dims[0]) + ", manifest says " +
                             std::to_string(e.n_frames));
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

}  // namespace xvad
