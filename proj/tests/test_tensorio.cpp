// Tensor container format and manifest validation.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "xvad/errors.hpp"
#include "xvad/rng.hpp"
#include "xvad/synthdata.hpp"
#include "xvad/tensorio.hpp"

namespace fs = std::filesystem;
using namespace xvad;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("xvad_test_" + std::to_string(mix64(reinterpret_cast<uintptr_t>(this))));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_bytes(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("1x1 float32 zero tensor: header fields and zero payload") {
    TempDir tmp;
    AnyTensor t;
    t.dtype = Dtype::f32;
    t.dims = {1, 1};
    t.f32 = {0.0f};
    const fs::path p = tmp.path / "zero.actf";
    write_tensor(p, t);

    const std::string bytes = read_bytes(p);
    // magic(4) + version(1) + dtype(1) + ndim(1) + 2 dims x u32 + 4-byte payload
    REQUIRE(bytes.size() == 7 + 8 + 4);
    CHECK(bytes.substr(0, 4) == "ACTF");
    CHECK(bytes[4] == 1);   // version
    CHECK(bytes[5] == 1);   // dtype float32
    CHECK(bytes[6] == 2);   // ndim
    for (size_t i = 15; i < bytes.size(); ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("uint8 [2,3] tensor lays out payload bytes 00..05") {
    TempDir tmp;
    AnyTensor t;
    t.dtype = Dtype::u8;
    t.dims = {2, 3};
    t.u8 = {0, 1, 2, 3, 4, 5};
    const fs::path p = tmp.path / "bytes.actf";
    write_tensor(p, t);

    const std::string bytes = read_bytes(p);
    REQUIRE(bytes.size() == 7 + 8 + 6);
    // dims little-endian: 2, then 3
    CHECK(static_cast<unsigned char>(bytes[7]) == 2);
    CHECK(static_cast<unsigned char>(bytes[11]) == 3);
    for (int i = 0; i < 6; ++i) {
        CHECK(static_cast<unsigned char>(bytes[15 + i]) == i);
    }

    const AnyTensor back = read_tensor(p);
    CHECK(back.dtype == Dtype::u8);
    CHECK(back.dims == std::vector<uint32_t>{2, 3});
    CHECK(back.u8 == t.u8);
}

TEST_CASE("round-trip is bit-exact for random tensors of every dtype and rank") {
    TempDir tmp;
    Rng rng(7);
    for (int trial = 0; trial < 40; ++trial) {
        const int ndim = static_cast<int>(rng.uniform_int(1, 5));
        std::vector<uint32_t> dims(static_cast<size_t>(ndim));
        uint64_t numel = 1;
        for (auto& d : dims) {
            d = static_cast<uint32_t>(rng.uniform_int(1, 6));
            numel *= d;
        }
        AnyTensor t;
        t.dims = dims;
        switch (trial % 3) {
            case 0:
                t.dtype = Dtype::u8;
                t.u8.resize(numel);
                for (auto& b : t.u8) b = static_cast<uint8_t>(rng.uniform_int(0, 255));
                break;
            case 1:
                t.dtype = Dtype::f32;
                t.f32.resize(numel);
                for (auto& f : t.f32) f = static_cast<float>(rng.uniform(-10, 10));
                break;
            default:
                t.dtype = Dtype::f64;
                t.f64.resize(numel);
                for (auto& f : t.f64) f = rng.uniform(-10, 10);
                break;
        }
        const fs::path p = tmp.path / ("rt_" + std::to_string(trial) + ".actf");
        write_tensor(p, t);
        const AnyTensor back = read_tensor(p);
        CHECK(back.dtype == t.dtype);
        CHECK(back.dims == t.dims);
        CHECK(back.u8 == t.u8);
        CHECK(back.f32 == t.f32);
        CHECK(back.f64 == t.f64);
    }
}

TEST_CASE("read errors are reported distinctly") {
    TempDir tmp;
    AnyTensor t;
    t.dtype = Dtype::f64;
    t.dims = {2, 2};
    t.f64 = {1, 2, 3, 4};
    const fs::path good = tmp.path / "good.actf";
    write_tensor(good, t);
    const std::string bytes = read_bytes(good);

    SUBCASE("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        write_bytes(tmp.path / "bad.actf", bad);
        CHECK_THROWS_WITH_AS(read_tensor(tmp.path / "bad.actf"),
                             doctest::Contains("bad magic"), data_error);
    }
    SUBCASE("version mismatch") {
        std::string bad = bytes;
        bad[4] = 2;
        write_bytes(tmp.path / "bad.actf", bad);
        CHECK_THROWS_WITH_AS(read_tensor(tmp.path / "bad.actf"),
                             doctest::Contains("version mismatch"), data_error);
    }
    SUBCASE("truncated payload") {
        write_bytes(tmp.path / "bad.actf", bytes.substr(0, bytes.size() - 1));
        CHECK_THROWS_WITH_AS(read_tensor(tmp.path / "bad.actf"),
                             doctest::Contains("truncated"), data_error);
        CHECK_THROWS_AS(read_tensor_info(tmp.path / "bad.actf"), data_error);
    }
    SUBCASE("unsupported dtype code") {
        std::string bad = bytes;
        bad[5] = 9;
        write_bytes(tmp.path / "bad.actf", bad);
        CHECK_THROWS_WITH_AS(read_tensor(tmp.path / "bad.actf"),
                             doctest::Contains("dtype"), data_error);
    }
}

TEST_CASE("write_tensor rejects zero dims and wrong payload sizes") {
    TempDir tmp;
    AnyTensor t;
    t.dtype = Dtype::u8;
    t.dims = {0, 3};
    CHECK_THROWS_AS(write_tensor(tmp.path / "x.actf", t), data_error);
    t.dims = {2, 3};
    t.u8 = {1, 2, 3};  // too short
    CHECK_THROWS_AS(write_tensor(tmp.path / "x.actf", t), data_error);
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

namespace {

nlohmann::json valid_manifest_json(const fs::path& dir) {
    TensorU8 frames({4, 8, 8, 3});
    for (size_t i = 0; i < frames.v.size(); ++i) frames.v[i] = static_cast<uint8_t>(i % 251);
    fs::create_directories(dir / "videos");
    write_tensor_u8(dir / "videos/v0.actf", frames);
    return nlohmann::json{
        {"domain_tag", "target_normal"},
        {"seed", 5},
        {"generator_config", nlohmann::json::object()},
        {"entries", nlohmann::json::array({nlohmann::json{{"video_path", "videos/v0.actf"},
                                                          {"label", 0},
                                                          {"anomaly_type", ""},
                                                          {"n_frames", 4}}})}};
}

void write_json(const fs::path& p, const nlohmann::json& j) {
    std::ofstream out(p, std::ios::trunc);
    out << j.dump(2);
}

}  // namespace

TEST_CASE("empty entries list loads as a valid manifest") {
    TempDir tmp;
    nlohmann::json j = valid_manifest_json(tmp.path);
    j["entries"] = nlohmann::json::array();
    write_json(tmp.path / "m.json", j);
    const DatasetManifest m = load_manifest(tmp.path / "m.json");
    CHECK(m.entries.empty());
    CHECK(m.domain_tag == DomainTag::target_normal);
}

TEST_CASE("manifest round-trips through save and load") {
    TempDir tmp;
    write_json(tmp.path / "m.json", valid_manifest_json(tmp.path));
    const DatasetManifest m = load_manifest(tmp.path / "m.json");
    save_manifest(tmp.path / "m2.json", m);
    const DatasetManifest m2 = load_manifest(tmp.path / "m2.json");
    CHECK(m2.entries.size() == m.entries.size());
    CHECK(m2.seed == m.seed);
}

TEST_CASE("manifest validation rejects every single-field corruption") {
    TempDir tmp;
    const nlohmann::json good = valid_manifest_json(tmp.path);
    write_json(tmp.path / "good.json", good);
    CHECK_NOTHROW(load_manifest(tmp.path / "good.json"));

    auto expect_reject = [&](nlohmann::json j, const char* what) {
        write_json(tmp.path / "bad.json", j);
        INFO(what);
        CHECK_THROWS_AS(load_manifest(tmp.path / "bad.json"), data_error);
    };

    for (const char* field : {"domain_tag", "seed", "generator_config", "entries"}) {
        nlohmann::json j = good;
        j.erase(field);
        expect_reject(j, field);
    }
    for (const char* field : {"video_path", "label", "anomaly_type", "n_frames"}) {
        nlohmann::json j = good;
        j["entries"][0].erase(field);
        expect_reject(j, field);
    }
    {
        nlohmann::json j = good;
        j["domain_tag"] = "elsewhere";
        expect_reject(j, "unknown domain tag");
    }
    {
        nlohmann::json j = good;
        j["entries"][0]["label"] = 1;  // target_normal must be 0
        expect_reject(j, "normal label");
    }
    {
        nlohmann::json j = good;
        j["entries"][0]["video_path"] = "videos/missing.actf";
        expect_reject(j, "dangling path");
    }
    {
        nlohmann::json j = good;
        j["entries"][0]["n_frames"] = 9;  // file has 4
        expect_reject(j, "frame count");
    }
    {
        nlohmann::json j = good;
        j["entries"][0]["anomaly_type"] = "stop";  // normals must have empty type
        expect_reject(j, "type on normal");
    }
    {
        nlohmann::json j = good;
        j["domain_tag"] = "target_abnormal";  // label 0 + empty type now invalid
        expect_reject(j, "abnormal consistency");
    }
}

TEST_CASE("abnormal manifests require label 1 and a type") {
    TempDir tmp;
    nlohmann::json j = valid_manifest_json(tmp.path);
    j["domain_tag"] = "target_abnormal";
    j["entries"][0]["label"] = 1;
    j["entries"][0]["anomaly_type"] = "stop";
    write_json(tmp.path / "m.json", j);
    const DatasetManifest m = load_manifest(tmp.path / "m.json");
    CHECK(m.entries[0].anomaly_type == "stop");
}
