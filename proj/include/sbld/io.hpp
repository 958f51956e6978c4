#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sbld/common.hpp"
#include "sbld/features.hpp"
#include "sbld/volume.hpp"

#include <json.hpp>

namespace sbld {

static_assert(std::endian::native == std::endian::little, "payloads are little-endian");

namespace detail {

// Container layout: 4-byte magic, u32 LE header byte length, UTF-8 JSON
// header, raw little-endian payload.
inline void write_container(const std::filesystem::path& path, const char magic[4],
                            const nlohmann::ordered_json& header, const void* payload, size_t payload_bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open for write: " + path.string());
    const std::string hdr = header.dump();
    const uint32_t hlen = static_cast<uint32_t>(hdr.size());
    out.write(magic, 4);
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(hdr.data(), hlen);
    out.write(reinterpret_cast<const char*>(payload), payload_bytes);
    if (!out) throw io_error("write failed: " + path.string());
}

struct Container {
    nlohmann::json header;
    std::vector<char> payload;
};

inline Container read_container(const std::filesystem::path& path, const char expect_magic[4]) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open for read: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, expect_magic, 4) != 0)
        throw format_error("bad magic in " + path.string() + " (expected " + std::string(expect_magic, 4) + ")");
    uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 4);
    if (!in) throw format_error("truncated header length in " + path.string());
    std::string hdr(hlen, '\0');
    in.read(hdr.data(), hlen);
    if (!in) throw format_error("truncated header in " + path.string());
    Container c;
    try {
        c.header = nlohmann::json::parse(hdr);
    } catch (const nlohmann::json::exception& e) {
        throw format_error("bad header JSON in " + path.string() + ": " + e.what());
    }
    c.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return c;
}

inline Dims dims_from_header(const nlohmann::json& h, const std::string& path) {
    if (!h.contains("dims")) throw format_error("missing dims in header of " + path);
    const auto& jd = h["dims"];
    if (!jd.is_array() || jd.size() != 3) throw format_error("bad dims in header of " + path);
    return Dims{jd[0].get<int>(), jd[1].get<int>(), jd[2].get<int>()};
}

}  // namespace detail

// ---------------------------------------------------------------- volumes

inline void write_volume(const VolumeGrid& grid, const std::filesystem::path& path) {
    grid.validate();
    nlohmann::ordered_json h;
    h["version"] = 1;
    h["dims"] = {grid.dims.w, grid.dims.h, grid.dims.d};
    h["dtype"] = "f32";
    h["order"] = "z-major";
    h["value_range"] = {grid.value_range[0], grid.value_range[1]};
    detail::write_container(path, "SBLV", h, grid.voxels.data(), grid.voxels.size() * sizeof(float));
}

inline VolumeGrid read_volume(const std::filesystem::path& path) {
    auto c = detail::read_container(path, "SBLV");
    VolumeGrid g;
    g.dims = detail::dims_from_header(c.header, path.string());
    if (c.header.value("dtype", "") != "f32") throw format_error("unexpected dtype in " + path.string());
    const size_t expect = size_t(g.dims.voxels()) * sizeof(float);
    if (c.payload.size() != expect)
        throw format_error("payload length mismatch in " + path.string() + ": expected " +
                           std::to_string(expect) + " bytes, got " + std::to_string(c.payload.size()));
    if (c.header.contains("value_range")) {
        g.value_range[0] = c.header["value_range"][0].get<float>();
        g.value_range[1] = c.header["value_range"][1].get<float>();
    }
    g.voxels.resize(size_t(g.dims.voxels()));
    std::memcpy(g.voxels.data(), c.payload.data(), expect);
    g.validate();
    return g;
}

// ------------------------------------------------------------------ masks

inline void write_mask(const MaskGrid& mask, const std::filesystem::path& path) {
    mask.validate();
    nlohmann::ordered_json h;
    h["version"] = 1;
    h["dims"] = {mask.dims.w, mask.dims.h, mask.dims.d};
    h["dtype"] = "u8";
    h["order"] = "z-major";
    detail::write_container(path, "SBLM", h, mask.voxels.data(), mask.voxels.size());
}

inline MaskGrid read_mask(const std::filesystem::path& path) {
    auto c = detail::read_container(path, "SBLM");
    MaskGrid m;
    m.dims = detail::dims_from_header(c.header, path.string());
    if (c.header.value("dtype", "") != "u8") throw format_error("unexpected dtype in " + path.string());
    const size_t expect = size_t(m.dims.voxels());
    if (c.payload.size() != expect)
        throw format_error("payload length mismatch in " + path.string() + ": expected " +
                           std::to_string(expect) + " bytes, got " + std::to_string(c.payload.size()));
    m.voxels.resize(expect);
    std::memcpy(m.voxels.data(), c.payload.data(), expect);
    m.validate();
    return m;
}

// --------------------------------------------------------------- manifest

struct CaseRecord {
    std::string case_id;
    std::string image_path;  // relative to the manifest directory
    std::string mask_path;
    ConditionVector condition;
    std::string split;  // train | val | test
};

struct DatasetManifest {
    int format_version = 1;
    Dims dims;
    std::vector<CaseRecord> cases;

    std::vector<const CaseRecord*> split_cases(std::string_view split) const {
        std::vector<const CaseRecord*> out;
        for (const auto& c : cases)
            if (c.split == split) out.push_back(&c);
        return out;
    }
};

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
    nlohmann::ordered_json j;
    j["format_version"] = m.format_version;
    j["dims"] = {m.dims.w, m.dims.h, m.dims.d};
    j["cases"] = nlohmann::ordered_json::array();
    for (const auto& c : m.cases) {
        nlohmann::ordered_json jc;
        jc["case_id"] = c.case_id;
        jc["image_path"] = c.image_path;
        jc["mask_path"] = c.mask_path;
        jc["condition"] = c.condition.to_json();
        jc["split"] = c.split;
        j["cases"].push_back(std::move(jc));
    }
    return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.format_version = j.at("format_version").get<int>();
    const auto& jd = j.at("dims");
    m.dims = Dims{jd[0].get<int>(), jd[1].get<int>(), jd[2].get<int>()};
    for (const auto& jc : j.at("cases")) {
        CaseRecord c;
        c.case_id = jc.at("case_id").get<std::string>();
        c.image_path = jc.at("image_path").get<std::string>();
        c.mask_path = jc.at("mask_path").get<std::string>();
        c.condition = ConditionVector::from_json(jc.at("condition"));
        c.split = jc.at("split").get<std::string>();
        m.cases.push_back(std::move(c));
    }
    return m;
}

// Structural checks only (uniqueness, known splits). File existence is a
// separate, heavier step: validate_manifest_files.
inline void validate_manifest(const DatasetManifest& m) {
    std::map<std::string, int> seen;
    for (const auto& c : m.cases) {
        if (++seen[c.case_id] > 1) throw validation_error("duplicate case_id in manifest: " + c.case_id);
        if (c.split != "train" && c.split != "val" && c.split != "test")
            throw validation_error("unknown split '" + c.split + "' for case " + c.case_id);
    }
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    validate_manifest(m);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open for write: " + path.string());
    out << manifest_to_json(m).dump(2) << "\n";
    if (!out) throw io_error("write failed: " + path.string());
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open for read: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw format_error("bad manifest JSON in " + path.string() + ": " + e.what());
    }
    DatasetManifest m = manifest_from_json(j);
    validate_manifest(m);
    return m;
}

// Verifies every referenced file exists, parses, and matches the shared dims.
inline void validate_manifest_files(const DatasetManifest& m, const std::filesystem::path& base_dir) {
    for (const auto& c : m.cases) {
        const auto img = base_dir / c.image_path;
        const auto msk = base_dir / c.mask_path;
        if (!std::filesystem::exists(img)) throw validation_error("missing image file: " + img.string());
        if (!std::filesystem::exists(msk)) throw validation_error("missing mask file: " + msk.string());
        const VolumeGrid g = read_volume(img);
        const MaskGrid k = read_mask(msk);
        if (g.dims != m.dims || k.dims != m.dims)
            throw validation_error("dims mismatch for case " + c.case_id);
    }
}

// ------------------------------------------------------------- checkpoints

// Named-f32-tensor container shared by all model checkpoints. The header
// embeds the architecture config so a load can reject incompatible shapes.
struct CheckpointFile {
    std::string kind;
    nlohmann::json config;
    std::vector<std::pair<std::string, std::vector<float>>> tensors;

    const std::vector<float>& tensor(const std::string& name) const {
        for (const auto& [n, v] : tensors)
            if (n == name) return v;
        throw format_error("checkpoint tensor not found: " + name);
    }
    bool has_tensor(const std::string& name) const {
        for (const auto& [n, v] : tensors)
            if (n == name) return true;
        return false;
    }
};

inline void write_checkpoint(const CheckpointFile& ck, const std::filesystem::path& path) {
    nlohmann::ordered_json h;
    h["version"] = 1;
    h["kind"] = ck.kind;
    h["config"] = ck.config;
    auto names = nlohmann::ordered_json::array();
    std::vector<char> payload;
    for (const auto& [name, values] : ck.tensors) {
        names.push_back({{"name", name}, {"count", values.size()}});
        const size_t off = payload.size();
        payload.resize(off + values.size() * sizeof(float));
        std::memcpy(payload.data() + off, values.data(), values.size() * sizeof(float));
    }
    h["tensors"] = names;
    detail::write_container(path, "SBLC", h, payload.data(), payload.size());
}

inline CheckpointFile read_checkpoint(const std::filesystem::path& path) {
    auto c = detail::read_container(path, "SBLC");
    CheckpointFile ck;
    ck.kind = c.header.at("kind").get<std::string>();
    ck.config = c.header.at("config");
    size_t off = 0;
    for (const auto& jt : c.header.at("tensors")) {
        const auto name = jt.at("name").get<std::string>();
        const size_t count = jt.at("count").get<size_t>();
        if (off + count * sizeof(float) > c.payload.size())
            throw format_error("checkpoint payload too short in " + path.string());
        std::vector<float> values(count);
        std::memcpy(values.data(), c.payload.data() + off, count * sizeof(float));
        off += count * sizeof(float);
        ck.tensors.emplace_back(name, std::move(values));
    }
    if (off != c.payload.size()) throw format_error("checkpoint payload too long in " + path.string());
    return ck;
}

// snapshot every named parameter tensor of a model into a checkpoint
template <typename Model>
void store_model_tensors(CheckpointFile& ck, Model& model) {
    model.for_each_param([&](const std::string& name, auto& values, auto&) {
        std::vector<float> v(values.begin(), values.end());
        ck.tensors.emplace_back(name, std::move(v));
    });
}

template <typename Model>
void load_model_tensors(const CheckpointFile& ck, Model& model) {
    model.for_each_param([&](const std::string& name, auto& values, auto&) {
        const auto& v = ck.tensor(name);
        if (v.size() != values.size())
            throw format_error("checkpoint tensor size mismatch for " + name);
        std::copy(v.begin(), v.end(), values.begin());
    });
}

}  // namespace sbld
