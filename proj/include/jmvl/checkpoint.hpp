#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "jmvl/adam.hpp"
#include "jmvl/common.hpp"
#include "jmvl/config.hpp"
#include "jmvl/models.hpp"

namespace jmvl {

namespace detail {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t seed = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = ~seed;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return ~crc;
}

inline void append_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void append_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    append_u32(out, bits);
}

struct ByteReader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;
    std::uint8_t u8() {
        if (pos >= bytes.size()) throw FormatError("checkpoint truncated", pos);
        return bytes[pos++];
    }
    std::uint16_t u16() { return static_cast<std::uint16_t>(u8() | (u8() << 8)); }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(u8()) << (8 * i);
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'J', 'M', 'V', 'L'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Parsed checkpoint: manifest fields plus raw tensor entries in file order.
struct Checkpoint {
    std::uint16_t version = kCheckpointVersion;
    std::string model_kind;
    std::size_t epoch = 0;
    std::int64_t adam_step = 0;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps_hat = 1e-8;
    ModalitySpec mx, mw;
    std::size_t z_dim = 0, z2_dim = 0;
    std::map<std::string, std::string> config;

    struct Entry {
        std::string name;
        Shape shape;
        std::string role;  // param | adam_m | adam_v
        std::vector<float> data;
    };
    std::vector<Entry> tensors;
};

inline std::vector<std::uint8_t> serialize_checkpoint(Model<float>& model,
                                                      const AdamState<float>& adam, std::size_t epoch,
                                                      const std::map<std::string, std::string>& config) {
    nlohmann::json manifest;
    manifest["model"] = model_kind_name(model.kind);
    manifest["epoch"] = epoch;
    manifest["adam_step"] = adam.step;
    manifest["adam_beta1"] = detail::fmt_double(adam.beta1);
    manifest["adam_beta2"] = detail::fmt_double(adam.beta2);
    manifest["adam_eps_hat"] = detail::fmt_double(adam.eps_hat);
    manifest["x_kind"] = static_cast<int>(model.mx.kind);
    manifest["x_dim"] = model.mx.dim;
    manifest["w_kind"] = static_cast<int>(model.mw.kind);
    manifest["w_dim"] = model.mw.dim;
    manifest["z_dim"] = model.z_dim;
    manifest["z2_dim"] = model.z2_dim;
    manifest["config"] = config;

    nlohmann::json tensor_list = nlohmann::json::array();
    std::vector<const std::vector<float>*> payload_refs;
    auto list = [&](const std::string& name, const Shape& shape, const char* role,
                    const std::vector<float>& data) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = shape;
        e["role"] = role;
        tensor_list.push_back(std::move(e));
        payload_refs.push_back(&data);
    };
    for (Parameter<float>* p : model.parameters()) {
        list(p->name, p->shape, "param", p->value);
        auto it = adam.moments.find(p->name);
        if (it != adam.moments.end() && !it->second.m.empty()) {
            list(p->name, p->shape, "adam_m", it->second.m);
            list(p->name, p->shape, "adam_v", it->second.v);
        }
    }
    manifest["tensors"] = std::move(tensor_list);
    std::string manifest_str = manifest.dump();

    std::vector<std::uint8_t> out;
    out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
    detail::append_u16(out, kCheckpointVersion);
    detail::append_u32(out, static_cast<std::uint32_t>(manifest_str.size()));
    out.insert(out.end(), manifest_str.begin(), manifest_str.end());
    std::uint64_t payload_floats = 0;
    for (auto* v : payload_refs) payload_floats += v->size();
    detail::append_u64(out, payload_floats * 4);
    for (auto* v : payload_refs)
        for (float f : *v) detail::append_f32(out, f);
    detail::append_u32(out, detail::crc32(out.data(), out.size()));
    return out;
}

inline void save_checkpoint(const std::string& path, Model<float>& model,
                            const AdamState<float>& adam, std::size_t epoch,
                            const std::map<std::string, std::string>& config) {
    std::vector<std::uint8_t> bytes = serialize_checkpoint(model, adam, epoch, config);
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 4 + 2 + 4 + 8 + 4) throw FormatError("checkpoint too short", bytes.size());
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
        throw FormatError("bad checkpoint magic", 0);
    std::uint32_t stored_crc = 0;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    std::uint32_t actual = detail::crc32(bytes.data(), bytes.size() - 4);
    if (stored_crc != actual) throw FormatError("checkpoint checksum mismatch", bytes.size() - 4);

    detail::ByteReader r{bytes, 4};
    Checkpoint ckpt;
    ckpt.version = r.u16();
    if (ckpt.version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version), 4);
    std::uint32_t mlen = r.u32();
    if (r.pos + mlen > bytes.size()) throw FormatError("manifest overruns file", r.pos);
    nlohmann::json manifest =
        nlohmann::json::parse(bytes.begin() + r.pos, bytes.begin() + r.pos + mlen);
    r.pos += mlen;

    ckpt.model_kind = manifest.at("model").get<std::string>();
    ckpt.epoch = manifest.at("epoch").get<std::size_t>();
    ckpt.adam_step = manifest.at("adam_step").get<std::int64_t>();
    ckpt.adam_beta1 = std::stod(manifest.at("adam_beta1").get<std::string>());
    ckpt.adam_beta2 = std::stod(manifest.at("adam_beta2").get<std::string>());
    ckpt.adam_eps_hat = std::stod(manifest.at("adam_eps_hat").get<std::string>());
    ckpt.mx = {static_cast<ModalityKind>(manifest.at("x_kind").get<int>()),
               manifest.at("x_dim").get<std::size_t>()};
    ckpt.mw = {static_cast<ModalityKind>(manifest.at("w_kind").get<int>()),
               manifest.at("w_dim").get<std::size_t>()};
    ckpt.z_dim = manifest.at("z_dim").get<std::size_t>();
    ckpt.z2_dim = manifest.at("z2_dim").get<std::size_t>();
    ckpt.config = manifest.at("config").get<std::map<std::string, std::string>>();

    std::uint64_t payload_len = r.u64();
    if (r.pos + payload_len + 4 != bytes.size())
        throw FormatError("payload length mismatch", r.pos);
    for (const auto& e : manifest.at("tensors")) {
        Checkpoint::Entry entry;
        entry.name = e.at("name").get<std::string>();
        entry.shape = e.at("shape").get<Shape>();
        entry.role = e.at("role").get<std::string>();
        entry.data.resize(shape_numel(entry.shape));
        for (auto& f : entry.data) f = r.f32();
        ckpt.tensors.push_back(std::move(entry));
    }
    if (r.pos != bytes.size() - 4) throw FormatError("trailing bytes after tensors", r.pos);
    return ckpt;
}

/// Rebuilds the model + optimizer state a checkpoint describes. The network
/// structure comes from the echoed config; the payload restores the values.
inline std::pair<Model<float>, AdamState<float>> model_from_checkpoint(const Checkpoint& ckpt) {
    TrainConfig cfg = config_from_map(ckpt.config);
    Model<float> model =
        build_model<float>(model_kind_from(ckpt.model_kind), ckpt.mx, ckpt.mw, ckpt.z_dim,
                           ckpt.z2_dim, cfg.archs, cfg.cvae_direction == "x_given_w", cfg.seed);

    AdamState<float> adam;
    adam.beta1 = static_cast<float>(ckpt.adam_beta1);
    adam.beta2 = static_cast<float>(ckpt.adam_beta2);
    adam.eps_hat = static_cast<float>(ckpt.adam_eps_hat);
    adam.step = ckpt.adam_step;

    std::map<std::string, Parameter<float>*> by_name;
    for (Parameter<float>* p : model.parameters()) by_name[p->name] = p;
    for (const auto& e : ckpt.tensors) {
        auto it = by_name.find(e.name);
        if (it == by_name.end())
            throw FormatError("checkpoint tensor '" + e.name + "' has no matching parameter", 0);
        if (it->second->shape != e.shape)
            throw FormatError("checkpoint tensor '" + e.name + "' shape mismatch", 0);
        if (e.role == "param") it->second->value = e.data;
        else if (e.role == "adam_m") adam.moments[e.name].m = e.data;
        else if (e.role == "adam_v") adam.moments[e.name].v = e.data;
        else throw FormatError("unknown tensor role '" + e.role + "'", 0);
    }
    return {std::move(model), std::move(adam)};
}

}  // namespace jmvl
