#pragma once

#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "io.hpp"
#include "stdit.hpp"

namespace instadrive {

inline constexpr char kCheckpointMagic[6] = {'T', 'S', 'T', 'D', '1', '\0'};
inline constexpr char kTensorFileMagic[6] = {'T', 'T', 'E', 'N', '1', '\0'};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

namespace detail {

inline void write_tensor_record(ByteWriter& w, const std::string& name, const Tensor& t) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
}

inline NamedTensor read_tensor_record(ByteReader& r) {
    NamedTensor nt;
    nt.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw std::ios_base::failure("tensor '" + nt.name + "' has implausible rank");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u64();
    const std::size_t n = Tensor::count(shape);
    if (n * 8 > r.remaining()) throw std::ios_base::failure("tensor '" + nt.name + "' is truncated");
    nt.tensor = Tensor(shape);
    for (double& v : nt.tensor.data()) v = r.f64();
    return nt;
}

inline void check_magic(ByteReader& r, const char (&magic)[6], const char* what) {
    char m[6];
    r.bytes(m, 6);
    if (std::memcmp(m, magic, 6) != 0) throw std::ios_base::failure(std::string("not a ") + what + " file");
}

}  // namespace detail

// Layout: magic "TSTD1\0", u32 JSON length, JSON config, then until EOF
// records of (u32 name length, name, u32 rank, u64 dims[rank], f64 data).
// All integers and floats little-endian.
inline std::vector<std::uint8_t> encode_checkpoint(ToyStDiT& model) {
    ByteWriter w;
    w.bytes(kCheckpointMagic, 6);
    const std::string cfg = to_json(model.config).dump();
    w.u32(static_cast<std::uint32_t>(cfg.size()));
    w.str(cfg);
    model.visit([&](const std::string& name, ad::Var& v) { detail::write_tensor_record(w, name, v->value); });
    return w.buffer();
}

inline ToyStDiT decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    detail::check_magic(r, kCheckpointMagic, "checkpoint");
    const std::string cfg_text = r.str(r.u32());
    ToyStDiTConfig cfg;
    try {
        apply_json(cfg, nlohmann::json::parse(cfg_text));
    } catch (const nlohmann::json::exception& e) {
        throw std::ios_base::failure(std::string("checkpoint config is not valid JSON: ") + e.what());
    }
    ToyStDiT model(cfg);
    std::map<std::string, Tensor> stored;
    while (!r.done()) {
        NamedTensor nt = detail::read_tensor_record(r);
        stored[nt.name] = std::move(nt.tensor);
    }
    model.visit([&](const std::string& name, ad::Var& v) {
        auto it = stored.find(name);
        if (it == stored.end()) throw ShapeError("checkpoint is missing tensor '" + name + "'");
        if (!it->second.same_shape(v->value))
            throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                             ", model expects " + shape_str(v->value.shape()));
        v->value = std::move(it->second);
        stored.erase(it);
    });
    if (!stored.empty()) throw ShapeError("checkpoint has unexpected tensor '" + stored.begin()->first + "'");
    return model;
}

inline void save_checkpoint(const std::filesystem::path& path, ToyStDiT& model) {
    atomic_write(path, encode_checkpoint(model));
}

inline ToyStDiT load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_binary_file(path)); }

// Same record encoding under magic "TTEN1\0"; used for latent dumps.
inline std::vector<std::uint8_t> encode_tensor_file(const std::vector<NamedTensor>& tensors) {
    ByteWriter w;
    w.bytes(kTensorFileMagic, 6);
    for (const auto& nt : tensors) detail::write_tensor_record(w, nt.name, nt.tensor);
    return w.buffer();
}

inline std::vector<NamedTensor> decode_tensor_file(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    detail::check_magic(r, kTensorFileMagic, "tensor");
    std::vector<NamedTensor> out;
    while (!r.done()) out.push_back(detail::read_tensor_record(r));
    return out;
}

}  // namespace instadrive
