#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "camp/encoder.hpp"
#include "camp/errors.hpp"

namespace camp {

enum class TrainStage { Pretrained, Supervised, Finetuned };

inline const char* stage_name(TrainStage s) {
    switch (s) {
        case TrainStage::Pretrained: return "pretrained";
        case TrainStage::Supervised: return "supervised";
        case TrainStage::Finetuned: return "finetuned";
    }
    return "?";
}

inline TrainStage stage_from_name(const std::string& s) {
    if (s == "pretrained") return TrainStage::Pretrained;
    if (s == "supervised") return TrainStage::Supervised;
    if (s == "finetuned") return TrainStage::Finetuned;
    throw CheckpointError(CheckpointError::Kind::CorruptHeader, "unknown stage '" + s + "'");
}

/// Serialized encoder + head weights with training metadata and seeds.
/// On disk: magic bytes, format version, a JSON metadata block, then
/// length-prefixed little-endian f64 tensor blocks in parameter order.
struct Checkpoint {
    static constexpr uint32_t kFormatVersion = 1;
    static constexpr char kMagic[9] = "CAMPCKPT";

    EncoderModel model;
    TrainStage stage = TrainStage::Pretrained;
    std::vector<std::string> registry_fingerprint;  // method names, in order
    uint64_t master_seed = 0;
    uint64_t init_seed = 0;
    size_t step_count = 0;
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    nlohmann::json meta;
    meta["version"] = Checkpoint::kFormatVersion;
    meta["stage"] = stage_name(ckpt.stage);
    meta["encoder"] = {{"layers", ckpt.model.config.layers},
                       {"embed_dim", ckpt.model.config.embed_dim},
                       {"heads", ckpt.model.config.heads},
                       {"ffn_hidden", ckpt.model.config.ffn_hidden},
                       {"head_hidden", ckpt.model.config.head_hidden},
                       {"dropout", ckpt.model.config.dropout}};
    meta["head_outputs"] = ckpt.model.head_outputs;
    meta["registry_fingerprint"] = ckpt.registry_fingerprint;
    meta["master_seed"] = ckpt.master_seed;
    meta["init_seed"] = ckpt.init_seed;
    meta["step_count"] = ckpt.step_count;
    std::vector<nlohmann::json> tensors;
    for (size_t i = 0; i < ckpt.model.params.size(); ++i) {
        tensors.push_back({{"name", ckpt.model.params.name(i)},
                           {"shape", ckpt.model.params.tensor(i).shape()}});
    }
    meta["tensors"] = tensors;
    const std::string meta_str = meta.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot open for write: " + path);
    out.write(Checkpoint::kMagic, 8);
    const uint32_t version = Checkpoint::kFormatVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    const uint64_t meta_len = meta_str.size();
    out.write(reinterpret_cast<const char*>(&meta_len), sizeof meta_len);
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    for (size_t i = 0; i < ckpt.model.params.size(); ++i) {
        const Tensor& t = ckpt.model.params.tensor(i);
        const uint64_t count = t.size();
        out.write(reinterpret_cast<const char*>(&count), sizeof count);
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(count * sizeof(double)));
    }
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open: " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, Checkpoint::kMagic, 8) != 0)
        throw CheckpointError(CheckpointError::Kind::CorruptHeader, "bad magic in " + path);
    uint32_t version = 0;
    if (!in.read(reinterpret_cast<char*>(&version), sizeof version))
        throw CheckpointError(CheckpointError::Kind::CorruptHeader, "truncated header in " + path);
    if (version != Checkpoint::kFormatVersion)
        throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                              "format version " + std::to_string(version) + ", expected " +
                                  std::to_string(Checkpoint::kFormatVersion));
    uint64_t meta_len = 0;
    if (!in.read(reinterpret_cast<char*>(&meta_len), sizeof meta_len) || meta_len > (1ull << 30))
        throw CheckpointError(CheckpointError::Kind::CorruptHeader, "bad metadata length");
    std::string meta_str(meta_len, '\0');
    if (!in.read(meta_str.data(), static_cast<std::streamsize>(meta_len)))
        throw CheckpointError(CheckpointError::Kind::CorruptHeader, "truncated metadata");

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_str);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(CheckpointError::Kind::CorruptHeader,
                              std::string("metadata parse: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        EncoderConfig cfg;
        cfg.layers = meta.at("encoder").at("layers").get<size_t>();
        cfg.embed_dim = meta.at("encoder").at("embed_dim").get<size_t>();
        cfg.heads = meta.at("encoder").at("heads").get<size_t>();
        cfg.ffn_hidden = meta.at("encoder").at("ffn_hidden").get<size_t>();
        cfg.head_hidden = meta.at("encoder").at("head_hidden").get<size_t>();
        cfg.dropout = meta.at("encoder").at("dropout").get<double>();
        ckpt.model = EncoderModel::init(cfg, meta.at("head_outputs").get<size_t>(), 0);
        ckpt.stage = stage_from_name(meta.at("stage").get<std::string>());
        ckpt.registry_fingerprint =
            meta.at("registry_fingerprint").get<std::vector<std::string>>();
        ckpt.master_seed = meta.at("master_seed").get<uint64_t>();
        ckpt.init_seed = meta.at("init_seed").get<uint64_t>();
        ckpt.step_count = meta.at("step_count").get<size_t>();

        const auto& tensors = meta.at("tensors");
        if (tensors.size() != ckpt.model.params.size())
            throw CheckpointError(CheckpointError::Kind::CorruptHeader,
                                  "tensor manifest size mismatch");
        for (size_t i = 0; i < ckpt.model.params.size(); ++i) {
            const std::string name = tensors[i].at("name").get<std::string>();
            if (name != ckpt.model.params.name(i))
                throw CheckpointError(CheckpointError::Kind::CorruptHeader,
                                      "tensor order mismatch at '" + name + "'");
            Tensor& t = ckpt.model.params.tensor(i);
            uint64_t count = 0;
            if (!in.read(reinterpret_cast<char*>(&count), sizeof count) || count != t.size())
                throw CheckpointError(CheckpointError::Kind::CorruptHeader,
                                      "tensor block size mismatch at '" + name + "'");
            if (!in.read(reinterpret_cast<char*>(t.data()),
                         static_cast<std::streamsize>(count * sizeof(double))))
                throw CheckpointError(CheckpointError::Kind::CorruptHeader,
                                      "truncated tensor block at '" + name + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(CheckpointError::Kind::CorruptHeader,
                              std::string("metadata field: ") + e.what());
    }
    return ckpt;
}

}  // namespace camp
