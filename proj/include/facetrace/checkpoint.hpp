#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "facetrace/identity.hpp"
#include "facetrace/model.hpp"
#include "facetrace/tensor.hpp"

// On-disk container for weights and optimizer state. Little-endian binary:
//
//   "FTCK" | u32 version | u64 meta_len | meta (UTF-8 JSON)
//   u32 n_entries | entries...
//   entry: u32 name_len | name | u32 ndim | u32 dims[] | f32 payload
//
// Values are stored as raw IEEE-754 f32 bits, so save -> load -> save is
// byte-identical and a resumed run continues from the exact parameters it
// stopped with. meta.kind distinguishes what the file holds: "train" (full
// optimizer state), "model" (weights only), "backbone" (identity embedder),
// "identity_oracle" (a metrics-pipeline fixture carrying no weights: eval
// treats the paired original as the traced output).

namespace facetrace {

struct CheckpointEntry {
    std::string name;
    std::vector<int> dims;
    std::vector<float> data;
};

struct Checkpoint {
    nlohmann::json meta;
    std::vector<CheckpointEntry> entries;

    std::string kind() const { return meta.is_object() ? meta.value("kind", "") : ""; }

    const CheckpointEntry* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- bridges between the container and in-memory parameter structs ----

inline void pack_tensors(Checkpoint& ck, const std::string& prefix,
                         std::vector<std::pair<std::string, Tensor<float>*>> tensors) {
    for (auto& [name, t] : tensors) {
        CheckpointEntry e;
        e.name = prefix.empty() ? name : prefix + "." + name;
        e.dims = t->dims();
        e.data.assign(t->data(), t->data() + t->numel());
        ck.entries.push_back(std::move(e));
    }
}

inline void unpack_tensors(const Checkpoint& ck, const std::string& prefix,
                           std::vector<std::pair<std::string, Tensor<float>*>> tensors) {
    for (auto& [name, t] : tensors) {
        std::string full = prefix.empty() ? name : prefix + "." + name;
        const CheckpointEntry* e = ck.find(full);
        if (!e)
            throw DataError("checkpoint is missing tensor '" + full + "'");
        if (e->dims != t->dims())
            throw DataError("checkpoint tensor '" + full + "' has shape " + shape_str(e->dims) +
                            ", expected " + t->shape_str());
        std::copy(e->data.begin(), e->data.end(), t->data());
    }
}

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return {{"resolution", cfg.resolution},
            {"channels", cfg.channels},
            {"embed_dim", cfg.embed_dim},
            {"leaky_slope", cfg.leaky_slope}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.resolution = j.at("resolution").get<int>();
    auto ch = j.at("channels").get<std::vector<int>>();
    if (ch.size() != 4)
        throw DataError("checkpoint model config must list 4 channel counts");
    std::copy(ch.begin(), ch.end(), cfg.channels.begin());
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.leaky_slope = j.at("leaky_slope").get<double>();
    cfg.validate();
    return cfg;
}

inline ModelParams<float> model_from_checkpoint(const Checkpoint& ck) {
    if (!ck.meta.contains("model"))
        throw DataError("checkpoint has no model config");
    ModelParams<float> p(model_config_from_json(ck.meta.at("model")));
    unpack_tensors(ck, "", named_tensors(p));
    return p;
}

inline void save_backbone(IdentityBackbone& bb, const std::filesystem::path& path) {
    Checkpoint ck;
    ck.meta = {{"kind", "backbone"},
               {"input_resolution", bb.spec.input_resolution},
               {"output_dim", bb.spec.output_dim},
               {"normalize_output", bb.spec.normalize_output}};
    pack_tensors(ck, "backbone", bb.tensors());
    save_checkpoint(ck, path);
}

inline IdentityBackbone load_backbone(const std::filesystem::path& path,
                                      const BackboneSpec& expected) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.kind() != "backbone")
        throw DataError("'" + path.string() + "' is not a backbone file (kind='" + ck.kind() + "')");
    BackboneSpec spec;
    spec.input_resolution = ck.meta.at("input_resolution").get<int>();
    spec.output_dim = ck.meta.at("output_dim").get<int>();
    spec.normalize_output = ck.meta.at("normalize_output").get<bool>();
    if (spec.input_resolution != expected.input_resolution || spec.output_dim != expected.output_dim)
        throw ConfigError("backbone file '" + path.string() + "' has input_resolution=" +
                          std::to_string(spec.input_resolution) + ", output_dim=" +
                          std::to_string(spec.output_dim) + "; configuration expects " +
                          std::to_string(expected.input_resolution) + ", " +
                          std::to_string(expected.output_dim));
    IdentityBackbone bb(spec, 0);
    unpack_tensors(ck, "backbone", bb.tensors());
    return bb;
}

} // namespace facetrace
