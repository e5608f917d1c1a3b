#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "facetrace/data.hpp"
#include "facetrace/identity.hpp"
#include "facetrace/model.hpp"
#include "facetrace/training.hpp"

// Run configuration: one JSON file covering model, training, data and
// evaluation. Parsing is strict: an unknown key anywhere is a configuration
// error, so typos fail loudly instead of silently running defaults.
//
// Channel schedule and embedding width default by resolution (128 -> wide,
// 32 -> bench-scale) unless given explicitly; a --resolution override from
// the CLI re-derives them the same way.

namespace facetrace {

struct RunConfig {
    // model
    int resolution = 128;
    std::optional<std::array<int, 4>> channels;
    std::optional<int> embed_dim;
    double leaky_slope = 0.2;

    // training
    TrainSettings train;
    int batch_size = 32;
    int epochs = 200;
    uint64_t seed = 42;
    int checkpoint_every = 0;
    uint64_t supervision_backbone_seed = 101;
    std::optional<std::string> supervision_backbone_path;

    // data
    std::optional<std::string> manifest_path;
    std::optional<std::string> corpus_root;
    double test_fraction = 0.1;
    double interval_seconds = 1.0;
    SyntheticSpec synthetic;

    // evaluation
    uint64_t eval_backbone_seed = 202;
    std::optional<std::string> eval_backbone_path;
    int eval_backbone_dim = 64;
    int grid_rows = 4;
    std::string dataset_label = "synthetic";

    ModelConfig model_config() const {
        ModelConfig cfg;
        cfg.resolution = resolution;
        cfg.channels = channels ? *channels : ModelConfig::default_channels(resolution);
        cfg.embed_dim = embed_dim ? *embed_dim : ModelConfig::default_embed_dim(resolution);
        cfg.leaky_slope = leaky_slope;
        cfg.validate();
        return cfg;
    }

    BackboneSpec supervision_spec() const {
        return BackboneSpec{32, model_config().embed_dim, false};
    }

    BackboneSpec eval_spec() const { return BackboneSpec{32, eval_backbone_dim, true}; }
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Fully resolved snapshot (defaults filled in), archived next to training
// outputs so a run can be reproduced from its artifacts alone.
nlohmann::json run_config_to_json(const RunConfig& rc);

} // namespace facetrace
