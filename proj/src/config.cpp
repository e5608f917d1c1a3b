#include "facetrace/config.hpp"

#include <fstream>
#include <set>

#include "facetrace/errors.hpp"

namespace facetrace {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object())
        throw ConfigError("config section '" + where + "' must be an object");
    for (auto& [key, val] : j.items())
        if (!allowed.count(key))
            throw ConfigError("unknown config key '" + where + "." + key + "'");
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("config key '") + key + "' has the wrong type");
        }
    }
}

} // namespace

RunConfig parse_run_config(const json& j) {
    RunConfig rc;
    check_keys(j, {"model", "train", "data", "eval"}, "(top level)");

    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, {"resolution", "channels", "embed_dim", "leaky_slope"}, "model");
        get_if(m, "resolution", rc.resolution);
        if (m.contains("channels")) {
            auto ch = m.at("channels").get<std::vector<int>>();
            if (ch.size() != 4)
                throw ConfigError("model.channels must list exactly 4 values");
            std::array<int, 4> a;
            std::copy(ch.begin(), ch.end(), a.begin());
            rc.channels = a;
        }
        if (m.contains("embed_dim")) rc.embed_dim = m.at("embed_dim").get<int>();
        get_if(m, "leaky_slope", rc.leaky_slope);
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t,
                   {"learning_rate", "beta1", "beta2", "eps", "batch_size", "epochs", "seed",
                    "checkpoint_every", "redundancy_mode", "weights", "supervision_backbone_seed",
                    "supervision_backbone_path"},
                   "train");
        get_if(t, "learning_rate", rc.train.learning_rate);
        get_if(t, "beta1", rc.train.beta1);
        get_if(t, "beta2", rc.train.beta2);
        get_if(t, "eps", rc.train.eps);
        get_if(t, "batch_size", rc.batch_size);
        get_if(t, "epochs", rc.epochs);
        get_if(t, "seed", rc.seed);
        get_if(t, "checkpoint_every", rc.checkpoint_every);
        if (t.contains("redundancy_mode"))
            rc.train.redundancy_mode =
                redundancy_mode_from_string(t.at("redundancy_mode").get<std::string>());
        if (t.contains("weights")) {
            const json& w = t.at("weights");
            check_keys(w, {"id", "redun", "recon", "map", "gen", "cycle", "attr"},
                       "train.weights");
            get_if(w, "id", rc.train.weights.id);
            get_if(w, "redun", rc.train.weights.redun);
            get_if(w, "recon", rc.train.weights.recon);
            get_if(w, "map", rc.train.weights.map);
            get_if(w, "gen", rc.train.weights.gen);
            get_if(w, "cycle", rc.train.weights.cycle);
            get_if(w, "attr", rc.train.weights.attr);
        }
        get_if(t, "supervision_backbone_seed", rc.supervision_backbone_seed);
        if (t.contains("supervision_backbone_path"))
            rc.supervision_backbone_path = t.at("supervision_backbone_path").get<std::string>();
    }

    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d, {"manifest", "corpus_root", "test_fraction", "interval_seconds", "synthetic"},
                   "data");
        if (d.contains("manifest")) rc.manifest_path = d.at("manifest").get<std::string>();
        if (d.contains("corpus_root")) rc.corpus_root = d.at("corpus_root").get<std::string>();
        get_if(d, "test_fraction", rc.test_fraction);
        get_if(d, "interval_seconds", rc.interval_seconds);
        if (d.contains("synthetic")) {
            const json& s = d.at("synthetic");
            check_keys(s, {"n_identities", "frames_per_identity", "resolution", "blend_alpha",
                           "seed"},
                       "data.synthetic");
            get_if(s, "n_identities", rc.synthetic.n_identities);
            get_if(s, "frames_per_identity", rc.synthetic.frames_per_identity);
            get_if(s, "resolution", rc.synthetic.resolution);
            get_if(s, "blend_alpha", rc.synthetic.blend_alpha);
            get_if(s, "seed", rc.synthetic.seed);
        }
    }

    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e,
                   {"backbone_seed", "backbone_path", "backbone_dim", "grid_rows",
                    "dataset_label"},
                   "eval");
        get_if(e, "backbone_seed", rc.eval_backbone_seed);
        if (e.contains("backbone_path"))
            rc.eval_backbone_path = e.at("backbone_path").get<std::string>();
        get_if(e, "backbone_dim", rc.eval_backbone_dim);
        get_if(e, "grid_rows", rc.grid_rows);
        get_if(e, "dataset_label", rc.dataset_label);
    }

    if (rc.test_fraction < 0 || rc.test_fraction > 1)
        throw ConfigError("data.test_fraction must lie in [0, 1]");
    if (rc.epochs < 0) throw ConfigError("train.epochs must be non-negative");
    if (rc.batch_size < 1) throw ConfigError("train.batch_size must be positive");
    if (rc.grid_rows < 1) throw ConfigError("eval.grid_rows must be positive");
    rc.model_config(); // validates resolution/channels/embed_dim
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is)
        throw DataError("cannot open config: " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError("invalid JSON in config " + path.string() + ": " + e.what());
    }
    return parse_run_config(j);
}

json run_config_to_json(const RunConfig& rc) {
    ModelConfig mc = rc.model_config();
    json j;
    j["model"] = {{"resolution", mc.resolution},
                  {"channels", mc.channels},
                  {"embed_dim", mc.embed_dim},
                  {"leaky_slope", mc.leaky_slope}};
    j["train"] = {{"learning_rate", rc.train.learning_rate},
                  {"beta1", rc.train.beta1},
                  {"beta2", rc.train.beta2},
                  {"eps", rc.train.eps},
                  {"batch_size", rc.batch_size},
                  {"epochs", rc.epochs},
                  {"seed", rc.seed},
                  {"checkpoint_every", rc.checkpoint_every},
                  {"redundancy_mode",
                   rc.train.redundancy_mode == RedundancyMode::raw ? "raw" : "absolute"},
                  {"weights",
                   {{"id", rc.train.weights.id},
                    {"redun", rc.train.weights.redun},
                    {"recon", rc.train.weights.recon},
                    {"map", rc.train.weights.map},
                    {"gen", rc.train.weights.gen},
                    {"cycle", rc.train.weights.cycle},
                    {"attr", rc.train.weights.attr}}},
                  {"supervision_backbone_seed", rc.supervision_backbone_seed}};
    if (rc.supervision_backbone_path)
        j["train"]["supervision_backbone_path"] = *rc.supervision_backbone_path;
    j["data"] = {{"test_fraction", rc.test_fraction},
                 {"interval_seconds", rc.interval_seconds},
                 {"synthetic",
                  {{"n_identities", rc.synthetic.n_identities},
                   {"frames_per_identity", rc.synthetic.frames_per_identity},
                   {"resolution", rc.synthetic.resolution},
                   {"blend_alpha", rc.synthetic.blend_alpha},
                   {"seed", rc.synthetic.seed}}}};
    if (rc.manifest_path) j["data"]["manifest"] = *rc.manifest_path;
    if (rc.corpus_root) j["data"]["corpus_root"] = *rc.corpus_root;
    j["eval"] = {{"backbone_seed", rc.eval_backbone_seed},
                 {"backbone_dim", rc.eval_backbone_dim},
                 {"grid_rows", rc.grid_rows},
                 {"dataset_label", rc.dataset_label}};
    if (rc.eval_backbone_path) j["eval"]["backbone_path"] = *rc.eval_backbone_path;
    return j;
}

} // namespace facetrace
