// Command-line front end: synthesize a corpus, prepare a manifest from raw
// frame directories, train, trace single fakes, evaluate a checkpoint.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 data or I/O error,
// 4 numeric fault during computation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "facetrace/checkpoint.hpp"
#include "facetrace/config.hpp"
#include "facetrace/data.hpp"
#include "facetrace/errors.hpp"
#include "facetrace/metrics.hpp"
#include "facetrace/model.hpp"
#include "facetrace/training.hpp"

namespace fs = std::filesystem;
using namespace facetrace;

namespace {

RunConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return load_run_config(path);
}

// Either a backbone loaded from the configured path or the seeded built-in.
// A configured path that does not exist falls back with a warning; a file
// that exists but cannot be parsed is an error.
IdentityBackbone resolve_backbone(const std::optional<std::string>& path, const BackboneSpec& spec,
                                  uint64_t seed, const char* role) {
    if (path && !path->empty()) {
        if (fs::exists(*path))
            return load_backbone(*path, spec);
        std::fprintf(stderr, "warning: %s backbone weights '%s' not found, using built-in\n",
                     role, path->c_str());
    }
    return IdentityBackbone(spec, seed);
}

ModelParams<float> load_model_params(const std::string& ckpt_path) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    if (ck.kind() != "train" && ck.kind() != "model")
        throw ConfigError("checkpoint '" + ckpt_path + "' has kind '" + ck.kind() +
                          "', expected a model or training checkpoint");
    return model_from_checkpoint(ck);
}

Image trace_image(const ModelParams<float>& params, const Image& fake) {
    int r = params.cfg.resolution;
    Image in = resize_bilinear(fake, r, r);
    Tensor<float> x({1, 3, r, r});
    image_to_chw(in, x, 0);
    for (int64_t i = 0; i < x.numel(); ++i)
        x[i] = std::clamp(x[i], 0.f, 1.f);
    TraceOut<float> out = trace(params, x);
    return chw_to_image(out.traced, 0);
}

// ---- synth ----

int cmd_synth(const std::string& config_path, std::string out_dir, std::optional<uint64_t> seed,
              std::optional<int> identities, std::optional<int> frames,
              std::optional<int> resolution, std::optional<double> blend,
              std::optional<double> test_fraction) {
    RunConfig rc = load_config_or_default(config_path);
    SyntheticSpec spec = rc.synthetic;
    if (seed) spec.seed = *seed;
    if (identities) spec.n_identities = *identities;
    if (frames) spec.frames_per_identity = *frames;
    if (resolution) spec.resolution = *resolution;
    if (blend) spec.blend_alpha = *blend;
    double tf = test_fraction ? *test_fraction : rc.test_fraction;

    if (out_dir.empty())
        out_dir = (default_cache_dir() / ("synth_seed" + std::to_string(spec.seed))).string();

    Manifest m = generate_synthetic(spec, out_dir, tf);
    int n_test = int(m.indices(Split::test).size());
    std::printf("synthetic corpus: %d pairs (%d train, %d test), %d identities\n",
                int(m.records.size()), int(m.records.size()) - n_test, n_test,
                spec.n_identities);
    std::printf("manifest: %s\n", (fs::path(out_dir) / "manifest.jsonl").string().c_str());
    return 0;
}

// ---- prepare ----

int cmd_prepare(const std::string& root, std::string out_path, double interval,
                double test_fraction, uint64_t seed) {
    if (out_path.empty()) out_path = (fs::path(root) / "manifest.jsonl").string();
    PrepareReport rep;
    Manifest m = build_manifest(root, interval, test_fraction, seed, &rep);
    for (const auto& e : rep.record_errors)
        std::fprintf(stderr, "warning: %s\n", e.c_str());
    if (rep.skipped_orphans)
        std::fprintf(stderr, "warning: skipped %d fake video(s) with no matching original\n",
                     rep.skipped_orphans);
    save_manifest(m, out_path);
    std::printf("manifest: %s (%d pairs, %d skipped, %d malformed)\n", out_path.c_str(),
                rep.n_pairs, rep.skipped_orphans, int(rep.record_errors.size()));
    return 0;
}

// ---- train ----

int cmd_train(const std::string& config_path, const std::string& manifest_flag,
              std::optional<uint64_t> seed, std::optional<int> epochs,
              std::optional<int> resolution, const std::string& resume_path,
              std::string out_dir, const std::string& redundancy_mode,
              std::optional<double> attr_weight) {
    RunConfig rc = load_config_or_default(config_path);
    if (seed) rc.seed = *seed;
    if (epochs) rc.epochs = *epochs;
    if (resolution) rc.resolution = *resolution;
    if (!redundancy_mode.empty())
        rc.train.redundancy_mode = redundancy_mode_from_string(redundancy_mode);
    if (attr_weight) rc.train.weights.attr = *attr_weight;

    std::string manifest_path = !manifest_flag.empty()
                                    ? manifest_flag
                                    : rc.manifest_path.value_or("");
    if (manifest_path.empty())
        throw ConfigError("no manifest given: pass --manifest or set data.manifest in the config");
    Manifest manifest = load_manifest(manifest_path);

    if (out_dir.empty()) out_dir = "facetrace_run";
    fs::create_directories(out_dir);

    ModelConfig mc = rc.model_config();
    {
        std::ofstream os(fs::path(out_dir) / "resolved_config.json", std::ios::trunc);
        os << run_config_to_json(rc).dump(2) << '\n';
        if (!os.flush())
            throw DataError("cannot write resolved config under " + out_dir);
    }

    std::optional<Checkpoint> resume;
    if (!resume_path.empty())
        resume = load_checkpoint(resume_path);

    FitOptions opt;
    opt.batch_size = rc.batch_size;
    opt.epochs = rc.epochs;
    opt.checkpoint_every = rc.checkpoint_every;
    opt.seed = rc.seed;
    opt.settings = rc.train;
    opt.supervision_spec = rc.supervision_spec();
    opt.supervision_seed = rc.supervision_backbone_seed;
    if (rc.supervision_backbone_path && fs::exists(*rc.supervision_backbone_path))
        opt.supervision_path = *rc.supervision_backbone_path;
    else if (rc.supervision_backbone_path)
        std::fprintf(stderr,
                     "warning: supervision backbone weights '%s' not found, using built-in\n",
                     rc.supervision_backbone_path->c_str());
    opt.checkpoint_dir = fs::path(out_dir);

    std::ofstream log(fs::path(out_dir) / "train_log.jsonl",
                      resume ? std::ios::app : std::ios::trunc);
    if (!log)
        throw DataError("cannot write train log under " + out_dir);
    opt.on_step = [&log](const StepRecord& r) {
        nlohmann::json j{{"type", "step"},     {"step", r.step},
                         {"epoch", r.epoch},   {"id", r.losses.id},
                         {"redun", r.losses.redun}, {"recon", r.losses.recon},
                         {"map", r.losses.map},     {"gen", r.losses.gen},
                         {"cycle", r.losses.cycle}, {"attr", r.losses.attr},
                         {"total", r.losses.total}};
        log << j.dump() << '\n';
    };
    opt.after_epoch = [&log](int epoch, ModelParams<float>&, const TrainLog& tl) {
        const EpochRecord& e = tl.epochs.back();
        nlohmann::json j{{"type", "epoch"},
                         {"epoch", e.epoch},
                         {"steps", e.n_steps},
                         {"mean_total", e.mean_total},
                         {"wall_seconds", e.wall_seconds}};
        log << j.dump() << '\n';
        log.flush();
        std::printf("epoch %d: mean loss %.6f (%d steps, %.1fs)\n", epoch, e.mean_total,
                    e.n_steps, e.wall_seconds);
        return false;
    };

    FitResult res = fit(mc, manifest, opt, std::move(resume));

    Checkpoint model_ck;
    model_ck.meta = {{"kind", "model"}, {"model", model_config_to_json(mc)}};
    pack_tensors(model_ck, "", named_tensors(res.params));
    save_checkpoint(model_ck, fs::path(out_dir) / "model.ftck");

    std::printf("trained %d epochs (%lld steps); model: %s\n", res.epochs_run,
                (long long)res.final_step, (fs::path(out_dir) / "model.ftck").string().c_str());
    return 0;
}

// ---- trace ----

int cmd_trace(const std::string& ckpt_path, const std::string& input, std::string output) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    if (ck.kind() == "identity_oracle")
        throw ConfigError("the identity-oracle fixture carries no weights and cannot trace");
    ModelParams<float> params = model_from_checkpoint(ck);

    std::vector<fs::path> inputs;
    if (fs::is_directory(input)) {
        for (const auto& e : fs::directory_iterator(input))
            if (e.is_regular_file() && e.path().extension() == ".png")
                inputs.push_back(e.path());
        std::sort(inputs.begin(), inputs.end());
        if (inputs.empty())
            throw DataError("no PNG files in " + input);
        if (output.empty()) output = input;
        fs::create_directories(output);
    } else {
        if (!fs::exists(input))
            throw DataError("input not found: " + input);
        inputs.push_back(input);
    }

    for (const auto& in_path : inputs) {
        Image fake = load_png(in_path);
        Image traced = trace_image(params, fake);
        fs::path out_path;
        if (fs::is_directory(output))
            out_path = fs::path(output) / (in_path.stem().string() + "_traced.png");
        else
            out_path = output.empty()
                           ? in_path.parent_path() / (in_path.stem().string() + "_traced.png")
                           : fs::path(output);
        save_png(traced, out_path);
        std::printf("%s -> %s\n", in_path.string().c_str(), out_path.string().c_str());
    }
    return 0;
}

// ---- eval ----

int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::string& manifest_flag, std::string out_dir,
             const std::string& grid_path) {
    RunConfig rc = load_config_or_default(config_path);
    std::string manifest_path = !manifest_flag.empty()
                                    ? manifest_flag
                                    : rc.manifest_path.value_or("");
    if (manifest_path.empty())
        throw ConfigError("no manifest given: pass --manifest or set data.manifest in the config");
    Manifest manifest = load_manifest(manifest_path);

    Checkpoint ck = load_checkpoint(ckpt_path);
    IdentityBackbone eval_bb =
        resolve_backbone(rc.eval_backbone_path, rc.eval_spec(), rc.eval_backbone_seed, "eval");

    int resolution;
    TraceFn tracer;
    std::optional<ModelParams<float>> params;
    if (ck.kind() == "identity_oracle") {
        // Fixture: score the metrics pipeline against a perfect tracer.
        resolution = rc.resolution;
        tracer = [&manifest, resolution](const PairRecord& r, const Image&) {
            Image ori = load_png(manifest.base_dir / r.original_path);
            return resize_bilinear(ori, resolution, resolution);
        };
    } else {
        params = model_from_checkpoint(ck);
        resolution = params->cfg.resolution;
        tracer = [&params](const PairRecord&, const Image& fake) {
            return trace_image(*params, fake);
        };
    }

    EvalReport rep = evaluate(tracer, manifest, Split::test, resolution, eval_bb,
                              rc.dataset_label);

    if (out_dir.empty()) out_dir = "facetrace_eval";
    fs::create_directories(out_dir);
    write_report_jsonl(rep, fs::path(out_dir) / "eval_report.jsonl");
    std::string table = format_summary_table({rep});
    {
        std::ofstream os(fs::path(out_dir) / "eval_summary.txt", std::ios::trunc);
        os << table;
    }
    std::fputs(table.c_str(), stdout);
    std::printf("baseline fake-vs-original similarity: %.2f%%\n", rep.mean_fake_similarity);

    if (!grid_path.empty()) {
        std::vector<GridSample> samples;
        auto test_idx = manifest.indices(Split::test);
        int rows = std::min<int>(rc.grid_rows, int(test_idx.size()));
        for (int i = 0; i < rows; ++i) {
            Batch one = load_batch(manifest, {test_idx[size_t(i)]}, resolution);
            GridSample s;
            s.fake = one.fake[0];
            s.original = one.original[0];
            s.traced = tracer(manifest.records[size_t(test_idx[size_t(i)])], s.fake);
            samples.push_back(std::move(s));
        }
        save_png(render_grid(samples), grid_path);
        std::printf("grid: %s\n", grid_path.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"deepfake face tracing: disentangle identity from attributes and reverse a swap"};
    app.require_subcommand(1);

    std::string config_path, manifest_flag, out_dir, input, output, root;
    std::string resume_path, redundancy_mode, grid_path, ckpt_path;
    std::optional<uint64_t> seed;
    std::optional<int> epochs, resolution, identities, frames;
    std::optional<double> blend, test_fraction, attr_weight;
    double interval = 1.0, prep_tf = 0.1;
    uint64_t prep_seed = 42;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic paired corpus");
    synth->add_option("--config", config_path, "run configuration JSON");
    synth->add_option("--output", out_dir, "corpus directory (default: cache dir)");
    synth->add_option("--seed", seed, "generator seed");
    synth->add_option("--identities", identities, "number of identities");
    synth->add_option("--frames", frames, "frames per identity");
    synth->add_option("--resolution", resolution, "frame resolution");
    synth->add_option("--blend-alpha", blend, "fraction of the original kept in a fake");
    synth->add_option("--test-fraction", test_fraction, "held-out fraction");

    CLI::App* prepare = app.add_subcommand("prepare", "build a manifest from frame directories");
    prepare->add_option("--root", root, "corpus root with originals/ and fakes/")->required();
    prepare->add_option("--output", output, "manifest path (default: <root>/manifest.jsonl)");
    prepare->add_option("--interval", interval, "sampling interval in seconds");
    prepare->add_option("--test-fraction", prep_tf, "held-out fraction");
    prepare->add_option("--seed", prep_seed, "split seed");

    CLI::App* train = app.add_subcommand("train", "train the disentangling network");
    train->add_option("--config", config_path, "run configuration JSON");
    train->add_option("--manifest", manifest_flag, "manifest path (overrides config)");
    train->add_option("--seed", seed, "training seed");
    train->add_option("--epochs", epochs, "number of epochs");
    train->add_option("--resolution", resolution, "model resolution");
    train->add_option("--checkpoint", resume_path, "resume from a training checkpoint");
    train->add_option("--output", out_dir, "run directory (default: facetrace_run)");
    train->add_option("--redundancy-mode", redundancy_mode, "raw|absolute");
    train->add_option("--attr-loss-weight", attr_weight, "weight of the attribute term");

    CLI::App* trace_cmd = app.add_subcommand("trace", "reverse fakes to their original faces");
    trace_cmd->add_option("--checkpoint", ckpt_path, "model or training checkpoint")->required();
    trace_cmd->add_option("--input", input, "fake PNG or directory of PNGs")->required();
    trace_cmd->add_option("--output", output, "output PNG or directory");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval_cmd->add_option("--config", config_path, "run configuration JSON");
    eval_cmd->add_option("--checkpoint", ckpt_path, "model or training checkpoint")->required();
    eval_cmd->add_option("--manifest", manifest_flag, "manifest path (overrides config)");
    eval_cmd->add_option("--output", out_dir, "report directory (default: facetrace_eval)");
    eval_cmd->add_option("--grid", grid_path, "write a fake|original|traced|mask grid PNG");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed())
            return cmd_synth(config_path, out_dir, seed, identities, frames, resolution, blend,
                             test_fraction);
        if (prepare->parsed())
            return cmd_prepare(root, output, interval, prep_tf, prep_seed);
        if (train->parsed())
            return cmd_train(config_path, manifest_flag, seed, epochs, resolution, resume_path,
                             out_dir, redundancy_mode, attr_weight);
        if (trace_cmd->parsed())
            return cmd_trace(ckpt_path, input, output);
        if (eval_cmd->parsed())
            return cmd_eval(config_path, ckpt_path, manifest_flag, out_dir, grid_path);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric fault: %s\n", e.what());
        return 4;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
