#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "facetrace/checkpoint.hpp"
#include "facetrace/data.hpp"
#include "facetrace/identity.hpp"
#include "facetrace/losses.hpp"
#include "facetrace/model.hpp"
#include "facetrace/rng.hpp"

// Optimization: Adam over every model tensor, driven by the seven-part
// objective. One training step runs three encoder passes and two decoder
// passes (reconstruction of the original, tracing of the fake, re-encoding
// of the traced face); gradients from all of them accumulate into the same
// shared parameter set.
//
// Everything that draws randomness derives its stream from (seed, purpose,
// epoch), never from shared mutable generator state, so a run resumed from a
// checkpoint replays the exact step sequence of an uninterrupted run.

namespace facetrace {

struct TrainSettings {
    double learning_rate = 3e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
    LossWeights weights;
    RedundancyMode redundancy_mode = RedundancyMode::raw;
};

// ---- initialization ----

// Weight tensors are (out, fan_in) however the layer uses them, so fan-in is
// always dim 1. Streams are keyed by tensor name: initialization order never
// affects the values.
template <typename T>
void init_params(ModelParams<T>& p, uint64_t seed) {
    for (auto& [name, t] : named_tensors(p)) {
        if (name.ends_with(".w")) {
            auto rs = derive_stream(seed, "init." + name);
            nn::kaiming_fill(*t, t->dim(1), p.cfg.leaky_slope, rs);
        } else {
            t->zero();
        }
    }
}

// ---- optimizer ----

template <typename T>
class AdamState {
public:
    AdamState() = default;

    explicit AdamState(ModelParams<T>& p) : m_(p.cfg), v_(p.cfg) {
        zero_all(m_);
        zero_all(v_);
    }

    int64_t steps_taken() const { return t_; }
    ModelParams<T>& first_moment() { return m_; }
    ModelParams<T>& second_moment() { return v_; }
    void set_steps_taken(int64_t t) { t_ = t; }

    void step(ModelParams<T>& p, ModelParams<T>& g, const TrainSettings& s) {
        ++t_;
        double bc1 = 1.0 - std::pow(s.beta1, double(t_));
        double bc2 = 1.0 - std::pow(s.beta2, double(t_));
        auto pt = named_tensors(p);
        auto gt = named_tensors(g);
        auto mt = named_tensors(m_);
        auto vt = named_tensors(v_);
        for (size_t i = 0; i < pt.size(); ++i) {
            Tensor<T>& w = *pt[i].second;
            Tensor<T>& gw = *gt[i].second;
            Tensor<T>& m = *mt[i].second;
            Tensor<T>& v = *vt[i].second;
            for (int64_t j = 0; j < w.numel(); ++j) {
                double gj = double(gw[j]);
                double mj = s.beta1 * double(m[j]) + (1.0 - s.beta1) * gj;
                double vj = s.beta2 * double(v[j]) + (1.0 - s.beta2) * gj * gj;
                m[j] = T(mj);
                v[j] = T(vj);
                w[j] = T(double(w[j]) - s.learning_rate * (mj / bc1) /
                                            (std::sqrt(vj / bc2) + s.eps));
            }
        }
    }

private:
    int64_t t_ = 0;
    ModelParams<T> m_, v_;
};

// ---- forward/backward over the full objective ----

template <typename T>
struct ForwardState {
    EncoderOut<T> ori_id, ori_attr;   // passes over the original
    FeaturePyramid<T> fused_ori;
    DecodeOut<T> recon;
    EncoderOut<T> fake_id, fake_attr; // passes over the fake
    FeaturePyramid<T> fused_fake;
    DecodeOut<T> traced;
    EncoderOut<T> traced_id;          // identity pass over the traced face
};

template <typename T>
ForwardState<T> forward_all(const ModelParams<T>& p, const Tensor<T>& ori, const Tensor<T>& fake) {
    check_face_batch(ori, p.cfg);
    check_face_batch(fake, p.cfg);
    ForwardState<T> st;
    st.ori_id = encoder_forward(p.enc_id, ori, p.cfg, "identity encoder");
    st.ori_attr = encoder_forward(p.enc_attr, ori, p.cfg, "attribute encoder");
    st.fused_ori = fuse(st.ori_id.pyr, st.ori_attr.pyr);
    st.recon = decoder_forward(p.dec, st.fused_ori, p.cfg);
    st.fake_id = encoder_forward(p.enc_id, fake, p.cfg, "identity encoder");
    st.fake_attr = encoder_forward(p.enc_attr, fake, p.cfg, "attribute encoder");
    st.fused_fake = fuse(st.fake_id.pyr, st.fake_attr.pyr);
    st.traced = decoder_forward(p.dec, st.fused_fake, p.cfg);
    st.traced_id = encoder_forward(p.enc_id, st.traced.y, p.cfg, "identity encoder (traced)");
    return st;
}

// e_pre: frozen-backbone identity targets for the originals, (n, embed_dim).
template <typename T>
LossBreakdown losses_from(const ForwardState<T>& st, const Tensor<T>& ori, const Tensor<T>& e_pre,
                          const TrainSettings& s) {
    LossBreakdown parts;
    parts.id = loss_id(st.ori_id.embedding, e_pre);
    parts.redun = loss_redun(st.ori_id.embedding, st.ori_attr.embedding,
                             st.fake_id.embedding, st.fake_attr.embedding, s.redundancy_mode);
    parts.recon = loss_recon(ori, st.recon.y);
    parts.map = loss_map(st.ori_id.embedding, st.fake_id.embedding);
    parts.gen = loss_gen(ori, st.traced.y);
    parts.cycle = loss_cycle(st.ori_id.embedding, st.traced_id.embedding);
    parts.attr = loss_attr(st.ori_attr.embedding, st.fake_attr.embedding);
    return total_loss(parts, s.weights);
}

// Forward-only objective evaluation; the finite-difference harness drives
// this with perturbed parameters.
template <typename T>
LossBreakdown compute_losses(const ModelParams<T>& p, const Tensor<T>& ori, const Tensor<T>& fake,
                             const Tensor<T>& e_pre, const TrainSettings& s) {
    return losses_from(forward_all(p, ori, fake), ori, e_pre, s);
}

// Accumulates d(total)/d(params) into g. Backward order: traced-face
// identity pass, trace decode, fake encoders, reconstruction decode,
// original encoders; shared parameters collect contributions from every
// pass they appear in.
template <typename T>
void backward_all(const ModelParams<T>& p, const ForwardState<T>& st, const Tensor<T>& ori,
                  const Tensor<T>& e_pre, const TrainSettings& s, ModelParams<T>& g) {
    const auto& w = s.weights;
    Tensor<T> dA(st.ori_id.embedding.dims());
    Tensor<T> dB(st.ori_attr.embedding.dims());
    Tensor<T> dC(st.fake_id.embedding.dims());
    Tensor<T> dE(st.fake_attr.embedding.dims());
    Tensor<T> dG(st.traced_id.embedding.dims());

    l1_mean_grad<T>(st.ori_id.embedding, e_pre, w.id, &dA, nullptr);
    cosine_mean_grad(st.ori_id.embedding, st.ori_attr.embedding, s.redundancy_mode, w.redun,
                     &dA, &dB, "loss_redun");
    cosine_mean_grad(st.fake_id.embedding, st.fake_attr.embedding, s.redundancy_mode, w.redun,
                     &dC, &dE, "loss_redun");
    l1_mean_grad(st.ori_id.embedding, st.fake_id.embedding, w.map, &dA, &dC);
    l1_mean_grad(st.ori_id.embedding, st.traced_id.embedding, w.cycle, &dA, &dG);
    l1_mean_grad(st.ori_attr.embedding, st.fake_attr.embedding, w.attr, &dB, &dE);

    Tensor<T> d_recon(st.recon.y.dims());
    sq_mean_grad<T>(ori, st.recon.y, w.recon, nullptr, &d_recon);
    Tensor<T> d_traced(st.traced.y.dims());
    sq_mean_grad<T>(ori, st.traced.y, w.gen, nullptr, &d_traced);

    // Traced-face identity pass feeds back into the traced image.
    Tensor<T> d_traced_in =
        encoder_backward<T>(p.enc_id, st.traced_id, nullptr, &dG, g.enc_id, p.cfg);
    for (int64_t i = 0; i < d_traced.numel(); ++i)
        d_traced[i] += d_traced_in[i];

    FeaturePyramid<T> d_fused_fake =
        decoder_backward(p.dec, st.fused_fake, st.traced, d_traced, g.dec, p.cfg);
    auto [d_pyr_c, d_pyr_e] = split_fused(d_fused_fake);
    encoder_backward(p.enc_id, st.fake_id, &d_pyr_c, &dC, g.enc_id, p.cfg);
    encoder_backward(p.enc_attr, st.fake_attr, &d_pyr_e, &dE, g.enc_attr, p.cfg);

    FeaturePyramid<T> d_fused_ori =
        decoder_backward(p.dec, st.fused_ori, st.recon, d_recon, g.dec, p.cfg);
    auto [d_pyr_a, d_pyr_b] = split_fused(d_fused_ori);
    encoder_backward(p.enc_id, st.ori_id, &d_pyr_a, &dA, g.enc_id, p.cfg);
    encoder_backward(p.enc_attr, st.ori_attr, &d_pyr_b, &dB, g.enc_attr, p.cfg);
}

// One optimization step over one batch. Faults (NumericError) before any
// parameter update if a loss term is non-finite.
template <typename T>
LossBreakdown train_step(ModelParams<T>& p, AdamState<T>& opt, const Tensor<T>& ori,
                         const Tensor<T>& fake, const Tensor<T>& e_pre,
                         const TrainSettings& s) {
    ForwardState<T> st = forward_all(p, ori, fake);
    LossBreakdown bd = losses_from(st, ori, e_pre, s);
    ModelParams<T> g(p.cfg);
    zero_all(g);
    backward_all(p, st, ori, e_pre, s, g);
    opt.step(p, g, s);
    return bd;
}

// ---- gradient verification ----

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0;
    int64_t n_checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double max_rel_err = 0;
    int64_t n_checked = 0;
};

struct GradCheckOptions {
    double step = 1e-4;
    int64_t max_coords_per_group = -1; // -1: every coordinate
    uint64_t seed = 0;                 // subsampling stream when limited
};

// Central-difference check of backward_all against compute_losses, per
// parameter tensor. Relative error uses max(|analytic|, |numeric|, 1e-8)
// as denominator so a zero-gradient coordinate with O(1e-12) difference
// noise does not read as 100% error.
template <typename T>
GradCheckReport grad_check(ModelParams<T>& p, const Tensor<T>& ori, const Tensor<T>& fake,
                           const Tensor<T>& e_pre, const TrainSettings& s,
                           const GradCheckOptions& opt = {}) {
    ModelParams<T> g(p.cfg);
    zero_all(g);
    ForwardState<T> st = forward_all(p, ori, fake);
    losses_from(st, ori, e_pre, s);
    backward_all(p, st, ori, e_pre, s, g);

    GradCheckReport report;
    auto pt = named_tensors(p);
    auto gt = named_tensors(g);
    for (size_t ti = 0; ti < pt.size(); ++ti) {
        Tensor<T>& w = *pt[ti].second;
        Tensor<T>& gw = *gt[ti].second;
        GradCheckGroup group;
        group.name = pt[ti].first;

        std::vector<int64_t> coords;
        if (opt.max_coords_per_group < 0 || opt.max_coords_per_group >= w.numel()) {
            coords.resize(size_t(w.numel()));
            for (int64_t i = 0; i < w.numel(); ++i) coords[size_t(i)] = i;
        } else {
            auto rs = derive_stream(opt.seed, "grad_check." + group.name);
            for (int64_t i = 0; i < opt.max_coords_per_group; ++i)
                coords.push_back(int64_t(rs.below(uint64_t(w.numel()))));
        }

        for (int64_t j : coords) {
            T keep = w[j];
            w[j] = T(double(keep) + opt.step);
            double up = compute_losses(p, ori, fake, e_pre, s).total;
            w[j] = T(double(keep) - opt.step);
            double down = compute_losses(p, ori, fake, e_pre, s).total;
            w[j] = keep;
            double numeric = (up - down) / (2.0 * opt.step);
            double analytic = double(gw[j]);
            double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            double rel = std::abs(analytic - numeric) / denom;
            group.max_rel_err = std::max(group.max_rel_err, rel);
            ++group.n_checked;
        }
        report.max_rel_err = std::max(report.max_rel_err, group.max_rel_err);
        report.n_checked += group.n_checked;
        report.groups.push_back(std::move(group));
    }
    return report;
}

// ---- full training loop ----

struct StepRecord {
    int64_t step = 0;
    int epoch = 0;
    LossBreakdown losses;
};

struct EpochRecord {
    int epoch = 0;
    int n_steps = 0;
    double mean_total = 0;
    double wall_seconds = 0;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
};

struct FitOptions {
    int batch_size = 32;
    int epochs = 200;
    int checkpoint_every = 0; // epochs between periodic checkpoints; 0 = final only
    uint64_t seed = 42;
    TrainSettings settings;
    BackboneSpec supervision_spec;
    uint64_t supervision_seed = 101;
    std::optional<std::filesystem::path> supervision_path; // external weights
    std::optional<std::filesystem::path> checkpoint_dir;
    // Called after each epoch; returning true stops training early.
    std::function<bool(int epoch, ModelParams<float>&, const TrainLog&)> after_epoch;
    std::function<void(const StepRecord&)> on_step;
};

struct FitResult {
    ModelParams<float> params;
    TrainLog log;
    int64_t final_step = 0;
    int epochs_run = 0;
};

inline nlohmann::json train_settings_to_json(const TrainSettings& s) {
    return {{"learning_rate", s.learning_rate},
            {"beta1", s.beta1},
            {"beta2", s.beta2},
            {"eps", s.eps},
            {"redundancy_mode", s.redundancy_mode == RedundancyMode::raw ? "raw" : "absolute"},
            {"weights",
             {{"id", s.weights.id},
              {"redun", s.weights.redun},
              {"recon", s.weights.recon},
              {"map", s.weights.map},
              {"gen", s.weights.gen},
              {"cycle", s.weights.cycle},
              {"attr", s.weights.attr}}}};
}

inline Checkpoint make_train_checkpoint(ModelParams<float>& p, AdamState<float>& opt,
                                        int epochs_done, int64_t step, const FitOptions& o) {
    Checkpoint ck;
    ck.meta = {{"kind", "train"},
               {"epoch", epochs_done},
               {"step", step},
               {"seed", o.seed},
               {"batch_size", o.batch_size},
               {"epochs", o.epochs},
               {"model", model_config_to_json(p.cfg)},
               {"settings", train_settings_to_json(o.settings)}};
    pack_tensors(ck, "", named_tensors(p));
    pack_tensors(ck, "opt.m", named_tensors(opt.first_moment()));
    pack_tensors(ck, "opt.v", named_tensors(opt.second_moment()));
    return ck;
}

inline void restore_train_checkpoint(const Checkpoint& ck, ModelParams<float>& p,
                                     AdamState<float>& opt, int& epochs_done, int64_t& step) {
    if (ck.kind() != "train")
        throw DataError("cannot resume from a checkpoint of kind '" + ck.kind() + "'");
    unpack_tensors(ck, "", named_tensors(p));
    unpack_tensors(ck, "opt.m", named_tensors(opt.first_moment()));
    unpack_tensors(ck, "opt.v", named_tensors(opt.second_moment()));
    epochs_done = ck.meta.at("epoch").get<int>();
    step = ck.meta.at("step").get<int64_t>();
    opt.set_steps_taken(step);
}

// Trains on the manifest's train split. The whole split is preloaded and the
// frozen supervision embeddings are computed once up front; this is sized
// for bench-scale corpora, not for millions of frames.
inline FitResult fit(const ModelConfig& model_cfg, const Manifest& manifest, const FitOptions& o,
                     std::optional<Checkpoint> resume = std::nullopt) {
    model_cfg.validate();
    if (o.batch_size < 1) throw ConfigError("batch_size must be positive");
    if (o.epochs < 0) throw ConfigError("epochs must be non-negative");
    if (o.supervision_spec.output_dim != model_cfg.embed_dim)
        throw ConfigError("supervision backbone output_dim " +
                          std::to_string(o.supervision_spec.output_dim) +
                          " must equal model embed_dim " + std::to_string(model_cfg.embed_dim));

    std::vector<int> train_idx = manifest.indices(Split::train);
    if (train_idx.empty())
        throw ConfigError("manifest has no train records");

    IdentityBackbone sup =
        o.supervision_path ? load_backbone(*o.supervision_path, o.supervision_spec)
                           : IdentityBackbone(o.supervision_spec, o.supervision_seed);

    Batch all = load_batch(manifest, train_idx, model_cfg.resolution);
    int n = int(train_idx.size());
    std::vector<Tensor<float>> sup_targets(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        sup_targets[size_t(i)] = embed(sup, all.original[size_t(i)]);

    FitResult res{ModelParams<float>(model_cfg), {}, 0, 0};
    AdamState<float> opt(res.params);
    int epochs_done = 0;
    int64_t step = 0;
    if (resume) {
        ModelConfig ck_cfg = model_config_from_json(resume->meta.at("model"));
        if (ck_cfg.resolution != model_cfg.resolution || ck_cfg.channels != model_cfg.channels ||
            ck_cfg.embed_dim != model_cfg.embed_dim)
            throw ConfigError("checkpoint model configuration does not match the run configuration");
        restore_train_checkpoint(*resume, res.params, opt, epochs_done, step);
    } else {
        init_params(res.params, o.seed);
    }

    auto save_ck = [&](const std::string& name) {
        if (!o.checkpoint_dir) return;
        Checkpoint ck = make_train_checkpoint(res.params, opt, epochs_done, step, o);
        save_checkpoint(ck, *o.checkpoint_dir / name);
    };

    for (int epoch = epochs_done; epoch < o.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        std::vector<int> order(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) order[size_t(i)] = i;
        auto rs = derive_stream(o.seed, "shuffle", uint64_t(epoch));
        rs.shuffle(order);

        double total_sum = 0;
        int steps_this_epoch = 0;
        for (int at = 0; at < n; at += o.batch_size) {
            int bs = std::min(o.batch_size, n - at);
            Tensor<float> ori({bs, 3, model_cfg.resolution, model_cfg.resolution});
            Tensor<float> fake(ori.dims());
            Tensor<float> e_pre({bs, model_cfg.embed_dim});
            for (int b = 0; b < bs; ++b) {
                int src = order[size_t(at + b)];
                image_to_chw(all.original[size_t(src)], ori, b);
                image_to_chw(all.fake[size_t(src)], fake, b);
                const Tensor<float>& t = sup_targets[size_t(src)];
                for (int j = 0; j < model_cfg.embed_dim; ++j)
                    e_pre.at(b, j) = t[j];
            }
            LossBreakdown bd = train_step(res.params, opt, ori, fake, e_pre, o.settings);
            ++step;
            ++steps_this_epoch;
            total_sum += bd.total;
            StepRecord sr{step, epoch, bd};
            if (o.on_step) o.on_step(sr);
            res.log.steps.push_back(sr);
        }

        epochs_done = epoch + 1;
        double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.log.epochs.push_back(
            {epoch, steps_this_epoch, total_sum / std::max(1, steps_this_epoch), wall});

        if (o.checkpoint_every > 0 && epochs_done % o.checkpoint_every == 0 &&
            epochs_done < o.epochs) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "ckpt_epoch%04d.ftck", epochs_done);
            save_ck(buf);
        }
        if (o.after_epoch && o.after_epoch(epochs_done, res.params, res.log))
            break;
    }

    res.final_step = step;
    res.epochs_run = epochs_done;
    save_ck("ckpt_final.ftck");
    return res;
}

} // namespace facetrace
