#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "facetrace/nn.hpp"
#include "facetrace/tensor.hpp"

// Disentangling-reversing network. Two structurally identical encoders pull
// an identity code and an attribute code out of a face; a single shared
// decoder turns a fused (identity, attribute) representation back into a
// face. Feeding it (id(x), attr(x)) reconstructs x; feeding it
// (id(fake), attr(fake)) recovers an estimate of the original face hidden
// behind a swap, because the identity encoder is trained to map a fake back
// to its source identity.
//
// Encoders produce a 4-level feature pyramid at scales R/2, R/4, R/8, R/8
// plus a flat embedding (flattened deepest map through one FC). Only the
// pyramids feed the decoder; embeddings exist for the losses.

namespace facetrace {

struct ModelConfig {
    int resolution = 128;
    std::array<int, 4> channels = {64, 128, 256, 512};
    int embed_dim = 512;
    double leaky_slope = 0.2;

    static std::array<int, 4> default_channels(int resolution) {
        return resolution <= 32 ? std::array<int, 4>{16, 32, 64, 128}
                                : std::array<int, 4>{64, 128, 256, 512};
    }
    static int default_embed_dim(int resolution) { return resolution <= 32 ? 64 : 512; }

    // Spatial extent of pyramid level k; the two deepest levels share R/8.
    int scale(int k) const {
        static constexpr int div[4] = {2, 4, 8, 8};
        return resolution / div[k];
    }
    int deepest_hw() const { return resolution / 8; }
    int flat_dim() const { return channels[3] * deepest_hw() * deepest_hw(); }

    void validate() const {
        if (resolution < 16 || resolution % 8 != 0)
            throw ConfigError("model resolution must be a multiple of 8 and at least 16, got " +
                              std::to_string(resolution));
        for (int c : channels)
            if (c <= 0) throw ConfigError("model channels must be positive");
        if (embed_dim <= 0) throw ConfigError("embed_dim must be positive");
        if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
            throw ConfigError("leaky_slope must lie in (0, 1)");
    }
};

template <typename T>
struct FeaturePyramid {
    std::array<Tensor<T>, 4> maps; // maps[k]: (n, channels_k, scale_k, scale_k)
};

template <typename T>
struct EncoderParams {
    // Stage k: conv0 (stride 2 for k<3, stride 1 for k=3) + conv1 (stride 1),
    // LeakyReLU after each.
    std::array<nn::Conv2d<T>, 4> c0, c1;
    nn::Linear<T> head;

    EncoderParams() = default;
    explicit EncoderParams(const ModelConfig& cfg) {
        int in_c = 3;
        for (int k = 0; k < 4; ++k) {
            c0[k] = nn::Conv2d<T>(in_c, cfg.channels[k], k < 3 ? 2 : 1);
            c1[k] = nn::Conv2d<T>(cfg.channels[k], cfg.channels[k], 1);
            in_c = cfg.channels[k];
        }
        head = nn::Linear<T>(cfg.flat_dim(), cfg.embed_dim);
    }
};

template <typename T>
struct DecoderParams {
    nn::Conv2d<T> b0;                // resolution-preserving block at R/8
    std::array<nn::Conv2d<T>, 3> up; // doubling blocks, deepest first
    nn::Conv2d<T> out;               // projection to 3 channels at R, sigmoid

    DecoderParams() = default;
    // Every block keeps the doubled width of its fused input: the decoder
    // consumes identity-and-attribute pairs at each scale, so narrowing back
    // to single-encoder width would throw away half the step capacity the
    // optimizer gets per update. Only the final projection returns to 3.
    explicit DecoderParams(const ModelConfig& cfg) {
        const auto& c = cfg.channels;
        b0 = nn::Conv2d<T>(2 * c[3], 2 * c[3], 1);
        up[0] = nn::Conv2d<T>(2 * c[3] + 2 * c[2], 2 * c[2], 1);
        up[1] = nn::Conv2d<T>(2 * c[2] + 2 * c[1], 2 * c[1], 1);
        up[2] = nn::Conv2d<T>(2 * c[1] + 2 * c[0], 2 * c[0], 1);
        out = nn::Conv2d<T>(2 * c[0], 3, 1);
    }
};

template <typename T>
struct ModelParams {
    ModelConfig cfg;
    EncoderParams<T> enc_id;   // source-identity encoder, also embeds traced faces
    EncoderParams<T> enc_attr; // attribute encoder, shared across all paths
    DecoderParams<T> dec;      // shared decoder

    ModelParams() = default;
    explicit ModelParams(const ModelConfig& c)
        : cfg(c), enc_id(c), enc_attr(c), dec(c) {
        c.validate();
    }
};

// Flat named view over every weight tensor; the name set is the checkpoint
// schema and the optimizer state key space, so names must stay stable.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> named_tensors(ModelParams<T>& p) {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    auto enc = [&out](const std::string& prefix, EncoderParams<T>& e) {
        for (int k = 0; k < 4; ++k) {
            std::string s = prefix + ".s" + std::to_string(k);
            out.emplace_back(s + ".c0.w", &e.c0[k].w);
            out.emplace_back(s + ".c0.b", &e.c0[k].b);
            out.emplace_back(s + ".c1.w", &e.c1[k].w);
            out.emplace_back(s + ".c1.b", &e.c1[k].b);
        }
        out.emplace_back(prefix + ".head.w", &e.head.w);
        out.emplace_back(prefix + ".head.b", &e.head.b);
    };
    enc("enc_id", p.enc_id);
    enc("enc_attr", p.enc_attr);
    out.emplace_back("dec.b0.w", &p.dec.b0.w);
    out.emplace_back("dec.b0.b", &p.dec.b0.b);
    for (int j = 0; j < 3; ++j) {
        std::string s = "dec.up" + std::to_string(j + 1);
        out.emplace_back(s + ".w", &p.dec.up[j].w);
        out.emplace_back(s + ".b", &p.dec.up[j].b);
    }
    out.emplace_back("dec.out.w", &p.dec.out.w);
    out.emplace_back("dec.out.b", &p.dec.out.b);
    return out;
}

template <typename T>
int64_t param_count(ModelParams<T>& p) {
    int64_t n = 0;
    for (auto& [name, t] : named_tensors(p)) n += t->numel();
    return n;
}

template <typename T>
void zero_all(ModelParams<T>& p) {
    for (auto& [name, t] : named_tensors(p)) t->zero();
}

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& where) {
    for (int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(double(t[i])))
            throw NumericError("non-finite activation in " + where);
}

// Model-boundary input contract: (n, 3, R, R), every value finite in [0, 1].
template <typename T>
void check_face_batch(const Tensor<T>& x, const ModelConfig& cfg) {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != cfg.resolution || x.dim(3) != cfg.resolution)
        throw ConfigError("face batch must be (n, 3, " + std::to_string(cfg.resolution) + ", " +
                          std::to_string(cfg.resolution) + "), got " + x.shape_str());
    for (int64_t i = 0; i < x.numel(); ++i)
        if (!(x[i] >= T(0) && x[i] <= T(1)))
            throw ConfigError("face batch values must lie in [0, 1]");
}

// ---- encoder ----

template <typename T>
struct EncoderOut {
    FeaturePyramid<T> pyr;
    Tensor<T> embedding; // (n, embed_dim)
    Tensor<T> input;     // stage 0 input; stage k>0 reads pyr.maps[k-1]
    std::array<Tensor<T>, 4> stage_mid;

    const Tensor<T>& stage_in(int k) const { return k == 0 ? input : pyr.maps[k - 1]; }
};

template <typename T>
EncoderOut<T> encoder_forward(const EncoderParams<T>& e, const Tensor<T>& x,
                              const ModelConfig& cfg, const char* tag) {
    EncoderOut<T> o;
    o.input = x;
    T slope = T(cfg.leaky_slope);
    for (int k = 0; k < 4; ++k) {
        Tensor<T> mid = nn::conv_forward(e.c0[k], o.stage_in(k));
        nn::leaky_relu_inplace(mid, slope);
        Tensor<T> outk = nn::conv_forward(e.c1[k], mid);
        nn::leaky_relu_inplace(outk, slope);
        check_finite(outk, std::string(tag) + " stage " + std::to_string(k));
        o.stage_mid[k] = std::move(mid);
        o.pyr.maps[k] = std::move(outk);
    }
    Tensor<T> flat = nn::flatten2d(o.pyr.maps[3]);
    o.embedding = nn::linear_forward(e.head, flat);
    check_finite(o.embedding, std::string(tag) + " embedding head");
    return o;
}

// d_pyr and d_emb are optional upstream gradients; parameter gradients
// accumulate into g (same structure as the params). Returns d_input.
template <typename T>
Tensor<T> encoder_backward(const EncoderParams<T>& e, const EncoderOut<T>& o,
                           const FeaturePyramid<T>* d_pyr, const Tensor<T>* d_emb,
                           EncoderParams<T>& g, const ModelConfig& cfg) {
    T slope = T(cfg.leaky_slope);
    Tensor<T> d_deep(o.pyr.maps[3].dims());
    if (d_pyr) d_deep = d_pyr->maps[3];

    if (d_emb) {
        Tensor<T> flat = nn::flatten2d(o.pyr.maps[3]);
        Tensor<T> d_flat = nn::linear_backward(e.head, flat, *d_emb, g.head.w, g.head.b);
        Tensor<T> d_unflat = nn::unflatten4d(d_flat, o.pyr.maps[3].dims());
        for (int64_t i = 0; i < d_deep.numel(); ++i)
            d_deep[i] += d_unflat[i];
    }

    Tensor<T> d_out = std::move(d_deep);
    for (int k = 3; k >= 0; --k) {
        if (k < 3 && d_pyr)
            for (int64_t i = 0; i < d_out.numel(); ++i)
                d_out[i] += d_pyr->maps[k][i];
        Tensor<T> dz1 = nn::leaky_relu_backward(o.pyr.maps[k], d_out, slope);
        Tensor<T> d_mid = nn::conv_backward(e.c1[k], o.stage_mid[k], dz1, g.c1[k].w, g.c1[k].b);
        Tensor<T> dz0 = nn::leaky_relu_backward(o.stage_mid[k], d_mid, slope);
        d_out = nn::conv_backward(e.c0[k], o.stage_in(k), dz0, g.c0[k].w, g.c0[k].b);
    }
    return d_out;
}

// ---- fusion ----

// Channel concat per level, identity first. Pure rearrangement; levels must
// agree in batch and spatial extent.
template <typename T>
FeaturePyramid<T> fuse(const FeaturePyramid<T>& id_pyr, const FeaturePyramid<T>& attr_pyr) {
    FeaturePyramid<T> fused;
    for (int k = 0; k < 4; ++k) {
        const auto& a = id_pyr.maps[k];
        const auto& b = attr_pyr.maps[k];
        if (a.dims() != b.dims())
            throw ShapeError("fuse: level " + std::to_string(k) + " mismatch, identity " +
                             a.shape_str() + " vs attribute " + b.shape_str());
        fused.maps[k] = nn::concat_channels(a, b);
    }
    return fused;
}

template <typename T>
std::pair<FeaturePyramid<T>, FeaturePyramid<T>> split_fused(const FeaturePyramid<T>& d_fused) {
    std::pair<FeaturePyramid<T>, FeaturePyramid<T>> out;
    for (int k = 0; k < 4; ++k) {
        auto [da, db] = nn::split_channels(d_fused.maps[k], d_fused.maps[k].dim(1) / 2);
        out.first.maps[k] = std::move(da);
        out.second.maps[k] = std::move(db);
    }
    return out;
}

// ---- decoder ----

template <typename T>
struct DecodeOut {
    Tensor<T> y;                  // (n, 3, R, R), sigmoid range
    Tensor<T> h0, h1, h2, h3;     // post-activation block outputs
};

template <typename T>
void check_fused_level(const Tensor<T>& m, int k, int want_c, int want_hw) {
    if (m.empty())
        throw ShapeError("decode: fused level " + std::to_string(k) + " is missing");
    if (m.rank() != 4 || m.dim(1) != want_c || m.dim(2) != want_hw || m.dim(3) != want_hw)
        throw ShapeError("decode: fused level " + std::to_string(k) + " expected (n, " +
                         std::to_string(want_c) + ", " + std::to_string(want_hw) + ", " +
                         std::to_string(want_hw) + "), got " + m.shape_str());
}

template <typename T>
DecodeOut<T> decoder_forward(const DecoderParams<T>& d, const FeaturePyramid<T>& fused,
                             const ModelConfig& cfg) {
    for (int k = 0; k < 4; ++k)
        check_fused_level(fused.maps[k], k, 2 * cfg.channels[k], cfg.scale(k));

    T slope = T(cfg.leaky_slope);
    DecodeOut<T> o;

    o.h0 = nn::conv_forward(d.b0, fused.maps[3]);
    nn::leaky_relu_inplace(o.h0, slope);
    check_finite(o.h0, "decoder block b0");

    auto up_block = [&](const Tensor<T>& h, const Tensor<T>& skip, const nn::Conv2d<T>& conv,
                        const char* tag) {
        Tensor<T> cat = nn::concat_channels(h, skip);
        Tensor<T> u = nn::upsample2x_forward(cat);
        Tensor<T> y = nn::conv_forward(conv, u);
        nn::leaky_relu_inplace(y, slope);
        check_finite(y, tag);
        return y;
    };
    o.h1 = up_block(o.h0, fused.maps[2], d.up[0], "decoder block up1");
    o.h2 = up_block(o.h1, fused.maps[1], d.up[1], "decoder block up2");
    o.h3 = up_block(o.h2, fused.maps[0], d.up[2], "decoder block up3");

    o.y = nn::conv_forward(d.out, o.h3);
    nn::sigmoid_inplace(o.y);
    check_finite(o.y, "decoder output projection");
    return o;
}

template <typename T>
FeaturePyramid<T> decoder_backward(const DecoderParams<T>& d, const FeaturePyramid<T>& fused,
                                   const DecodeOut<T>& o, const Tensor<T>& dy,
                                   DecoderParams<T>& g, const ModelConfig& cfg) {
    T slope = T(cfg.leaky_slope);
    FeaturePyramid<T> d_fused;

    Tensor<T> dz = nn::sigmoid_backward(o.y, dy);
    Tensor<T> dh = nn::conv_backward(d.out, o.h3, dz, g.out.w, g.out.b);

    auto up_back = [&](const Tensor<T>& h_prev, const Tensor<T>& skip, const Tensor<T>& h,
                       const Tensor<T>& d_h, const nn::Conv2d<T>& conv, nn::Conv2d<T>& gc,
                       Tensor<T>& d_skip_out) {
        Tensor<T> dzj = nn::leaky_relu_backward(h, d_h, slope);
        Tensor<T> u = nn::upsample2x_forward(nn::concat_channels(h_prev, skip));
        Tensor<T> du = nn::conv_backward(conv, u, dzj, gc.w, gc.b);
        Tensor<T> dcat = nn::upsample2x_backward(du);
        auto [dh_prev, d_skip] = nn::split_channels(dcat, h_prev.dim(1));
        d_skip_out = std::move(d_skip);
        return dh_prev;
    };
    dh = up_back(o.h2, fused.maps[0], o.h3, dh, d.up[2], g.up[2], d_fused.maps[0]);
    dh = up_back(o.h1, fused.maps[1], o.h2, dh, d.up[1], g.up[1], d_fused.maps[1]);
    dh = up_back(o.h0, fused.maps[2], o.h1, dh, d.up[0], g.up[0], d_fused.maps[2]);

    Tensor<T> dz0 = nn::leaky_relu_backward(o.h0, dh, slope);
    d_fused.maps[3] = nn::conv_backward(d.b0, fused.maps[3], dz0, g.b0.w, g.b0.b);
    return d_fused;
}

// ---- composite paths ----

template <typename T>
struct ReconstructOut {
    Tensor<T> image;       // decoder(fuse(id(x), attr(x)))
    Tensor<T> f_id;        // identity embedding of x
    Tensor<T> f_attr;      // attribute embedding of x
};

template <typename T>
ReconstructOut<T> reconstruct(const ModelParams<T>& p, const Tensor<T>& x) {
    check_face_batch(x, p.cfg);
    auto id = encoder_forward(p.enc_id, x, p.cfg, "identity encoder");
    auto attr = encoder_forward(p.enc_attr, x, p.cfg, "attribute encoder");
    auto dec = decoder_forward(p.dec, fuse(id.pyr, attr.pyr), p.cfg);
    return {std::move(dec.y), std::move(id.embedding), std::move(attr.embedding)};
}

template <typename T>
struct TraceOut {
    Tensor<T> traced;      // estimated original face
    Tensor<T> f_gen_id;    // identity embedding extracted from the fake
    Tensor<T> f_fake_attr; // attribute embedding of the fake
    Tensor<T> f_traced_id; // identity embedding of the traced face (same encoder)
};

template <typename T>
TraceOut<T> trace(const ModelParams<T>& p, const Tensor<T>& fake) {
    check_face_batch(fake, p.cfg);
    auto id = encoder_forward(p.enc_id, fake, p.cfg, "identity encoder");
    auto attr = encoder_forward(p.enc_attr, fake, p.cfg, "attribute encoder");
    auto dec = decoder_forward(p.dec, fuse(id.pyr, attr.pyr), p.cfg);
    auto traced_id = encoder_forward(p.enc_id, dec.y, p.cfg, "identity encoder (traced)");
    return {std::move(dec.y), std::move(id.embedding), std::move(attr.embedding),
            std::move(traced_id.embedding)};
}

} // namespace facetrace
