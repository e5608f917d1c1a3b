#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "facetrace/image.hpp"
#include "facetrace/nn.hpp"
#include "facetrace/tensor.hpp"

// Frozen identity embedder. Two roles, two instances: one provides the
// supervision target the identity encoder is trained to match, the other
// scores facial similarity at evaluation time. They must not share weights,
// otherwise the evaluation would grade the model with its own teacher, so
// the built-in instances are seeded differently.
//
// The built-in backbone is a small fixed convnet: per-channel mean removal,
// three stride-2 convolutions with LeakyReLU, then a linear projection of
// the flattened coarse feature map. Mean removal keeps the otherwise
// dominant DC response of every random filter out of the embedding, and the
// whole stack is positively homogeneous after it, so a global brightness
// rescale leaves the cosine unchanged. The deepest map is kept at its
// coarse spatial layout rather than pooled away: where color and structure
// sit is what separates one subject from another, while the stride-8
// granularity absorbs the corpus's small pose/translation jitter. Weights
// come from an external file when one is supplied; nothing here is ever
// trained.

namespace facetrace {

struct BackboneSpec {
    int input_resolution = 32;
    int output_dim = 64;
    bool normalize_output = false;

    void validate() const {
        if (input_resolution < 8 || input_resolution % 8 != 0)
            throw ConfigError("backbone input_resolution must be a multiple of 8, got " +
                              std::to_string(input_resolution));
        if (output_dim <= 0)
            throw ConfigError("backbone output_dim must be positive");
    }
};

struct IdentityBackbone {
    BackboneSpec spec;
    nn::Conv2d<float> c0, c1, c2; // 3->16->32->64, all stride 2
    nn::Linear<float> head;       // 64*(R/8)^2 -> output_dim, R input resolution

    IdentityBackbone() = default;

    IdentityBackbone(const BackboneSpec& s, uint64_t seed) : spec(s) {
        spec.validate();
        c0 = nn::Conv2d<float>(3, 16, 2);
        c1 = nn::Conv2d<float>(16, 32, 2);
        c2 = nn::Conv2d<float>(32, 64, 2);
        int cell = s.input_resolution / 8;
        int64_t flat = 64 * int64_t(cell) * cell;
        head = nn::Linear<float>(int(flat), s.output_dim);
        auto init = [&](Tensor<float>& w, int64_t fan_in, const char* label) {
            auto rs = derive_stream(seed, std::string("backbone.") + label);
            nn::kaiming_fill(w, fan_in, 0.2, rs);
        };
        init(c0.w, 3 * 9, "c0");
        init(c1.w, 16 * 9, "c1");
        init(c2.w, 32 * 9, "c2");
        init(head.w, flat, "head");
    }

    std::vector<std::pair<std::string, Tensor<float>*>> tensors() {
        return {{"c0.w", &c0.w}, {"c0.b", &c0.b}, {"c1.w", &c1.w}, {"c1.b", &c1.b},
                {"c2.w", &c2.w}, {"c2.b", &c2.b}, {"head.w", &head.w}, {"head.b", &head.b}};
    }
};

// Embedding of one face image. Inputs at a different resolution are resized
// to the backbone's expected input first.
inline Tensor<float> embed(const IdentityBackbone& bb, const Image& face) {
    Image in = resize_bilinear(face, bb.spec.input_resolution, bb.spec.input_resolution);
    Tensor<float> x({1, 3, in.height, in.width});
    image_to_chw(in, x, 0);

    int64_t hw = int64_t(in.height) * in.width;
    for (int c = 0; c < 3; ++c) {
        double m = 0;
        for (int64_t i = 0; i < hw; ++i)
            m += x.data()[int64_t(c) * hw + i];
        m /= double(hw);
        for (int64_t i = 0; i < hw; ++i)
            x.data()[int64_t(c) * hw + i] -= float(m);
    }

    auto block = [](const nn::Conv2d<float>& c, Tensor<float>& t) {
        Tensor<float> y = nn::conv_forward(c, t);
        nn::leaky_relu_inplace(y, 0.2f);
        return y;
    };
    Tensor<float> h = block(bb.c0, x);
    h = block(bb.c1, h);
    h = block(bb.c2, h);

    // Flatten the coarse map. Rectified responses are positive-biased,
    // which would pin every embedding into one orthant and flatten the
    // similarity scale, so the feature vector is centered first: cosine
    // then compares response profiles, not response totals.
    int64_t flat = h.numel();
    Tensor<float> feat({1, int(flat)});
    double total = 0;
    for (int64_t i = 0; i < flat; ++i) {
        feat[i] = h[i];
        total += h[i];
    }
    float feat_mean = float(total / double(flat));
    for (int64_t i = 0; i < flat; ++i)
        feat[i] -= feat_mean;

    Tensor<float> e2 = nn::linear_forward(bb.head, feat);
    Tensor<float> e({bb.spec.output_dim});
    std::copy_n(e2.data(), e2.numel(), e.data());

    if (bb.spec.normalize_output) {
        double n = 0;
        for (int64_t i = 0; i < e.numel(); ++i)
            n += double(e[i]) * double(e[i]);
        n = std::sqrt(n);
        if (n < 1e-12)
            throw NumericError("backbone produced a zero embedding");
        for (int64_t i = 0; i < e.numel(); ++i)
            e[i] = float(double(e[i]) / n);
    }
    return e;
}

// Plain cosine similarity between two embeddings, in [-1, 1].
template <typename T>
double cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw ShapeError("cosine_similarity: shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    double dot = 0, na = 0, nb = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        dot += double(a[i]) * double(b[i]);
        na += double(a[i]) * double(a[i]);
        nb += double(b[i]) * double(b[i]);
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < 1e-12 || nb < 1e-12)
        throw NumericError("cosine_similarity: zero-norm embedding");
    return dot / (na * nb);
}

} // namespace facetrace
