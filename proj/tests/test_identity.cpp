#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "facetrace/checkpoint.hpp"
#include "facetrace/data.hpp"
#include "facetrace/identity.hpp"

using namespace facetrace;
namespace fs = std::filesystem;

namespace {

Image noise_image(int h, int w, uint64_t seed) {
    Image img(h, w);
    auto rs = derive_stream(seed, "img");
    for (auto& v : img.px)
        v = float(rs.uniform());
    return img;
}

bool same_embedding(const Tensor<float>& a, const Tensor<float>& b) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

fs::path temp_dir() {
    fs::path dir = fs::temp_directory_path() / "facetrace_test_identity";
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("embedding is deterministic and honors output_dim") {
    IdentityBackbone bb({32, 64, false}, 42);
    Image img = noise_image(32, 32, 1);
    auto a = embed(bb, img);
    auto b = embed(bb, img);
    CHECK(a.dims() == std::vector<int>{64});
    CHECK(same_embedding(a, b));

    IdentityBackbone small({32, 16, false}, 42);
    CHECK(embed(small, img).dims() == std::vector<int>{16});
}

TEST_CASE("identical seeds build identical backbones") {
    IdentityBackbone a({32, 64, false}, 42);
    IdentityBackbone b({32, 64, false}, 42);
    Image img = noise_image(48, 48, 2);
    CHECK(same_embedding(embed(a, img), embed(b, img)));
}

TEST_CASE("different seeds embed the same image differently") {
    IdentityBackbone a({32, 64, false}, 7);
    IdentityBackbone b({32, 64, false}, 8);
    Image img = noise_image(32, 32, 3);
    auto ea = embed(a, img);
    auto eb = embed(b, img);
    CHECK(cosine_similarity(ea, eb) < 0.99);
}

TEST_CASE("normalized backbones emit unit-length embeddings") {
    IdentityBackbone bb({32, 64, true}, 11);
    for (uint64_t s = 0; s < 4; ++s) {
        auto e = embed(bb, noise_image(32, 32, 100 + s));
        double n = 0;
        for (int64_t i = 0; i < e.numel(); ++i)
            n += double(e[i]) * double(e[i]);
        CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("embedding leaves the backbone weights untouched") {
    IdentityBackbone bb({32, 64, false}, 5);
    std::vector<float> before;
    for (auto& [name, t] : bb.tensors())
        before.insert(before.end(), t->data(), t->data() + t->numel());

    embed(bb, noise_image(32, 32, 9));
    embed(bb, noise_image(64, 64, 10));

    std::vector<float> after;
    for (auto& [name, t] : bb.tensors())
        after.insert(after.end(), t->data(), t->data() + t->numel());
    CHECK(before == after);
}

TEST_CASE("off-resolution inputs are resampled to the backbone input size") {
    IdentityBackbone bb({32, 64, false}, 6);
    Image big = noise_image(64, 64, 12);
    auto direct = embed(bb, big);
    auto pre = embed(bb, resize_bilinear(big, 32, 32));
    CHECK(same_embedding(direct, pre));
}

TEST_CASE("backbone separates synthetic identities") {
    // Per-frame embeddings of a small procedural corpus: frames of one
    // identity must sit closer together than frames of different identities.
    const int n_ids = 4, n_frames = 6;
    const uint64_t corpus_seed = 7;
    IdentityBackbone bb({32, 64, true}, 202);

    std::vector<std::vector<Tensor<float>>> embs(n_ids);
    for (int id = 0; id < n_ids; ++id)
        for (int f = 0; f < n_frames; ++f) {
            FrameAttrs attrs = synthetic_frame_attrs(corpus_seed, id, f);
            Image img = render_identity_frame(corpus_seed, id, attrs, 32);
            embs[size_t(id)].push_back(embed(bb, img));
        }

    double intra = 0, inter = 0;
    int n_intra = 0, n_inter = 0;
    for (int i = 0; i < n_ids; ++i)
        for (int fi = 0; fi < n_frames; ++fi)
            for (int j = 0; j < n_ids; ++j)
                for (int fj = 0; fj < n_frames; ++fj) {
                    if (i == j && fi >= fj) continue;
                    if (i > j) continue;
                    double c = cosine_similarity(embs[size_t(i)][size_t(fi)],
                                                 embs[size_t(j)][size_t(fj)]);
                    if (i == j) { intra += c; ++n_intra; }
                    else { inter += c; ++n_inter; }
                }
    intra /= n_intra;
    inter /= n_inter;
    CHECK(intra > inter);

    // Identity centroids never collapse onto each other.
    std::vector<Tensor<float>> mean(n_ids);
    for (int i = 0; i < n_ids; ++i) {
        mean[size_t(i)] = Tensor<float>({64});
        for (auto& e : embs[size_t(i)])
            for (int64_t k = 0; k < 64; ++k)
                mean[size_t(i)][k] += e[k] / n_frames;
    }
    for (int i = 0; i < n_ids; ++i)
        for (int j = i + 1; j < n_ids; ++j)
            CHECK(cosine_similarity(mean[size_t(i)], mean[size_t(j)]) < 0.999);
}

TEST_CASE("cosine similarity on the canonical vector pairs") {
    Tensor<float> v({3});
    v[0] = 0.3f; v[1] = -1.f; v[2] = 2.f;
    CHECK(cosine_similarity(v, v) == doctest::Approx(1.0).epsilon(1e-6));

    Tensor<float> ex({2}), ey({2});
    ex[0] = 1;
    ey[1] = 1;
    CHECK(cosine_similarity(ex, ey) == doctest::Approx(0.0));

    Tensor<float> diag({2});
    diag[0] = 1; diag[1] = 1;
    CHECK(cosine_similarity(diag, ex) == doctest::Approx(0.7071).epsilon(1e-4));
}

TEST_CASE("cosine similarity is symmetric and scale-invariant") {
    auto rs = derive_stream(15, "cos");
    Tensor<float> a({8}), b({8});
    for (int i = 0; i < 8; ++i) {
        a[i] = float(rs.uniform(-1, 1));
        b[i] = float(rs.uniform(-1, 1));
    }
    CHECK(cosine_similarity(a, b) == doctest::Approx(cosine_similarity(b, a)).epsilon(1e-12));
    Tensor<float> a3 = a;
    for (int i = 0; i < 8; ++i) a3[i] *= 3.f;
    CHECK(cosine_similarity(a3, b) == doctest::Approx(cosine_similarity(a, b)).epsilon(1e-6));
}

TEST_CASE("cosine similarity faults on degenerate inputs") {
    Tensor<float> v({2}), zero({2});
    v[0] = 1;
    CHECK_THROWS_AS(cosine_similarity(v, zero), NumericError);
    Tensor<float> longer({3});
    CHECK_THROWS_AS(cosine_similarity(v, longer), ShapeError);
}

TEST_CASE("backbone serialization round-trips bit-exactly") {
    fs::path path = temp_dir() / "bb.ftck";
    IdentityBackbone bb({32, 48, true}, 99);
    save_backbone(bb, path);

    IdentityBackbone loaded = load_backbone(path, BackboneSpec{32, 48, true});
    Image img = noise_image(32, 32, 55);
    CHECK(same_embedding(embed(bb, img), embed(loaded, img)));
    CHECK(loaded.spec.normalize_output == true);

    // Spec mismatch is rejected up front.
    CHECK_THROWS_AS(load_backbone(path, BackboneSpec{32, 64, true}), ConfigError);
    fs::remove(path);
}
