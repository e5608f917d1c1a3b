#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "facetrace/training.hpp"

using namespace facetrace;
namespace fs = std::filesystem;

namespace {

// Small enough for finite differences over the full objective.
ModelConfig micro_config() {
    ModelConfig cfg;
    cfg.resolution = 16;
    cfg.channels = {3, 4, 5, 6};
    cfg.embed_dim = 4;
    return cfg;
}

template <typename T>
Tensor<T> random_faces(int n, int resolution, uint64_t seed) {
    Tensor<T> x({n, 3, resolution, resolution});
    auto rs = derive_stream(seed, "faces");
    for (int64_t i = 0; i < x.numel(); ++i)
        x[i] = T(rs.uniform());
    return x;
}

template <typename T>
Tensor<T> random_targets(int n, int dim, uint64_t seed) {
    Tensor<T> e({n, dim});
    auto rs = derive_stream(seed, "targets");
    for (int64_t i = 0; i < e.numel(); ++i)
        e[i] = T(rs.uniform(-1, 1));
    return e;
}

template <typename T>
bool params_equal(ModelParams<T>& a, ModelParams<T>& b) {
    auto at = named_tensors(a);
    auto bt = named_tensors(b);
    for (size_t i = 0; i < at.size(); ++i)
        for (int64_t j = 0; j < at[i].second->numel(); ++j)
            if ((*at[i].second)[j] != (*bt[i].second)[j]) return false;
    return true;
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "facetrace_test_training" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Manifest tiny_corpus(const fs::path& dir, int n_ids, int frames, uint64_t seed,
                     double test_fraction) {
    SyntheticSpec spec;
    spec.n_identities = n_ids;
    spec.frames_per_identity = frames;
    spec.resolution = 16;
    spec.seed = seed;
    return generate_synthetic(spec, dir, test_fraction);
}

} // namespace

TEST_CASE("training defaults carry the published recipe") {
    TrainSettings s;
    CHECK(s.learning_rate == 0.0003);
    CHECK(s.beta1 == 0.5);
    CHECK(s.beta2 == 0.999);
    CHECK(s.eps == 1e-8);
    CHECK(s.redundancy_mode == RedundancyMode::raw);

    FitOptions o;
    CHECK(o.batch_size == 32);
    CHECK(o.epochs == 200);
    CHECK(o.seed == 42);
}

TEST_CASE("initialization is seeded, Kaiming-scaled, with zero biases") {
    ModelConfig cfg;
    cfg.resolution = 32;
    cfg.channels = ModelConfig::default_channels(32);
    cfg.embed_dim = 64;

    ModelParams<float> a(cfg), b(cfg), c(cfg);
    init_params(a, 1);
    init_params(b, 1);
    init_params(c, 2);
    CHECK(params_equal(a, b));
    CHECK(!params_equal(a, c));

    for (auto& [name, t] : named_tensors(a)) {
        if (!name.ends_with(".b")) continue;
        for (int64_t i = 0; i < t->numel(); ++i)
            CHECK((*t)[i] == 0.f);
    }

    // enc_id.s3.c0.w: 128 x 576, fan_in 576 -> variance 2 / (576 * 1.04).
    Tensor<float>* w = nullptr;
    for (auto& [name, t] : named_tensors(a))
        if (name == "enc_id.s3.c0.w") w = t;
    REQUIRE(w != nullptr);
    REQUIRE(w->dim(1) == 576);
    REQUIRE(w->numel() >= 10000);
    double sum = 0, sq = 0;
    for (int64_t i = 0; i < w->numel(); ++i) {
        sum += (*w)[i];
        sq += double((*w)[i]) * double((*w)[i]);
    }
    double mean = sum / double(w->numel());
    double var = sq / double(w->numel()) - mean * mean;
    double want = 2.0 / (576.0 * (1.0 + 0.2 * 0.2));
    CHECK(var > 0.9 * want);
    CHECK(var < 1.1 * want);
}

TEST_CASE("one optimizer step matches the closed-form update to 1e-12") {
    // Quadratic in a single coordinate: f(w) = (w - 3)^2 / 2, grad = w - 3.
    ModelConfig cfg = micro_config();
    ModelParams<double> p(cfg);
    ModelParams<double> g(cfg);
    zero_all(p);
    zero_all(g);
    AdamState<double> opt(p);

    TrainSettings s;
    s.learning_rate = 0.1;

    Tensor<double>& w = *named_tensors(p)[0].second;
    Tensor<double>& gw = *named_tensors(g)[0].second;
    w[0] = 1.0;

    double ref_w = 1.0, ref_m = 0.0, ref_v = 0.0;
    for (int t = 1; t <= 5; ++t) {
        double grad = w[0] - 3.0;
        gw[0] = grad;
        opt.step(p, g, s);

        ref_m = s.beta1 * ref_m + (1 - s.beta1) * grad;
        ref_v = s.beta2 * ref_v + (1 - s.beta2) * grad * grad;
        double mhat = ref_m / (1 - std::pow(s.beta1, t));
        double vhat = ref_v / (1 - std::pow(s.beta2, t));
        ref_w = ref_w - s.learning_rate * mhat / (std::sqrt(vhat) + s.eps);

        CHECK(std::abs(w[0] - ref_w) < 1e-12);
        CHECK(opt.steps_taken() == t);
    }
    // Untouched coordinates never move.
    CHECK(w[1] == 0.0);
}

TEST_CASE("a zero learning rate leaves parameters bitwise unchanged") {
    ModelConfig cfg = micro_config();
    ModelParams<float> p(cfg);
    init_params(p, 4);
    ModelParams<float> before = p;
    AdamState<float> opt(p);

    TrainSettings s;
    s.learning_rate = 0.0;
    Tensor<float> ori = random_faces<float>(2, 16, 50);
    Tensor<float> fake = random_faces<float>(2, 16, 51);
    Tensor<float> e_pre = random_targets<float>(2, 4, 52);

    LossBreakdown bd = train_step(p, opt, ori, fake, e_pre, s);
    CHECK(std::isfinite(bd.total));
    CHECK(bd.total > 0);
    CHECK(params_equal(p, before));
}

TEST_CASE("a training step is deterministic given identical state") {
    ModelConfig cfg = micro_config();
    ModelParams<float> p1(cfg);
    init_params(p1, 6);
    ModelParams<float> p2 = p1;
    AdamState<float> o1(p1), o2(p2);

    TrainSettings s;
    Tensor<float> ori = random_faces<float>(2, 16, 60);
    Tensor<float> fake = random_faces<float>(2, 16, 61);
    Tensor<float> e_pre = random_targets<float>(2, 4, 62);

    LossBreakdown b1 = train_step(p1, o1, ori, fake, e_pre, s);
    LossBreakdown b2 = train_step(p2, o2, ori, fake, e_pre, s);
    CHECK(b1.total == b2.total);
    CHECK(params_equal(p1, p2));
}

TEST_CASE("losses decrease over a short optimization run") {
    ModelConfig cfg = micro_config();
    ModelParams<float> p(cfg);
    init_params(p, 8);
    AdamState<float> opt(p);

    TrainSettings s;
    s.learning_rate = 1e-3;
    Tensor<float> ori = random_faces<float>(2, 16, 70);
    Tensor<float> fake = random_faces<float>(2, 16, 71);
    Tensor<float> e_pre = random_targets<float>(2, 4, 72);

    double first = train_step(p, opt, ori, fake, e_pre, s).total;
    double last = first;
    for (int i = 0; i < 40; ++i)
        last = train_step(p, opt, ori, fake, e_pre, s).total;
    CHECK(last < first);
}

TEST_CASE("analytic gradients of the full objective match finite differences") {
    ModelConfig cfg = micro_config();
    ModelParams<double> p(cfg);
    init_params(p, 14);

    TrainSettings s;
    Tensor<double> ori = random_faces<double>(1, 16, 80);
    Tensor<double> fake = random_faces<double>(1, 16, 81);
    Tensor<double> e_pre = random_targets<double>(1, 4, 82);

    GradCheckOptions opt;
    // Narrower than the default step: at a random init some pre-activation
    // always sits within 1e-4 of the LeakyReLU break, and a central
    // difference straddling the break measures the average of the two
    // branch slopes rather than the derivative.
    opt.step = 1e-5;
    opt.max_coords_per_group = 3;
    opt.seed = 9;
    GradCheckReport report = grad_check(p, ori, fake, e_pre, s, opt);
    CHECK(report.n_checked == 3 * 46);
    CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("an all-zero objective yields exact gradient agreement") {
    ModelConfig cfg = micro_config();
    ModelParams<double> p(cfg);
    init_params(p, 13);

    TrainSettings s;
    s.weights = LossWeights{0, 0, 0, 0, 0, 0, 0};
    Tensor<double> ori = random_faces<double>(1, 16, 83);
    Tensor<double> fake = random_faces<double>(1, 16, 84);
    Tensor<double> e_pre = random_targets<double>(1, 4, 85);

    GradCheckOptions opt;
    opt.max_coords_per_group = 2;
    GradCheckReport report = grad_check(p, ori, fake, e_pre, s, opt);
    CHECK(report.max_rel_err == 0.0);
}

TEST_CASE("the finite-difference harness flags a corrupted gradient") {
    ModelConfig cfg = micro_config();
    ModelParams<double> p(cfg);
    init_params(p, 14);

    TrainSettings s;
    Tensor<double> ori = random_faces<double>(1, 16, 86);
    Tensor<double> fake = random_faces<double>(1, 16, 87);
    Tensor<double> e_pre = random_targets<double>(1, 4, 88);

    ModelParams<double> g(cfg);
    zero_all(g);
    ForwardState<double> st = forward_all(p, ori, fake);
    backward_all(p, st, ori, e_pre, s, g);

    Tensor<double>& w = *named_tensors(p)[0].second;
    Tensor<double>& gw = *named_tensors(g)[0].second;
    double corrupted = gw[0] + 0.5; // deliberate fault

    const double h = 1e-4;
    double keep = w[0];
    w[0] = keep + h;
    double up = compute_losses(p, ori, fake, e_pre, s).total;
    w[0] = keep - h;
    double down = compute_losses(p, ori, fake, e_pre, s).total;
    w[0] = keep;
    double numeric = (up - down) / (2 * h);

    double rel_ok = std::abs(gw[0] - numeric) /
                    std::max({std::abs(gw[0]), std::abs(numeric), 1e-8});
    double rel_bad = std::abs(corrupted - numeric) /
                     std::max({std::abs(corrupted), std::abs(numeric), 1e-8});
    CHECK(rel_ok < 1e-3);
    CHECK(rel_bad > 1e-3);
}

TEST_CASE("fit runs epochs x ceil(n/batch) steps with increasing indices") {
    fs::path dir = fresh_dir("fit_counts");
    Manifest m = tiny_corpus(dir, 2, 2, 31, 0.0); // 4 train pairs

    FitOptions o;
    o.batch_size = 3;
    o.epochs = 2;
    o.seed = 5;
    o.supervision_spec = BackboneSpec{32, 4, false};

    FitResult res = fit(micro_config(), m, o);
    CHECK(res.epochs_run == 2);
    CHECK(res.final_step == 4); // ceil(4/3) = 2 steps per epoch
    REQUIRE(res.log.steps.size() == 4);
    for (size_t i = 0; i < res.log.steps.size(); ++i)
        CHECK(res.log.steps[i].step == int64_t(i) + 1);
    REQUIRE(res.log.epochs.size() == 2);
    CHECK(res.log.epochs[0].n_steps == 2);
    CHECK(res.log.epochs[1].epoch == 1);
}

TEST_CASE("fit faults on an empty train split or a mismatched supervisor") {
    fs::path dir = fresh_dir("fit_empty");
    Manifest m = tiny_corpus(dir, 2, 2, 32, 1.0); // everything test

    FitOptions o;
    o.epochs = 1;
    o.supervision_spec = BackboneSpec{32, 4, false};
    CHECK_THROWS_AS(fit(micro_config(), m, o), ConfigError);

    Manifest m2 = tiny_corpus(fresh_dir("fit_baddim"), 2, 2, 33, 0.0);
    FitOptions o2;
    o2.epochs = 1;
    o2.supervision_spec = BackboneSpec{32, 64, false}; // model embeds 4
    CHECK_THROWS_AS(fit(micro_config(), m2, o2), ConfigError);
}

TEST_CASE("identical fit runs replay identical loss sequences") {
    fs::path dir = fresh_dir("fit_replay");
    Manifest m = tiny_corpus(dir, 2, 3, 34, 0.0);

    FitOptions o;
    o.batch_size = 2;
    o.epochs = 2;
    o.seed = 17;
    o.supervision_spec = BackboneSpec{32, 4, false};

    FitResult a = fit(micro_config(), m, o);
    FitResult b = fit(micro_config(), m, o);
    REQUIRE(a.log.steps.size() == b.log.steps.size());
    for (size_t i = 0; i < a.log.steps.size(); ++i)
        CHECK(a.log.steps[i].losses.total == b.log.steps[i].losses.total);
    CHECK(params_equal(a.params, b.params));
}

TEST_CASE("a resumed run reproduces the uninterrupted run bit-exactly") {
    fs::path data_dir = fresh_dir("resume_data");
    Manifest m = tiny_corpus(data_dir, 2, 3, 35, 0.0); // 6 train pairs

    FitOptions o;
    o.batch_size = 2;
    o.epochs = 4;
    o.seed = 23;
    o.supervision_spec = BackboneSpec{32, 4, false};

    FitResult full = fit(micro_config(), m, o);

    fs::path ck_dir = fresh_dir("resume_ck");
    FitOptions o_half = o;
    o_half.epochs = 2;
    o_half.checkpoint_dir = ck_dir;
    FitResult half = fit(micro_config(), m, o_half);
    CHECK(fs::exists(ck_dir / "ckpt_final.ftck"));

    Checkpoint ck = load_checkpoint(ck_dir / "ckpt_final.ftck");
    CHECK(ck.kind() == "train");
    CHECK(ck.meta.at("epoch").get<int>() == 2);

    FitResult resumed = fit(micro_config(), m, o, ck);
    CHECK(resumed.epochs_run == 4);
    CHECK(params_equal(full.params, resumed.params));

    // The resumed log covers epochs 2..3 and matches the tail of the full run.
    size_t tail = resumed.log.steps.size();
    REQUIRE(tail == 6); // 3 steps x 2 remaining epochs
    size_t offset = full.log.steps.size() - tail;
    for (size_t i = 0; i < tail; ++i) {
        CHECK(resumed.log.steps[i].step == full.log.steps[offset + i].step);
        CHECK(resumed.log.steps[i].losses.total == full.log.steps[offset + i].losses.total);
    }

    // Resuming under a different geometry is rejected.
    ModelConfig other = micro_config();
    other.embed_dim = 8;
    CHECK_THROWS_AS(fit(other, m, o, ck), ConfigError);
}

TEST_CASE("periodic checkpoints appear on the configured cadence") {
    fs::path data_dir = fresh_dir("periodic_data");
    Manifest m = tiny_corpus(data_dir, 2, 2, 36, 0.0);

    fs::path ck_dir = fresh_dir("periodic_ck");
    FitOptions o;
    o.batch_size = 4;
    o.epochs = 4;
    o.checkpoint_every = 2;
    o.checkpoint_dir = ck_dir;
    o.supervision_spec = BackboneSpec{32, 4, false};

    fit(micro_config(), m, o);
    CHECK(fs::exists(ck_dir / "ckpt_epoch0002.ftck"));
    CHECK(!fs::exists(ck_dir / "ckpt_epoch0004.ftck")); // final epoch is final-only
    CHECK(fs::exists(ck_dir / "ckpt_final.ftck"));
}

TEST_CASE("early stopping callback halts after the requested epoch") {
    fs::path dir = fresh_dir("early_stop");
    Manifest m = tiny_corpus(dir, 2, 2, 37, 0.0);

    FitOptions o;
    o.batch_size = 4;
    o.epochs = 50;
    o.supervision_spec = BackboneSpec{32, 4, false};
    o.after_epoch = [](int epoch, ModelParams<float>&, const TrainLog&) { return epoch >= 3; };

    FitResult res = fit(micro_config(), m, o);
    CHECK(res.epochs_run == 3);
    CHECK(res.log.epochs.size() == 3);
}
