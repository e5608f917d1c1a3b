#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "facetrace/data.hpp"
#include "facetrace/errors.hpp"

using namespace facetrace;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "facetrace_test_data" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_text(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::trunc);
    out << text;
}

Image flat_image(int res, float r, float g, float b) {
    Image img(res, res);
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
    return img;
}

// originals/<name> or fakes/<name>: n_frames tiny PNGs plus an fps sidecar.
void make_video_dir(const fs::path& dir, int n_frames, double fps) {
    fs::create_directories(dir);
    for (int i = 0; i < n_frames; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d.png", i);
        save_png(flat_image(16, float(i) / 255.f, 0.f, 0.f), dir / buf);
    }
    write_text(dir / "meta.json", "{\"fps\": " + std::to_string(fps) + "}");
}

} // namespace

TEST_CASE("split assignment is exhaustive, sized by rounding and seeded") {
    auto splits = assign_splits(100, 0.1, 7);
    REQUIRE(splits.size() == 100);
    int n_test = 0;
    for (Split s : splits)
        if (s == Split::test) ++n_test;
    CHECK(n_test == 10);

    CHECK(assign_splits(100, 0.1, 7) == splits);
    CHECK(assign_splits(100, 0.1, 8) != splits);

    for (Split s : assign_splits(25, 0.0, 1))
        CHECK(s == Split::train);
    for (Split s : assign_splits(25, 1.0, 1))
        CHECK(s == Split::test);

    // round(0.25 * 6) = 2
    auto small = assign_splits(6, 0.25, 3);
    int t = 0;
    for (Split s : small)
        if (s == Split::test) ++t;
    CHECK(t == 2);

    CHECK_THROWS_AS(assign_splits(10, -0.1, 1), ConfigError);
    CHECK_THROWS_AS(assign_splits(10, 1.5, 1), ConfigError);
}

TEST_CASE("manifest survives a save/load round-trip") {
    fs::path dir = fresh_dir("manifest_rt");
    Manifest m;
    m.base_dir = dir;
    PairRecord r;
    r.fake_path = "fakes/a/f0000.png";
    r.original_path = "originals/a/f0000.png";
    r.original_identity = "a";
    r.target_identity = "b";
    r.split = Split::test;
    r.timestamp_index = 4;
    m.records.push_back(r);
    r.split = Split::train;
    r.timestamp_index = 5;
    m.records.push_back(r);

    save_manifest(m, dir / "manifest.jsonl");
    Manifest back = load_manifest(dir / "manifest.jsonl");
    REQUIRE(back.records.size() == 2);
    CHECK(back.base_dir == dir);
    CHECK(back.records[0].fake_path == r.fake_path);
    CHECK(back.records[0].original_identity == "a");
    CHECK(back.records[0].target_identity == "b");
    CHECK(back.records[0].split == Split::test);
    CHECK(back.records[0].timestamp_index == 4);
    CHECK(back.records[1].split == Split::train);

    CHECK(back.indices(Split::test) == std::vector<int>{0});
    CHECK(back.indices(Split::train) == std::vector<int>{1});
}

TEST_CASE("manifest loading rejects unknown fields, bad JSON and bad splits by line") {
    fs::path dir = fresh_dir("manifest_bad");
    const std::string good =
        R"({"fake_path":"f.png","original_path":"o.png","original_identity":"a",)"
        R"("target_identity":"b","split":"train","timestamp_index":0})";

    write_text(dir / "unknown.jsonl", good + "\n" +
               R"({"fake_path":"f.png","original_path":"o.png","original_identity":"a",)" +
               R"("target_identity":"b","split":"train","timestamp_index":0,"extra":1})" + "\n");
    try {
        load_manifest(dir / "unknown.jsonl");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        std::string msg = e.what();
        CHECK(msg.find("line 2") != std::string::npos);
        CHECK(msg.find("extra") != std::string::npos);
    }

    write_text(dir / "notjson.jsonl", "this is not json\n");
    CHECK_THROWS_AS(load_manifest(dir / "notjson.jsonl"), DataError);

    write_text(dir / "badsplit.jsonl",
               R"({"fake_path":"f.png","original_path":"o.png","original_identity":"a",)"
               R"("target_identity":"b","split":"validation","timestamp_index":0})" "\n");
    CHECK_THROWS_AS(load_manifest(dir / "badsplit.jsonl"), DataError);

    CHECK_THROWS_AS(load_manifest(dir / "missing.jsonl"), DataError);
}

TEST_CASE("synthetic spec validation") {
    SyntheticSpec spec;
    CHECK(spec.n_identities * spec.frames_per_identity == 512); // default corpus size
    CHECK_NOTHROW(spec.validate());

    spec.n_identities = 1;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = SyntheticSpec{};
    spec.blend_alpha = 1.2;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = SyntheticSpec{};
    spec.resolution = 20;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = SyntheticSpec{};
    spec.frames_per_identity = 0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("synthetic generation is byte-identical across runs") {
    SyntheticSpec spec;
    spec.n_identities = 3;
    spec.frames_per_identity = 2;
    spec.resolution = 32;
    spec.seed = 7;

    fs::path d1 = fresh_dir("synth_a");
    fs::path d2 = fresh_dir("synth_b");
    Manifest m1 = generate_synthetic(spec, d1, 0.25);
    Manifest m2 = generate_synthetic(spec, d2, 0.25);
    CHECK(m1.records.size() == 6);

    std::set<fs::path> rel;
    for (auto& e : fs::recursive_directory_iterator(d1))
        if (e.is_regular_file()) rel.insert(fs::relative(e.path(), d1));
    REQUIRE(rel.size() == 6 * 2 + 2); // pairs x (ori + fake) + manifest + meta
    for (const auto& r : rel) {
        REQUIRE(fs::exists(d2 / r));
        CHECK(slurp(d1 / r) == slurp(d2 / r));
    }
}

TEST_CASE("degenerate blends collapse the fake onto a pure render") {
    // alpha = 1 keeps the original untouched regardless of the swap target.
    SyntheticSpec spec;
    spec.n_identities = 2;
    spec.frames_per_identity = 2;
    spec.resolution = 32;
    spec.blend_alpha = 1.0;
    spec.seed = 11;
    fs::path dir = fresh_dir("synth_alpha1");
    Manifest m = generate_synthetic(spec, dir, 0.0);
    for (const auto& r : m.records)
        CHECK(slurp(dir / r.fake_path) == slurp(dir / r.original_path));

    // alpha = 0 with the source as target reproduces the original render.
    FrameAttrs attrs = synthetic_frame_attrs(11, 0, 0);
    Image ori = render_identity_frame(11, 0, attrs, 32);
    Image swap = render_identity_frame(11, 0, attrs, 32); // same identity
    for (size_t i = 0; i < ori.px.size(); ++i) {
        float fake = float((1.0 - 0.0) * swap.px[i] + 0.0 * ori.px[i]);
        CHECK(fake == ori.px[i]);
    }
}

TEST_CASE("synthetic pairs record equal attributes for fake and original") {
    SyntheticSpec spec;
    spec.n_identities = 2;
    spec.frames_per_identity = 3;
    spec.resolution = 32;
    spec.seed = 13;
    fs::path dir = fresh_dir("synth_attrs");
    Manifest m = generate_synthetic(spec, dir, 0.5);

    std::ifstream in(dir / "manifest.meta.json");
    nlohmann::json meta = nlohmann::json::parse(in);
    auto& log = meta.at("frame_attrs");
    REQUIRE(log.size() == m.records.size());
    for (auto& entry : log)
        CHECK(entry.at("original") == entry.at("fake"));

    // ...and the recorded values respect the attribute ranges.
    for (auto& entry : log) {
        auto& a = entry.at("original");
        double rot = a.at("rotation_deg").get<double>();
        double br = a.at("brightness").get<double>();
        CHECK(rot >= -20.0);
        CHECK(rot <= 20.0);
        CHECK(br >= 0.7);
        CHECK(br <= 1.3);
        CHECK(std::abs(a.at("tx").get<double>()) <= 0.1);
        CHECK(std::abs(a.at("ty").get<double>()) <= 0.1);
    }

    // the fake never targets its own source identity
    for (const auto& r : m.records)
        CHECK(r.original_identity != r.target_identity);
}

TEST_CASE("frame sampling takes one frame per full interval") {
    FrameSequence seq;
    seq.fps = 30.0;
    for (int i = 0; i < 300; ++i)
        seq.frames.push_back("f" + std::to_string(i) + ".png");

    auto samples = sample_frames(seq, 1.0); // 10 s of video
    REQUIRE(samples.size() == 10);
    for (int k = 0; k < 10; ++k) {
        CHECK(samples[size_t(k)].first == k);
        CHECK(samples[size_t(k)].second == "f" + std::to_string(k * 30) + ".png");
    }

    FrameSequence shorty;
    shorty.fps = 30.0;
    for (int i = 0; i < 15; ++i)
        shorty.frames.push_back("s.png");
    CHECK(sample_frames(shorty, 1.0).empty()); // 0.5 s: below one interval

    CHECK(sample_frames(seq, 2.5).size() == 4);
    CHECK_THROWS_AS(sample_frames(seq, 0.0), ConfigError);
}

TEST_CASE("frame sequences require a sidecar and at least one frame") {
    fs::path dir = fresh_dir("seq");
    fs::path video = dir / "vid";
    make_video_dir(video, 4, 2.0);
    FrameSequence seq = open_frame_sequence(video);
    CHECK(seq.fps == 2.0);
    REQUIRE(seq.frames.size() == 4);
    CHECK(seq.frames.front().filename() == "0000.png"); // sorted

    fs::path empty = dir / "empty";
    fs::create_directories(empty);
    write_text(empty / "meta.json", "{\"fps\": 2}");
    CHECK_THROWS_AS(open_frame_sequence(empty), DataError);

    fs::path nometa = dir / "nometa";
    fs::create_directories(nometa);
    save_png(flat_image(16, 0, 0, 0), nometa / "0000.png");
    CHECK_THROWS_AS(open_frame_sequence(nometa), DataError);

    fs::path badfps = dir / "badfps";
    make_video_dir(badfps, 1, 0.0);
    CHECK_THROWS_AS(open_frame_sequence(badfps), DataError);
}

TEST_CASE("corpus manifests pair aligned frames and count orphans") {
    fs::path root = fresh_dir("corpus");
    // A and B 3 s at 2 fps; the fake swaps B's identity onto A's video.
    make_video_dir(root / "originals" / "A_v1", 6, 2.0);
    make_video_dir(root / "originals" / "B_v1", 6, 2.0);
    make_video_dir(root / "fakes" / "B_A_v1", 6, 2.0);
    // Orphan: no originals/D_v9.
    make_video_dir(root / "fakes" / "C_D_v9", 6, 2.0);
    // Malformed names on both sides.
    make_video_dir(root / "originals" / "noseparator", 1, 2.0);
    make_video_dir(root / "fakes" / "justone", 1, 2.0);

    PrepareReport report;
    Manifest m = build_manifest(root, 1.0, 0.0, 5, &report);
    CHECK(report.n_pairs == 3);
    CHECK(report.skipped_orphans == 1);
    CHECK(report.record_errors.size() == 2);

    REQUIRE(m.records.size() == 3);
    for (int k = 0; k < 3; ++k) {
        const auto& r = m.records[size_t(k)];
        CHECK(r.original_identity == "A");
        CHECK(r.target_identity == "B");
        CHECK(r.timestamp_index == k);
        CHECK(r.split == Split::train); // test_fraction 0
        // aligned frames: sample k lives at frame index k*2 on both sides
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d.png", k * 2);
        CHECK(r.fake_path == std::string("fakes/B_A_v1/") + buf);
        CHECK(r.original_path == std::string("originals/A_v1/") + buf);
    }

    CHECK_THROWS_AS(build_manifest(fresh_dir("not_a_corpus"), 1.0, 0.0, 5, nullptr), DataError);
}

TEST_CASE("batches load in index order, normalized and resized") {
    SyntheticSpec spec;
    spec.n_identities = 2;
    spec.frames_per_identity = 3;
    spec.resolution = 32;
    spec.seed = 21;
    fs::path dir = fresh_dir("batch");
    Manifest m = generate_synthetic(spec, dir, 0.0);

    Batch b = load_batch(m, {0, 1, 2}, 32);
    REQUIRE(b.original.size() == 3);
    REQUIRE(b.fake.size() == 3);
    for (const Image& img : b.original) {
        CHECK(img.height == 32);
        CHECK(img.width == 32);
        for (float v : img.px) {
            CHECK(v >= 0.f);
            CHECK(v <= 1.f);
        }
    }

    Batch down = load_batch(m, {0}, 16);
    CHECK(down.original[0].height == 16);
    CHECK(down.original[0].width == 16);

    CHECK_THROWS_AS(load_batch(m, {99}, 32), DataError);
    CHECK_THROWS_AS(load_batch(m, {-1}, 32), DataError);
}

TEST_CASE("png io round-trips 8-bit-exact values and rejects corrupt files") {
    fs::path dir = fresh_dir("png");
    Image img(5, 7);
    int k = 0;
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 7; ++x)
            for (int c = 0; c < 3; ++c, ++k)
                img.at(y, x, c) = float((k * 37) % 256) / 255.f;

    save_png(img, dir / "rt.png");
    Image back = load_png(dir / "rt.png");
    REQUIRE(back.height == 5);
    REQUIRE(back.width == 7);
    for (size_t i = 0; i < img.px.size(); ++i)
        CHECK(back.px[i] == img.px[i]);

    write_text(dir / "corrupt.png", "definitely not a png");
    CHECK_THROWS_AS(load_png(dir / "corrupt.png"), DataError);
    CHECK_THROWS_AS(load_png(dir / "absent.png"), DataError);
}

TEST_CASE("bilinear resize uses half-pixel centers with edge clamp") {
    Image img(1, 2);
    img.at(0, 0, 0) = 0.f;
    img.at(0, 1, 0) = 1.f;
    for (int c = 1; c < 3; ++c) {
        img.at(0, 0, c) = 0.f;
        img.at(0, 1, c) = 1.f;
    }
    Image up = resize_bilinear(img, 1, 4);
    REQUIRE(up.width == 4);
    CHECK(up.at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(up.at(0, 1, 0) == doctest::Approx(0.25));
    CHECK(up.at(0, 2, 0) == doctest::Approx(0.75));
    CHECK(up.at(0, 3, 0) == doctest::Approx(1.0));

    Image same = resize_bilinear(img, 1, 2);
    CHECK(same.at(0, 0, 0) == 0.f);
    CHECK(same.at(0, 1, 0) == 1.f);
}

TEST_CASE("cache directory honors the environment override") {
    setenv("FACETRACE_CACHE_DIR", "/tmp/ft_cache_probe", 1);
    CHECK(default_cache_dir() == fs::path("/tmp/ft_cache_probe"));
    unsetenv("FACETRACE_CACHE_DIR");
    CHECK(default_cache_dir() == fs::path("facetrace_cache"));
}
