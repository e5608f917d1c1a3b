#include "facetrace/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "facetrace/errors.hpp"
#include "facetrace/rng.hpp"

namespace facetrace {

using nlohmann::json;

// ---- manifest ----

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
    if (!path.parent_path().empty())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw DataError("cannot write manifest: " + path.string());
    for (const auto& r : m.records) {
        json j{{"fake_path", r.fake_path},
               {"original_path", r.original_path},
               {"original_identity", r.original_identity},
               {"target_identity", r.target_identity},
               {"split", split_name(r.split)},
               {"timestamp_index", r.timestamp_index}};
        os << j.dump() << '\n';
    }
    if (!os.flush())
        throw DataError("write failed for manifest: " + path.string());
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is)
        throw DataError("cannot open manifest: " + path.string());

    static const std::set<std::string> kFields = {
        "fake_path", "original_path", "original_identity",
        "target_identity", "split", "timestamp_index"};

    Manifest m;
    m.base_dir = path.parent_path();
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("manifest " + path.string() + " line " + std::to_string(lineno) +
                            ": invalid JSON (" + e.what() + ")");
        }
        for (auto& [key, val] : j.items())
            if (!kFields.count(key))
                throw DataError("manifest " + path.string() + " line " + std::to_string(lineno) +
                                ": unknown field '" + key + "'");
        try {
            PairRecord r;
            r.fake_path = j.at("fake_path").get<std::string>();
            r.original_path = j.at("original_path").get<std::string>();
            r.original_identity = j.at("original_identity").get<std::string>();
            r.target_identity = j.at("target_identity").get<std::string>();
            std::string split = j.at("split").get<std::string>();
            if (split == "train") r.split = Split::train;
            else if (split == "test") r.split = Split::test;
            else throw DataError("split must be 'train' or 'test', got '" + split + "'");
            r.timestamp_index = j.at("timestamp_index").get<int>();
            m.records.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw DataError("manifest " + path.string() + " line " + std::to_string(lineno) +
                            ": " + e.what());
        }
    }
    return m;
}

std::vector<Split> assign_splits(int n, double test_fraction, uint64_t seed) {
    if (test_fraction < 0 || test_fraction > 1)
        throw ConfigError("test_fraction must lie in [0, 1], got " + std::to_string(test_fraction));
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    auto rs = derive_stream(seed, "split");
    rs.shuffle(order);
    int n_test = int(std::lround(test_fraction * n));
    std::vector<Split> out(size_t(n), Split::train);
    for (int i = 0; i < n_test; ++i)
        out[size_t(order[size_t(i)])] = Split::test;
    return out;
}

// ---- procedural faces ----

namespace {

struct ShapeSpec {
    int kind = 0; // 0 disc, 1 ring, 2 bar, 3 box
    double cx = 0.5, cy = 0.5, radius = 0.2, soft = 0.05, angle = 0;
    double r = 0, g = 0, b = 0, opacity = 1;
};

struct PatternSpec {
    double bg0[3], bg1[3];
    double grad_x = 1, grad_y = 0;
    std::vector<ShapeSpec> shapes;
};

PatternSpec make_pattern(uint64_t seed, int identity_index) {
    auto rs = derive_stream(seed, "identity", uint64_t(identity_index));
    PatternSpec p;
    for (int c = 0; c < 3; ++c) p.bg0[c] = rs.uniform(0.05, 0.95);
    for (int c = 0; c < 3; ++c) p.bg1[c] = rs.uniform(0.05, 0.95);
    double ga = rs.uniform(0, 6.283185307179586);
    p.grad_x = std::cos(ga);
    p.grad_y = std::sin(ga);
    int n_shapes = 4 + int(rs.below(3));
    for (int s = 0; s < n_shapes; ++s) {
        ShapeSpec sh;
        sh.kind = int(rs.below(4));
        sh.cx = rs.uniform(0.2, 0.8);
        sh.cy = rs.uniform(0.2, 0.8);
        sh.radius = rs.uniform(0.08, 0.28);
        sh.soft = rs.uniform(0.02, 0.06);
        sh.angle = rs.uniform(0, 3.141592653589793);
        sh.r = rs.uniform(0.05, 0.95);
        sh.g = rs.uniform(0.05, 0.95);
        sh.b = rs.uniform(0.05, 0.95);
        sh.opacity = rs.uniform(0.6, 1.0);
        p.shapes.push_back(sh);
    }
    return p;
}

double smoothstep(double e0, double e1, double x) {
    double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3 - 2 * t);
}

// Coverage of a shape at pattern coordinates (u, v); 1 inside, 0 outside,
// smooth across a `soft`-wide band.
double shape_coverage(const ShapeSpec& s, double u, double v) {
    double dx = u - s.cx, dy = v - s.cy;
    double ca = std::cos(s.angle), sa = std::sin(s.angle);
    double lx = ca * dx + sa * dy, ly = -sa * dx + ca * dy;
    double d;
    switch (s.kind) {
        case 0: d = std::hypot(lx, ly) - s.radius; break;
        case 1: d = std::abs(std::hypot(lx, ly) - s.radius) - s.radius * 0.3; break;
        case 2: d = std::abs(ly) - s.radius * 0.4; break;
        default: d = std::max(std::abs(lx), std::abs(ly)) - s.radius; break;
    }
    return 1.0 - smoothstep(-s.soft, s.soft, d);
}

// The pattern is defined on the whole plane, so rotated or shifted sampling
// never runs off an edge.
void pattern_color(const PatternSpec& p, double u, double v, double rgb[3]) {
    double t = std::clamp((u - 0.5) * p.grad_x + (v - 0.5) * p.grad_y + 0.5, 0.0, 1.0);
    for (int c = 0; c < 3; ++c)
        rgb[c] = p.bg0[c] + (p.bg1[c] - p.bg0[c]) * t;
    for (const auto& s : p.shapes) {
        double m = shape_coverage(s, u, v) * s.opacity;
        rgb[0] += (s.r - rgb[0]) * m;
        rgb[1] += (s.g - rgb[1]) * m;
        rgb[2] += (s.b - rgb[2]) * m;
    }
}

Image render_pattern(const PatternSpec& p, const FrameAttrs& a, int resolution) {
    Image img(resolution, resolution);
    double th = a.rotation_deg * 3.141592653589793 / 180.0;
    double ct = std::cos(th), st = std::sin(th);
    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            // Pixel centre -> centred coords -> undo translation -> undo
            // rotation -> pattern coords.
            double px = (x + 0.5) / resolution - 0.5 - a.tx;
            double py = (y + 0.5) / resolution - 0.5 - a.ty;
            double u = ct * px + st * py + 0.5;
            double v = -st * px + ct * py + 0.5;
            double rgb[3];
            pattern_color(p, u, v, rgb);
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = float(std::clamp(rgb[c] * a.brightness, 0.0, 1.0));
        }
    }
    return img;
}

std::string identity_label(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "id%02d", index);
    return buf;
}

std::string frame_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "f%04d.png", index);
    return buf;
}

} // namespace

void SyntheticSpec::validate() const {
    if (n_identities < 2)
        throw ConfigError("synthetic corpus needs at least 2 identities, got " +
                          std::to_string(n_identities));
    if (frames_per_identity < 1)
        throw ConfigError("frames_per_identity must be positive");
    if (resolution < 16 || resolution % 8 != 0)
        throw ConfigError("synthetic resolution must be a multiple of 8 and at least 16");
    if (blend_alpha < 0 || blend_alpha > 1)
        throw ConfigError("blend_alpha must lie in [0, 1], got " + std::to_string(blend_alpha));
}

Image render_identity_frame(uint64_t seed, int identity_index, const FrameAttrs& attrs,
                            int resolution) {
    return render_pattern(make_pattern(seed, identity_index), attrs, resolution);
}

FrameAttrs synthetic_frame_attrs(uint64_t seed, int identity_index, int frame_index) {
    auto rs = derive_stream(seed, "attrs", uint64_t(identity_index), uint64_t(frame_index));
    FrameAttrs a;
    a.rotation_deg = rs.uniform(-20.0, 20.0);
    a.brightness = rs.uniform(0.7, 1.3);
    a.tx = rs.uniform(-0.1, 0.1);
    a.ty = rs.uniform(-0.1, 0.1);
    return a;
}

Manifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir,
                            double test_fraction) {
    spec.validate();
    std::filesystem::create_directories(out_dir);

    Manifest m;
    m.base_dir = out_dir;
    int n_records = spec.n_identities * spec.frames_per_identity;
    auto splits = assign_splits(n_records, test_fraction, spec.seed);

    json attr_log = json::array();
    int rec = 0;
    for (int id = 0; id < spec.n_identities; ++id) {
        PatternSpec source = make_pattern(spec.seed, id);
        std::string label = identity_label(id);
        std::filesystem::create_directories(out_dir / "originals" / label);
        std::filesystem::create_directories(out_dir / "fakes" / label);

        for (int f = 0; f < spec.frames_per_identity; ++f, ++rec) {
            FrameAttrs attrs = synthetic_frame_attrs(spec.seed, id, f);
            auto rs = derive_stream(spec.seed, "target", uint64_t(id), uint64_t(f));
            int target = int(rs.below(uint64_t(spec.n_identities - 1)));
            if (target >= id) ++target; // uniform over identities != id

            Image ori = render_pattern(source, attrs, spec.resolution);
            Image swap = render_pattern(make_pattern(spec.seed, target), attrs, spec.resolution);
            Image fake(spec.resolution, spec.resolution);
            for (size_t i = 0; i < fake.px.size(); ++i)
                fake.px[i] = float((1.0 - spec.blend_alpha) * swap.px[i] +
                                   spec.blend_alpha * ori.px[i]);

            PairRecord r;
            r.original_identity = label;
            r.target_identity = identity_label(target);
            r.original_path = "originals/" + label + "/" + frame_name(f);
            r.fake_path = "fakes/" + label + "/" + frame_name(f);
            r.timestamp_index = f;
            r.split = splits[size_t(rec)];
            save_png(ori, out_dir / r.original_path);
            save_png(fake, out_dir / r.fake_path);
            m.records.push_back(r);

            json a{{"rotation_deg", attrs.rotation_deg},
                   {"brightness", attrs.brightness},
                   {"tx", attrs.tx},
                   {"ty", attrs.ty}};
            attr_log.push_back(json{{"original", a}, {"fake", a}});
        }
    }

    save_manifest(m, out_dir / "manifest.jsonl");
    json meta{{"generator", "synthetic"},
              {"seed", spec.seed},
              {"n_identities", spec.n_identities},
              {"frames_per_identity", spec.frames_per_identity},
              {"resolution", spec.resolution},
              {"blend_alpha", spec.blend_alpha},
              {"test_fraction", test_fraction},
              {"frame_attrs", attr_log}};
    std::ofstream os(out_dir / "manifest.meta.json", std::ios::trunc);
    os << meta.dump(2) << '\n';
    if (!os.flush())
        throw DataError("write failed for manifest.meta.json");
    return m;
}

// ---- real-corpus ingestion ----

FrameSequence open_frame_sequence(const std::filesystem::path& dir) {
    FrameSequence seq;
    seq.dir = dir;
    auto meta_path = dir / "meta.json";
    std::ifstream is(meta_path);
    if (!is)
        throw DataError("frame sequence has no meta.json: " + dir.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw DataError("invalid meta.json in " + dir.string() + ": " + e.what());
    }
    seq.fps = j.at("fps").get<double>();
    if (!(seq.fps > 0))
        throw DataError("frame sequence fps must be positive: " + dir.string());

    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            seq.frames.push_back(e.path());
    std::sort(seq.frames.begin(), seq.frames.end());
    if (seq.frames.empty())
        throw DataError("frame sequence has no frames: " + dir.string());
    return seq;
}

std::vector<std::pair<int, std::filesystem::path>> sample_frames(const FrameSequence& seq,
                                                                 double interval_seconds) {
    if (!(interval_seconds > 0))
        throw ConfigError("sampling interval must be positive");
    double duration = double(seq.frames.size()) / seq.fps;
    int n = int(std::floor(duration / interval_seconds + 1e-9));
    std::vector<std::pair<int, std::filesystem::path>> out;
    for (int k = 0; k < n; ++k) {
        auto idx = size_t(std::lround(k * interval_seconds * seq.fps));
        if (idx >= seq.frames.size()) break;
        out.emplace_back(k, seq.frames[idx]);
    }
    return out;
}

namespace {

// "<id>_<seq>" -> (id, seq); ids must not contain '_'.
bool parse_original_name(const std::string& name, std::string& id, std::string& seq) {
    auto pos = name.find('_');
    if (pos == std::string::npos || pos == 0 || pos + 1 >= name.size()) return false;
    id = name.substr(0, pos);
    seq = name.substr(pos + 1);
    return seq.find('_') == std::string::npos;
}

// "<target>_<source>_<seq>" -> parts.
bool parse_fake_name(const std::string& name, std::string& target, std::string& source,
                     std::string& seq) {
    auto p1 = name.find('_');
    if (p1 == std::string::npos) return false;
    auto p2 = name.find('_', p1 + 1);
    if (p2 == std::string::npos || p2 + 1 >= name.size()) return false;
    target = name.substr(0, p1);
    source = name.substr(p1 + 1, p2 - p1 - 1);
    seq = name.substr(p2 + 1);
    return !target.empty() && !source.empty() && seq.find('_') == std::string::npos;
}

} // namespace

Manifest build_manifest(const std::filesystem::path& root, double interval_seconds,
                        double test_fraction, uint64_t seed, PrepareReport* report) {
    PrepareReport local;
    PrepareReport& rep = report ? *report : local;

    auto originals_dir = root / "originals";
    auto fakes_dir = root / "fakes";
    if (!std::filesystem::is_directory(originals_dir) || !std::filesystem::is_directory(fakes_dir))
        throw DataError("corpus root must contain originals/ and fakes/: " + root.string());

    // source identity + sequence -> original video dir
    std::vector<std::pair<std::string, std::filesystem::path>> originals;
    for (const auto& e : std::filesystem::directory_iterator(originals_dir)) {
        if (!e.is_directory()) continue;
        std::string name = e.path().filename().string();
        std::string id, seqname;
        if (!parse_original_name(name, id, seqname)) {
            rep.record_errors.push_back("malformed original video name: " + name);
            continue;
        }
        originals.emplace_back(name, e.path());
    }
    std::sort(originals.begin(), originals.end());

    std::vector<std::filesystem::path> fakes;
    for (const auto& e : std::filesystem::directory_iterator(fakes_dir))
        if (e.is_directory()) fakes.push_back(e.path());
    std::sort(fakes.begin(), fakes.end());

    Manifest m;
    m.base_dir = root;
    for (const auto& fake_dir : fakes) {
        std::string name = fake_dir.filename().string();
        std::string target, source, seqname;
        if (!parse_fake_name(name, target, source, seqname)) {
            rep.record_errors.push_back("malformed fake video name: " + name);
            continue;
        }
        std::string want = source + "_" + seqname;
        auto it = std::find_if(originals.begin(), originals.end(),
                               [&](const auto& o) { return o.first == want; });
        if (it == originals.end()) {
            ++rep.skipped_orphans;
            continue;
        }
        FrameSequence fs = open_frame_sequence(fake_dir);
        FrameSequence os_ = open_frame_sequence(it->second);
        auto fsamp = sample_frames(fs, interval_seconds);
        auto osamp = sample_frames(os_, interval_seconds);
        size_t n = std::min(fsamp.size(), osamp.size());
        for (size_t k = 0; k < n; ++k) {
            PairRecord r;
            r.fake_path = std::filesystem::relative(fsamp[k].second, root).generic_string();
            r.original_path = std::filesystem::relative(osamp[k].second, root).generic_string();
            r.original_identity = source;
            r.target_identity = target;
            r.timestamp_index = fsamp[k].first;
            m.records.push_back(std::move(r));
        }
    }

    auto splits = assign_splits(int(m.records.size()), test_fraction, seed);
    for (size_t i = 0; i < m.records.size(); ++i)
        m.records[i].split = splits[i];
    rep.n_pairs = int(m.records.size());
    return m;
}

Batch load_batch(const Manifest& m, const std::vector<int>& indices, int resolution) {
    Batch b;
    b.original.reserve(indices.size());
    b.fake.reserve(indices.size());
    for (int idx : indices) {
        if (idx < 0 || idx >= int(m.records.size()))
            throw DataError("batch index " + std::to_string(idx) + " out of range (manifest has " +
                            std::to_string(m.records.size()) + " records)");
        const auto& r = m.records[size_t(idx)];
        Image ori = load_png(m.base_dir / r.original_path);
        Image fake = load_png(m.base_dir / r.fake_path);
        b.original.push_back(resize_bilinear(ori, resolution, resolution));
        b.fake.push_back(resize_bilinear(fake, resolution, resolution));
    }
    return b;
}

std::filesystem::path default_cache_dir() {
    if (const char* env = std::getenv("FACETRACE_CACHE_DIR"); env && *env)
        return std::filesystem::path(env);
    return std::filesystem::path("facetrace_cache");
}

} // namespace facetrace
