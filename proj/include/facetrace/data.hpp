#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "facetrace/image.hpp"

// Corpus handling: paired (fake, original) face frames.
//
// A manifest is the unit of exchange: one JSONL record per pair with the
// fields {fake_path, original_path, original_identity, target_identity,
// split, timestamp_index}, paths relative to the manifest's directory.
//
// Real corpora arrive as directories of pre-cropped face frames, one
// directory per video with an fps sidecar; videos are sampled one frame per
// full interval and fakes pair with the temporally aligned frame of their
// source video. The synthetic corpus renders procedural "faces": an identity
// is a seeded palette of soft-edged shapes, a frame applies pose jitter
// (rotation, translation, brightness), and a fake blends the target
// identity's rendering with the original frame. Attribute parameters of a
// fake equal its original's by construction, which is exactly the invariant
// the disentangling objective assumes.

namespace facetrace {

enum class Split { train, test };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

struct PairRecord {
    std::string fake_path;
    std::string original_path;
    std::string original_identity;
    std::string target_identity;
    Split split = Split::train;
    int timestamp_index = 0;
};

struct Manifest {
    std::filesystem::path base_dir;
    std::vector<PairRecord> records;

    std::vector<int> indices(Split s) const {
        std::vector<int> out;
        for (int i = 0; i < int(records.size()); ++i)
            if (records[size_t(i)].split == s) out.push_back(i);
        return out;
    }
};

void save_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

// Deterministic split assignment: exactly round(n * test_fraction) records
// become test, chosen by a seeded shuffle of the index space.
std::vector<Split> assign_splits(int n, double test_fraction, uint64_t seed);

// ---- synthetic corpus ----

struct SyntheticSpec {
    int n_identities = 16;
    int frames_per_identity = 32;
    int resolution = 32;
    double blend_alpha = 0.3; // fraction of the original retained in a fake
    uint64_t seed = 7;

    void validate() const;
};

struct FrameAttrs {
    double rotation_deg = 0; // in [-20, 20]
    double brightness = 1;   // in [0.7, 1.3]
    double tx = 0, ty = 0;   // in [-0.1, 0.1], fraction of width/height
};

// Continuous procedural face for one identity, sampled under a frame's
// attribute transform. Pure function of (seed, identity_index, attrs).
Image render_identity_frame(uint64_t seed, int identity_index, const FrameAttrs& attrs,
                            int resolution);

FrameAttrs synthetic_frame_attrs(uint64_t seed, int identity_index, int frame_index);

// Writes PNGs, manifest.jsonl and manifest.meta.json under out_dir, returns
// the manifest. Rerunning with the same spec reproduces every byte.
Manifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir,
                            double test_fraction);

// ---- real-corpus ingestion ----

struct FrameSequence {
    std::filesystem::path dir;
    double fps = 0;
    std::vector<std::filesystem::path> frames; // sorted by filename
};

// Expects dir to contain frame PNGs plus meta.json {"fps": <number>}.
FrameSequence open_frame_sequence(const std::filesystem::path& dir);

// One frame per full interval: sample k lives at timestamp k * interval,
// k in [0, floor(duration / interval)). A clip shorter than one interval
// yields nothing.
std::vector<std::pair<int, std::filesystem::path>> sample_frames(const FrameSequence& seq,
                                                                 double interval_seconds);

struct PrepareReport {
    int n_pairs = 0;
    int skipped_orphans = 0;                // fakes with no matching original video
    std::vector<std::string> record_errors; // malformed directory names etc.
};

// Scans root/originals/<id>_<seq> and root/fakes/<target>_<source>_<seq>,
// pairs temporally aligned samples, assigns splits. Identity labels must not
// contain '_'.
Manifest build_manifest(const std::filesystem::path& root, double interval_seconds,
                        double test_fraction, uint64_t seed, PrepareReport* report);

// ---- batch loading ----

struct Batch {
    std::vector<Image> original;
    std::vector<Image> fake;
};

// Loads the given records in index order, resized to `resolution`.
Batch load_batch(const Manifest& m, const std::vector<int>& indices, int resolution);

// Data cache root: $FACETRACE_CACHE_DIR if set, else ./facetrace_cache.
std::filesystem::path default_cache_dir();

} // namespace facetrace
