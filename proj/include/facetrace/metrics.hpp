#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "facetrace/data.hpp"
#include "facetrace/identity.hpp"
#include "facetrace/image.hpp"

// Evaluation: how close a traced face is to the original it should reveal.
// PSNR and SSIM score pixels and structure; facial similarity scores
// identity through a frozen embedder that is not the training teacher.

namespace facetrace {

// Peak signal-to-noise ratio in dB on [0, 1] images (peak = 1). Identical
// images report exactly 99.0 instead of infinity; everything else is the
// raw value, strictly decreasing in mean squared error.
double psnr_db(const Image& a, const Image& b);

// Structural similarity, 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
// K2 = 0.03, dynamic range 1. Valid-window coverage only (no padding),
// averaged over the three channels. Images must be at least 11x11.
double ssim(const Image& a, const Image& b);

// Per-pixel mean absolute channel difference, replicated to grey RGB.
Image difference_mask(const Image& a, const Image& b);

// 100 * cosine between backbone embeddings, in [-100, 100].
double facial_similarity(const Image& a, const Image& b, const IdentityBackbone& backbone);

// ---- dataset-level evaluation ----

// Produces the traced face for one manifest record. The standard tracer runs
// the model on the fake; tests substitute oracles (e.g. returning the paired
// original, which must score cap PSNR / SSIM 1 / similarity 100).
using TraceFn = std::function<Image(const PairRecord& record, const Image& fake)>;

struct EvalRow {
    std::string pair;               // fake_path of the record
    double psnr_db = 0;
    double ssim = 0;
    double facial_similarity = 0;   // traced vs original
    double fake_similarity = 0;     // untouched fake vs original, the baseline
};

struct EvalReport {
    std::string dataset;
    std::vector<EvalRow> rows;
    double mean_psnr_db = 0;
    double mean_ssim = 0;
    double mean_facial_similarity = 0;
    double mean_fake_similarity = 0;
};

// Evaluates every record of `split` in manifest order.
EvalReport evaluate(const TraceFn& tracer, const Manifest& manifest, Split split, int resolution,
                    const IdentityBackbone& eval_backbone, const std::string& dataset_label);

// One JSONL record per sample plus a "summary" record with the means.
void write_report_jsonl(const EvalReport& report, const std::filesystem::path& path);

// Fixed-width table, one row per report:
//   Dataset | PSNR (dB) | SSIM | Facial Similarity (%)
std::string format_summary_table(const std::vector<EvalReport>& reports);

// ---- visual inspection ----

struct GridSample {
    Image fake, original, traced;
};

// One row per sample: fake | original | traced | difference mask
// (original vs traced). All images must share one square resolution.
Image render_grid(const std::vector<GridSample>& samples);

} // namespace facetrace
