#include "facetrace/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "facetrace/errors.hpp"

namespace facetrace {

namespace {

void check_same_size(const Image& a, const Image& b, const char* what) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError(std::string(what) + ": image sizes differ, " + std::to_string(a.height) +
                         "x" + std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                         std::to_string(b.width));
    if (a.height == 0 || a.width == 0)
        throw ShapeError(std::string(what) + ": empty image");
}

} // namespace

double psnr_db(const Image& a, const Image& b) {
    check_same_size(a, b, "psnr");
    double se = 0;
    for (size_t i = 0; i < a.px.size(); ++i) {
        double d = double(a.px[i]) - double(b.px[i]);
        se += d * d;
    }
    double mse = se / double(a.px.size());
    if (mse == 0.0) return 99.0;
    return -10.0 * std::log10(mse);
}

namespace {

constexpr int kWin = 11;
constexpr double kC1 = 0.01 * 0.01; // (K1 * L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;

const double* gaussian_window() {
    static double g[kWin] = {0};
    if (g[0] == 0) {
        double sum = 0;
        for (int i = 0; i < kWin; ++i) {
            double d = i - (kWin - 1) / 2.0;
            g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += g[i];
        }
        for (int i = 0; i < kWin; ++i) g[i] /= sum;
    }
    return g;
}

// Separable weighted blur of one channel plane; output is the valid region
// ((h - 10) x (w - 10)).
std::vector<double> blur_valid(const std::vector<double>& plane, int h, int w) {
    const double* g = gaussian_window();
    int vw = w - kWin + 1, vh = h - kWin + 1;
    std::vector<double> rows(size_t(h) * size_t(vw));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < vw; ++x) {
            double s = 0;
            for (int j = 0; j < kWin; ++j)
                s += g[j] * plane[size_t(y) * w + x + j];
            rows[size_t(y) * vw + x] = s;
        }
    std::vector<double> out(size_t(vh) * size_t(vw));
    for (int y = 0; y < vh; ++y)
        for (int x = 0; x < vw; ++x) {
            double s = 0;
            for (int i = 0; i < kWin; ++i)
                s += g[i] * rows[size_t(y + i) * vw + x];
            out[size_t(y) * vw + x] = s;
        }
    return out;
}

} // namespace

double ssim(const Image& a, const Image& b) {
    check_same_size(a, b, "ssim");
    if (a.height < kWin || a.width < kWin)
        throw ShapeError("ssim: images must be at least " + std::to_string(kWin) + "x" +
                         std::to_string(kWin) + ", got " + std::to_string(a.height) + "x" +
                         std::to_string(a.width));

    int h = a.height, w = a.width;
    size_t n = size_t(h) * size_t(w);
    std::vector<double> pa(n), pb(n), paa(n), pbb(n), pab(n);
    double channel_sum = 0;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double va = a.at(y, x, c), vb = b.at(y, x, c);
                size_t i = size_t(y) * w + x;
                pa[i] = va;
                pb[i] = vb;
                paa[i] = va * va;
                pbb[i] = vb * vb;
                pab[i] = va * vb;
            }
        auto mu_a = blur_valid(pa, h, w);
        auto mu_b = blur_valid(pb, h, w);
        auto m_aa = blur_valid(paa, h, w);
        auto m_bb = blur_valid(pbb, h, w);
        auto m_ab = blur_valid(pab, h, w);

        double acc = 0;
        for (size_t i = 0; i < mu_a.size(); ++i) {
            double ma = mu_a[i], mb = mu_b[i];
            double va = m_aa[i] - ma * ma;
            double vb = m_bb[i] - mb * mb;
            double cov = m_ab[i] - ma * mb;
            acc += ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
                   ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
        }
        channel_sum += acc / double(mu_a.size());
    }
    return channel_sum / 3.0;
}

Image difference_mask(const Image& a, const Image& b) {
    check_same_size(a, b, "difference_mask");
    Image out(a.height, a.width);
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            double d = 0;
            for (int c = 0; c < 3; ++c)
                d += std::abs(double(a.at(y, x, c)) - double(b.at(y, x, c)));
            float v = float(d / 3.0);
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = v;
        }
    return out;
}

double facial_similarity(const Image& a, const Image& b, const IdentityBackbone& backbone) {
    return 100.0 * cosine_similarity(embed(backbone, a), embed(backbone, b));
}

EvalReport evaluate(const TraceFn& tracer, const Manifest& manifest, Split split, int resolution,
                    const IdentityBackbone& eval_backbone, const std::string& dataset_label) {
    std::vector<int> idx = manifest.indices(split);
    if (idx.empty())
        throw ConfigError("evaluate: manifest has no '" + std::string(split_name(split)) +
                          "' records");

    EvalReport rep;
    rep.dataset = dataset_label;
    for (int i : idx) {
        const PairRecord& r = manifest.records[size_t(i)];
        Batch one = load_batch(manifest, {i}, resolution);
        const Image& ori = one.original[0];
        const Image& fake = one.fake[0];
        Image traced = tracer(r, fake);
        if (traced.height != resolution || traced.width != resolution)
            traced = resize_bilinear(traced, resolution, resolution);

        EvalRow row;
        row.pair = r.fake_path;
        row.psnr_db = psnr_db(traced, ori);
        row.ssim = ssim(traced, ori);
        row.facial_similarity = facial_similarity(traced, ori, eval_backbone);
        row.fake_similarity = facial_similarity(fake, ori, eval_backbone);
        rep.rows.push_back(std::move(row));
    }

    for (const auto& r : rep.rows) {
        rep.mean_psnr_db += r.psnr_db;
        rep.mean_ssim += r.ssim;
        rep.mean_facial_similarity += r.facial_similarity;
        rep.mean_fake_similarity += r.fake_similarity;
    }
    double n = double(rep.rows.size());
    rep.mean_psnr_db /= n;
    rep.mean_ssim /= n;
    rep.mean_facial_similarity /= n;
    rep.mean_fake_similarity /= n;
    return rep;
}

void write_report_jsonl(const EvalReport& report, const std::filesystem::path& path) {
    if (!path.parent_path().empty())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw DataError("cannot write report: " + path.string());
    for (const auto& r : report.rows) {
        nlohmann::json j{{"type", "sample"},
                         {"pair", r.pair},
                         {"psnr_db", r.psnr_db},
                         {"ssim", r.ssim},
                         {"facial_similarity", r.facial_similarity},
                         {"fake_similarity", r.fake_similarity}};
        os << j.dump() << '\n';
    }
    nlohmann::json s{{"type", "summary"},
                     {"dataset", report.dataset},
                     {"n", report.rows.size()},
                     {"psnr_db", report.mean_psnr_db},
                     {"ssim", report.mean_ssim},
                     {"facial_similarity", report.mean_facial_similarity},
                     {"fake_similarity", report.mean_fake_similarity}};
    os << s.dump() << '\n';
    if (!os.flush())
        throw DataError("write failed for report: " + path.string());
}

std::string format_summary_table(const std::vector<EvalReport>& reports) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%-20s %12s %8s %24s\n", "Dataset", "PSNR (dB)", "SSIM",
                  "Facial Similarity (%)");
    out += line;
    out += std::string(66, '-') + "\n";
    for (const auto& r : reports) {
        std::snprintf(line, sizeof line, "%-20s %12.2f %8.4f %24.2f\n", r.dataset.c_str(),
                      r.mean_psnr_db, r.mean_ssim, r.mean_facial_similarity);
        out += line;
    }
    return out;
}

Image render_grid(const std::vector<GridSample>& samples) {
    if (samples.empty())
        throw ConfigError("render_grid: no samples");
    int r = samples[0].fake.height;
    for (const auto& s : samples)
        for (const Image* im : {&s.fake, &s.original, &s.traced})
            if (im->height != r || im->width != r)
                throw ShapeError("render_grid: all images must be " + std::to_string(r) + "x" +
                                 std::to_string(r));

    Image grid(int(samples.size()) * r, 4 * r);
    for (int row = 0; row < int(samples.size()); ++row) {
        const auto& s = samples[size_t(row)];
        Image mask = difference_mask(s.original, s.traced);
        const Image* cols[4] = {&s.fake, &s.original, &s.traced, &mask};
        for (int col = 0; col < 4; ++col)
            for (int y = 0; y < r; ++y)
                for (int x = 0; x < r; ++x)
                    for (int c = 0; c < 3; ++c)
                        grid.at(row * r + y, col * r + x, c) = cols[col]->at(y, x, c);
    }
    return grid;
}

} // namespace facetrace
