#pragma once

#include <cmath>
#include <string>

#include "facetrace/tensor.hpp"

// Training objective, seven parts. Embedding losses (identity supervision,
// mapping, cycle, attribute) are mean absolute differences; image losses
// (reconstruction, generation) are mean squared differences; the redundancy
// penalty is cosine similarity between identity and attribute embeddings,
// summed over the original-face pair and the fake-face pair. All reductions
// are means over every element, so values are scale-free in batch and
// dimension. Each loss has a closed-form gradient next to it; train_step
// consumes those, and the finite-difference harness checks them.

namespace facetrace {

enum class RedundancyMode { raw, absolute };

inline RedundancyMode redundancy_mode_from_string(const std::string& s) {
    if (s == "raw") return RedundancyMode::raw;
    if (s == "absolute") return RedundancyMode::absolute;
    throw ConfigError("redundancy mode must be 'raw' or 'absolute', got '" + s + "'");
}

struct LossWeights {
    double id = 1.0;     // lambda1
    double redun = 1.0;  // lambda2
    double recon = 1.0;  // lambda3
    double map = 1.0;    // lambda4
    double gen = 1.0;    // lambda5
    double cycle = 5.0;  // lambda6
    double attr = 0.0;   // opt-in attribute consistency term
};

struct LossBreakdown {
    double id = 0, redun = 0, recon = 0, map = 0, gen = 0, cycle = 0, attr = 0;
    double total = 0;
};

namespace detail {

template <typename T>
void check_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    if (a.numel() == 0)
        throw ShapeError(std::string(what) + ": empty input");
}

} // namespace detail

// mean |a - b|
template <typename T>
double l1_mean(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    detail::check_same(a, b, what);
    double s = 0;
    for (int64_t i = 0; i < a.numel(); ++i)
        s += std::abs(double(a[i]) - double(b[i]));
    return s / double(a.numel());
}

// ga += w * d/da mean|a-b|, gb += w * d/db. sign(0) taken as 0.
template <typename T>
void l1_mean_grad(const Tensor<T>& a, const Tensor<T>& b, double w,
                  Tensor<T>* ga, Tensor<T>* gb) {
    double inv = w / double(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = double(a[i]) - double(b[i]);
        double s = d > 0 ? inv : (d < 0 ? -inv : 0.0);
        if (ga) (*ga)[i] += T(s);
        if (gb) (*gb)[i] -= T(s);
    }
}

// mean (a - b)^2
template <typename T>
double sq_mean(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    detail::check_same(a, b, what);
    double s = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = double(a[i]) - double(b[i]);
        s += d * d;
    }
    return s / double(a.numel());
}

template <typename T>
void sq_mean_grad(const Tensor<T>& a, const Tensor<T>& b, double w,
                  Tensor<T>* ga, Tensor<T>* gb) {
    double inv = 2.0 * w / double(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = inv * (double(a[i]) - double(b[i]));
        if (ga) (*ga)[i] += T(d);
        if (gb) (*gb)[i] -= T(d);
    }
}

// Per-sample cosine over rows of (n, d), averaged over the batch. Rank-1
// inputs are treated as a single sample. Near-zero embedding norms make the
// quotient meaningless, so they fault instead of returning noise.
template <typename T>
double cosine_mean(const Tensor<T>& u, const Tensor<T>& v, RedundancyMode mode,
                   const char* what) {
    detail::check_same(u, v, what);
    int n = u.rank() == 2 ? u.dim(0) : 1;
    int64_t d = u.numel() / n;
    double acc = 0;
    for (int i = 0; i < n; ++i) {
        const T* up = u.data() + int64_t(i) * d;
        const T* vp = v.data() + int64_t(i) * d;
        double dot = 0, nu = 0, nv = 0;
        for (int64_t j = 0; j < d; ++j) {
            dot += double(up[j]) * double(vp[j]);
            nu += double(up[j]) * double(up[j]);
            nv += double(vp[j]) * double(vp[j]);
        }
        nu = std::sqrt(nu);
        nv = std::sqrt(nv);
        if (nu < 1e-12 || nv < 1e-12)
            throw NumericError(std::string(what) + ": degenerate embedding norm in sample " +
                               std::to_string(i));
        double c = dot / (nu * nv);
        acc += mode == RedundancyMode::absolute ? std::abs(c) : c;
    }
    return acc / n;
}

template <typename T>
void cosine_mean_grad(const Tensor<T>& u, const Tensor<T>& v, RedundancyMode mode, double w,
                      Tensor<T>* gu, Tensor<T>* gv, const char* what) {
    int n = u.rank() == 2 ? u.dim(0) : 1;
    int64_t d = u.numel() / n;
    for (int i = 0; i < n; ++i) {
        const T* up = u.data() + int64_t(i) * d;
        const T* vp = v.data() + int64_t(i) * d;
        double dot = 0, nu2 = 0, nv2 = 0;
        for (int64_t j = 0; j < d; ++j) {
            dot += double(up[j]) * double(vp[j]);
            nu2 += double(up[j]) * double(up[j]);
            nv2 += double(vp[j]) * double(vp[j]);
        }
        double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
        if (nu < 1e-12 || nv < 1e-12)
            throw NumericError(std::string(what) + ": degenerate embedding norm in sample " +
                               std::to_string(i));
        double c = dot / (nu * nv);
        double outer = (mode == RedundancyMode::absolute && c < 0) ? -1.0 : 1.0;
        double scale = outer * w / n;
        // d cos / du_j = v_j / (|u||v|) - cos * u_j / |u|^2
        for (int64_t j = 0; j < d; ++j) {
            if (gu)
                (*gu)[int64_t(i) * d + j] += T(scale * (double(vp[j]) / (nu * nv) - c * double(up[j]) / nu2));
            if (gv)
                (*gv)[int64_t(i) * d + j] += T(scale * (double(up[j]) / (nu * nv) - c * double(vp[j]) / nv2));
        }
    }
}

// ---- named objective parts ----

template <typename T>
double loss_id(const Tensor<T>& f_id, const Tensor<T>& f_ref) {
    return l1_mean(f_id, f_ref, "loss_id");
}

// cos(id, attr) for the original face plus cos(id, attr) for the fake face;
// range [-2, 2] raw, [0, 2] absolute.
template <typename T>
double loss_redun(const Tensor<T>& f_ori_id, const Tensor<T>& f_ori_attr,
                  const Tensor<T>& f_fake_id, const Tensor<T>& f_fake_attr,
                  RedundancyMode mode = RedundancyMode::raw) {
    return cosine_mean(f_ori_id, f_ori_attr, mode, "loss_redun") +
           cosine_mean(f_fake_id, f_fake_attr, mode, "loss_redun");
}

template <typename T>
double loss_recon(const Tensor<T>& original, const Tensor<T>& reconstructed) {
    return sq_mean(original, reconstructed, "loss_recon");
}

template <typename T>
double loss_map(const Tensor<T>& f_ori_id, const Tensor<T>& f_gen_id) {
    return l1_mean(f_ori_id, f_gen_id, "loss_map");
}

template <typename T>
double loss_gen(const Tensor<T>& original, const Tensor<T>& traced) {
    return sq_mean(original, traced, "loss_gen");
}

template <typename T>
double loss_cycle(const Tensor<T>& f_ori_id, const Tensor<T>& f_traced_id) {
    return l1_mean(f_ori_id, f_traced_id, "loss_cycle");
}

template <typename T>
double loss_attr(const Tensor<T>& f_ori_attr, const Tensor<T>& f_fake_attr) {
    return l1_mean(f_ori_attr, f_fake_attr, "loss_attr");
}

// Weighted sum in fixed order. Any non-finite part (or a non-finite sum)
// faults with the name of the offending term.
inline LossBreakdown total_loss(const LossBreakdown& parts, const LossWeights& w) {
    auto check = [](double v, const char* name) {
        if (!std::isfinite(v))
            throw NumericError(std::string(name) + " is non-finite");
    };
    check(parts.id, "loss_id");
    check(parts.redun, "loss_redun");
    check(parts.recon, "loss_recon");
    check(parts.map, "loss_map");
    check(parts.gen, "loss_gen");
    check(parts.cycle, "loss_cycle");
    check(parts.attr, "loss_attr");

    LossBreakdown out = parts;
    out.total = w.id * parts.id + w.redun * parts.redun + w.recon * parts.recon +
                w.map * parts.map + w.gen * parts.gen + w.cycle * parts.cycle +
                w.attr * parts.attr;
    check(out.total, "total loss");
    return out;
}

} // namespace facetrace
