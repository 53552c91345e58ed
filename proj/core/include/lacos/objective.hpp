#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lacos/errors.hpp"
#include "lacos/tensor.hpp"

namespace lacos {

enum class SimilarityKind {
    cosine,
    dot,
    neg_euclidean,
    neg_manhattan,
};

inline const char* to_string(SimilarityKind k) {
    switch (k) {
    case SimilarityKind::cosine: return "cosine";
    case SimilarityKind::dot: return "dot";
    case SimilarityKind::neg_euclidean: return "euclidean";
    case SimilarityKind::neg_manhattan: return "manhattan";
    }
    return "?";
}

/// Scalar similarity between two embedding vectors. Distances are negated so
/// that larger always means more similar.
inline double similarity(const std::vector<double>& u, const std::vector<double>& v,
                         SimilarityKind kind) {
    if (u.size() != v.size()) {
        throw ShapeError("similarity: dimension mismatch " + std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
    }
    switch (kind) {
    case SimilarityKind::cosine: {
        double dot = 0, nu = 0, nv = 0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            dot += u[i] * v[i];
            nu += u[i] * u[i];
            nv += v[i] * v[i];
        }
        if (!(nu > 0) || !(nv > 0)) throw NumericError("cosine: zero-norm vector");
        return dot / (std::sqrt(nu) * std::sqrt(nv));
    }
    case SimilarityKind::dot: {
        double dot = 0;
        for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * v[i];
        return dot;
    }
    case SimilarityKind::neg_euclidean: {
        double ss = 0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            const double d = u[i] - v[i];
            ss += d * d;
        }
        return -std::sqrt(ss);
    }
    case SimilarityKind::neg_manhattan: {
        double s = 0;
        for (std::size_t i = 0; i < u.size(); ++i) s += std::fabs(u[i] - v[i]);
        return -s;
    }
    }
    throw ConfigError("similarity: unknown kind");
}

enum class Reduction { sum, mean };

struct MnrConfig {
    double scale = 1.0;
    Reduction reduction = Reduction::sum;
};

/// Multiple-negatives-ranking loss over aligned embedding rows: positives on
/// the diagonal of the scaled cosine-similarity matrix, every other row pair
/// in the batch acting as a negative. Differentiable w.r.t. both inputs.
template <class S>
TensorT<S> mnr_loss(GraphT<S>& g, const TensorT<S>& u, const TensorT<S>& v,
                    const MnrConfig& cfg = {}) {
    if (!(cfg.scale > 0)) throw ConfigError("mnr_loss: scale must be positive");
    if (u.rows() != v.rows() || u.cols() != v.cols()) {
        throw ShapeError("mnr_loss: shape mismatch " + u.shape_str() + " vs " + v.shape_str());
    }
    if (u.rows() < 1) throw ShapeError("mnr_loss: empty batch");
    auto un = g.row_l2_normalize(u);
    auto vn = g.row_l2_normalize(v);
    auto sim = g.matmul_nt(un, vn); // n x n cosine matrix
    if (cfg.scale != 1.0) sim = g.scale(sim, static_cast<S>(cfg.scale));
    auto lse = g.logsumexp_rows(sim);
    auto pos = g.diag(sim);
    auto per_row = g.sub(lse, pos);
    auto total = g.sum(per_row);
    if (cfg.reduction == Reduction::mean) {
        total = g.scale(total, S(1) / static_cast<S>(u.rows()));
    }
    return total;
}

/// Fraction of rows whose best cosine match in v is their aligned partner;
/// ties break toward the lowest index.
template <class S>
double mnr_accuracy(const TensorT<S>& u, const TensorT<S>& v) {
    if (u.rows() != v.rows() || u.cols() != v.cols()) {
        throw ShapeError("mnr_accuracy: shape mismatch " + u.shape_str() + " vs " + v.shape_str());
    }
    const std::size_t n = u.rows(), d = u.cols();
    if (n < 1) throw ShapeError("mnr_accuracy: empty batch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> ui(d);
        for (std::size_t c = 0; c < d; ++c) ui[c] = u.at(i, c);
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < n; ++j) {
            std::vector<double> vj(d);
            for (std::size_t c = 0; c < d; ++c) vj[c] = v.at(j, c);
            const double s = similarity(ui, vj, SimilarityKind::cosine);
            if (s > best) {
                best = s;
                best_j = j;
            }
        }
        if (best_j == i) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

} // namespace lacos
