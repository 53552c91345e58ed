#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lacos/data.hpp"
#include "lacos/encoder.hpp"
#include "lacos/objective.hpp"
#include "lacos/vocab.hpp"

namespace lacos {

/// 1-based fractional ranks; tied values share the average of their ranks.
std::vector<double> average_ranks(const std::vector<double>& values);

/// Spearman rank correlation: Pearson correlation of the two rank vectors
/// (tie-safe general form). Throws ShapeError for mismatched or short inputs
/// and DegenerateError when either rank vector has zero variance.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

constexpr std::array<SimilarityKind, 4> kReportSimilarityOrder = {
    SimilarityKind::cosine,
    SimilarityKind::neg_manhattan,
    SimilarityKind::neg_euclidean,
    SimilarityKind::dot,
};

/// Rank correlation against gold for each similarity function. A similarity
/// whose score list has zero rank variance (or constant gold) is flagged
/// degenerate and excluded from the max; with no survivors max_rho is absent.
struct EvalReport {
    std::size_t n_pairs = 0;
    std::array<std::optional<double>, 4> rho_by_kind; // indexed by SimilarityKind
    std::optional<double> max_rho;

    std::optional<double> rho(SimilarityKind kind) const {
        return rho_by_kind[static_cast<std::size_t>(kind)];
    }
    std::vector<SimilarityKind> degenerate() const {
        std::vector<SimilarityKind> out;
        for (const auto kind : kReportSimilarityOrder) {
            if (!rho(kind).has_value()) out.push_back(kind);
        }
        return out;
    }
    bool all_degenerate() const { return !max_rho.has_value(); }
};

using EmbedFn = std::function<std::vector<double>(const std::string&)>;

EvalReport sts_eval(const EmbedFn& embed, const std::vector<StsRecord>& records);

/// Embeds each sentence with the encoder (one-row batches, no grad use).
EvalReport sts_eval(const SentenceEncoder& model, const Vocabulary& vocab,
                    const std::vector<StsRecord>& records);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

/// Min-max standardization to [0, 1]. Needs >= 2 values; throws
/// DegenerateError when all values are equal (zero range).
std::vector<double> standardize_losses(const std::vector<double>& losses);

} // namespace lacos
