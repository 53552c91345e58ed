#include "lacos/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "lacos/errors.hpp"
#include "lacos/tensor.hpp"

namespace lacos {

std::vector<double> average_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double shared = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
        i = j + 1;
    }
    return ranks;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) {
        throw ShapeError("spearman: length mismatch " + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()));
    }
    if (x.size() < 2) throw ShapeError("spearman: need at least 2 observations");
    const auto ra = average_ranks(x);
    const auto rb = average_ranks(y);
    const double n = static_cast<double>(ra.size());
    const double mean = (n + 1.0) / 2.0; // fractional ranks always sum to n(n+1)/2
    double cov = 0.0, var_a = 0.0, var_b = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        const double da = ra[i] - mean;
        const double db = rb[i] - mean;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if (var_a == 0.0 || var_b == 0.0) {
        throw DegenerateError("spearman: constant input has no rank ordering");
    }
    return cov / std::sqrt(var_a * var_b);
}

EvalReport sts_eval(const EmbedFn& embed, const std::vector<StsRecord>& records) {
    if (records.size() < 2) throw ShapeError("sts_eval: need at least 2 records");
    std::vector<double> gold;
    gold.reserve(records.size());
    std::array<std::vector<double>, 4> scores;
    for (auto& list : scores) list.reserve(records.size());
    for (const auto& rec : records) {
        const auto u = embed(rec.sentence1);
        const auto v = embed(rec.sentence2);
        gold.push_back(rec.score);
        for (const auto kind : kReportSimilarityOrder) {
            scores[static_cast<std::size_t>(kind)].push_back(similarity(u, v, kind));
        }
    }
    EvalReport report;
    report.n_pairs = records.size();
    for (const auto kind : kReportSimilarityOrder) {
        try {
            const double rho = spearman(scores[static_cast<std::size_t>(kind)], gold);
            report.rho_by_kind[static_cast<std::size_t>(kind)] = rho;
            if (!report.max_rho || rho > *report.max_rho) report.max_rho = rho;
        } catch (const DegenerateError&) {
            // constant similarity list (or constant gold): excluded from max
        }
    }
    return report;
}

EvalReport sts_eval(const SentenceEncoder& model, const Vocabulary& vocab,
                    const std::vector<StsRecord>& records) {
    const std::size_t max_seq_len = model.config().max_seq_len;
    const std::size_t vocab_size = model.config().vocab_size;
    EmbedFn embed = [&](const std::string& text) {
        const auto ids = tokenize(text, vocab, max_seq_len);
        const TokenBatch batch = make_token_batch({ids}, vocab_size);
        Graph g;
        const Tensor out = model.encode(g, batch);
        std::vector<double> row(out.cols());
        for (std::size_t j = 0; j < out.cols(); ++j) row[j] = out.at(0, j);
        return row;
    };
    return sts_eval(embed, records);
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::ordered_json spearman_obj;
    for (const auto kind : kReportSimilarityOrder) {
        const auto rho = report.rho(kind);
        if (rho.has_value()) {
            spearman_obj[to_string(kind)] = *rho;
        } else {
            spearman_obj[to_string(kind)] = nullptr;
        }
    }
    nlohmann::ordered_json root;
    root["spearman"] = spearman_obj;
    if (report.max_rho.has_value()) root["max"] = *report.max_rho;
    root["n"] = report.n_pairs;
    nlohmann::ordered_json degen = nlohmann::ordered_json::array();
    for (const auto kind : report.degenerate()) degen.push_back(to_string(kind));
    root["degenerate"] = degen;
    return root.dump(2);
}

EvalReport report_from_json(const std::string& text) {
    const auto root = nlohmann::json::parse(text, nullptr, false);
    if (root.is_discarded() || !root.is_object() || !root.contains("spearman") ||
        !root.contains("n")) {
        throw DataError("evaluation report: invalid JSON");
    }
    EvalReport report;
    report.n_pairs = root["n"].get<std::size_t>();
    for (const auto kind : kReportSimilarityOrder) {
        const auto& entry = root["spearman"][to_string(kind)];
        if (entry.is_number()) {
            report.rho_by_kind[static_cast<std::size_t>(kind)] = entry.get<double>();
        }
    }
    if (root.contains("max") && root["max"].is_number()) {
        report.max_rho = root["max"].get<double>();
    }
    return report;
}

std::vector<double> standardize_losses(const std::vector<double>& losses) {
    if (losses.size() < 2) throw ShapeError("standardize_losses: need at least 2 values");
    const auto [lo_it, hi_it] = std::minmax_element(losses.begin(), losses.end());
    const double lo = *lo_it, hi = *hi_it;
    if (lo == hi) throw DegenerateError("standardize_losses: all values equal");
    std::vector<double> out;
    out.reserve(losses.size());
    for (const double v : losses) out.push_back((v - lo) / (hi - lo));
    return out;
}

} // namespace lacos
