#pragma once

#include <map>
#include <string>
#include <vector>

#include "ltner/corpus.hpp"
#include "ltner/llm_client.hpp"
#include "ltner/marking.hpp"

namespace ltner {

struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0;

    double precision() const { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
    double recall() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
    double f1() const {
        const double p = precision(), r = recall();
        return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    }
    Counts& operator+=(const Counts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    bool operator==(const Counts&) const = default;
};

struct SentencePrediction {
    std::string id;
    std::vector<EntitySpan> spans;
    std::vector<Prediction> unaligned;
};

struct SentenceGold {
    std::string id;
    std::vector<EntitySpan> spans;
};

struct ScoreReport {
    Counts total;
    double precision = 0, recall = 0, f1 = 0;
    std::map<std::string, Counts> per_type;
    std::size_t n_sentences = 0;
    std::size_t gold_spans = 0;
    std::size_t predicted_spans = 0;  // after de-duplication, including unaligned
    std::map<std::string, std::size_t> diagnostics_summary;
};

/// Exact (start, end, label) matching, micro-averaged. Duplicate predicted
/// spans within a sentence count once; every unaligned prediction is a false
/// positive. Sentences are matched by id; a missing id on either side throws.
ScoreReport score(const std::vector<SentencePrediction>& predictions, const std::vector<SentenceGold>& gold);

namespace reference {
/// Serial scorer used as the baseline for the parallel one.
ScoreReport score(const std::vector<SentencePrediction>& predictions, const std::vector<SentenceGold>& gold);
}  // namespace reference

void add_diagnostics(ScoreReport& report, const Decoding& decoding);

nlohmann::json report_to_json(const ScoreReport& r);
ScoreReport report_from_json(const nlohmann::json& j);
/// Overall line plus one line per type, in aligned columns.
std::string report_to_text(const ScoreReport& r);

/// One scored sentence tagged with its group value, for aggregate().
struct AggregateItem {
    std::string group;
    SentencePrediction prediction;
    SentenceGold gold;
    Money cost;
    std::size_t shots = 0;
    std::map<std::string, std::size_t> diagnostics;
};

struct AggregateRow {
    std::string group;
    ScoreReport report;
    Money total_cost;
    double mean_shots = 0;
};

/// One row per distinct group value, in first-appearance order.
std::vector<AggregateRow> aggregate(const std::vector<AggregateItem>& items);

std::string rows_to_text(const std::vector<AggregateRow>& rows, const std::string& group_header);
nlohmann::json rows_to_json(const std::vector<AggregateRow>& rows);

}  // namespace ltner
