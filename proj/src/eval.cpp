#include "ltner/eval.hpp"

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>

#include "ltner/errors.hpp"

namespace ltner {

namespace {

struct SentenceScore {
    Counts counts;
    std::map<std::string, Counts> per_type;
    std::size_t gold = 0, predicted = 0;
};

SentenceScore score_sentence(const SentencePrediction& pred, const SentenceGold& gold) {
    SentenceScore s;
    std::vector<EntitySpan> spans = pred.spans;
    std::sort(spans.begin(), spans.end());
    spans.erase(std::unique(spans.begin(), spans.end()), spans.end());

    std::vector<bool> gold_used(gold.spans.size(), false);
    for (const auto& p : spans) {
        bool hit = false;
        for (std::size_t g = 0; g < gold.spans.size() && !hit; ++g) {
            if (!gold_used[g] && gold.spans[g] == p) {
                gold_used[g] = true;
                hit = true;
            }
        }
        if (hit) {
            ++s.counts.tp;
            ++s.per_type[p.label].tp;
        } else {
            ++s.counts.fp;
            ++s.per_type[p.label].fp;
        }
    }
    for (const auto& u : pred.unaligned) {
        ++s.counts.fp;
        ++s.per_type[u.label].fp;
    }
    for (std::size_t g = 0; g < gold.spans.size(); ++g) {
        if (!gold_used[g]) {
            ++s.counts.fn;
            ++s.per_type[gold.spans[g].label].fn;
        }
    }
    s.gold = gold.spans.size();
    s.predicted = spans.size() + pred.unaligned.size();
    return s;
}

// Pairs each gold sentence with its prediction; throws listing unmatched ids.
std::vector<std::size_t> pair_by_id(const std::vector<SentencePrediction>& predictions,
                                    const std::vector<SentenceGold>& gold) {
    std::unordered_map<std::string, std::size_t> pred_at;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (!pred_at.emplace(predictions[i].id, i).second)
            throw ArgumentError("duplicate prediction id " + predictions[i].id);
    }
    std::vector<std::size_t> pairing(gold.size());
    std::vector<std::string> missing_pred;
    std::set<std::string> gold_ids;
    for (std::size_t g = 0; g < gold.size(); ++g) {
        gold_ids.insert(gold[g].id);
        auto it = pred_at.find(gold[g].id);
        if (it == pred_at.end()) missing_pred.push_back(gold[g].id);
        else pairing[g] = it->second;
    }
    std::vector<std::string> missing_gold;
    for (const auto& p : predictions) {
        if (!gold_ids.count(p.id)) missing_gold.push_back(p.id);
    }
    if (!missing_pred.empty() || !missing_gold.empty()) {
        std::string msg = "prediction/gold id mismatch;";
        auto list = [&](const char* what, const std::vector<std::string>& ids) {
            if (ids.empty()) return;
            msg += std::string(" ") + what + ":";
            for (std::size_t i = 0; i < ids.size() && i < 20; ++i) msg += " " + ids[i];
            if (ids.size() > 20) msg += " ... (" + std::to_string(ids.size()) + " total)";
        };
        list("no prediction for", missing_pred);
        list("no gold for", missing_gold);
        throw ArgumentError(msg);
    }
    return pairing;
}

ScoreReport reduce(const std::vector<SentenceScore>& per_sentence) {
    ScoreReport r;
    for (const auto& s : per_sentence) {
        r.total += s.counts;
        for (const auto& [label, c] : s.per_type) r.per_type[label] += c;
        r.gold_spans += s.gold;
        r.predicted_spans += s.predicted;
    }
    r.n_sentences = per_sentence.size();
    r.precision = r.total.precision();
    r.recall = r.total.recall();
    r.f1 = r.total.f1();
    if (r.total.tp + r.total.fn != r.gold_spans || r.total.tp + r.total.fp != r.predicted_spans)
        throw Error("score bookkeeping violated tp+fn == gold or tp+fp == predicted");
    return r;
}

std::string fmt_pct(double x) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * x;
    return os.str();
}

nlohmann::json counts_to_json(const Counts& c) {
    return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"precision", c.precision()}, {"recall", c.recall()},
            {"f1", c.f1()}};
}

Counts counts_from_json(const nlohmann::json& j) {
    return {j.at("tp").get<std::size_t>(), j.at("fp").get<std::size_t>(), j.at("fn").get<std::size_t>()};
}

}  // namespace

ScoreReport score(const std::vector<SentencePrediction>& predictions, const std::vector<SentenceGold>& gold) {
    const auto pairing = pair_by_id(predictions, gold);
    std::vector<SentenceScore> per_sentence(gold.size());
    const auto n = static_cast<std::ptrdiff_t>(gold.size());
#pragma omp parallel for schedule(static) if (n > 512)
    for (std::ptrdiff_t g = 0; g < n; ++g) {
        const auto i = static_cast<std::size_t>(g);
        per_sentence[i] = score_sentence(predictions[pairing[i]], gold[i]);
    }
    return reduce(per_sentence);
}

ScoreReport reference::score(const std::vector<SentencePrediction>& predictions,
                             const std::vector<SentenceGold>& gold) {
    const auto pairing = pair_by_id(predictions, gold);
    std::vector<SentenceScore> per_sentence;
    per_sentence.reserve(gold.size());
    for (std::size_t g = 0; g < gold.size(); ++g) per_sentence.push_back(score_sentence(predictions[pairing[g]], gold[g]));
    return reduce(per_sentence);
}

void add_diagnostics(ScoreReport& report, const Decoding& decoding) {
    for (const auto& d : decoding.diagnostics) ++report.diagnostics_summary[std::string(to_string(d.kind))];
}

nlohmann::json report_to_json(const ScoreReport& r) {
    nlohmann::json per_type = nlohmann::json::object();
    for (const auto& [label, c] : r.per_type) per_type[label] = counts_to_json(c);
    return {{"tp", r.total.tp},
            {"fp", r.total.fp},
            {"fn", r.total.fn},
            {"precision", r.precision},
            {"recall", r.recall},
            {"f1", r.f1},
            {"per_type", per_type},
            {"n_sentences", r.n_sentences},
            {"gold_spans", r.gold_spans},
            {"predicted_spans", r.predicted_spans},
            {"diagnostics_summary", r.diagnostics_summary}};
}

ScoreReport report_from_json(const nlohmann::json& j) {
    ScoreReport r;
    r.total = counts_from_json(j);
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.f1 = j.at("f1").get<double>();
    for (const auto& [label, c] : j.at("per_type").items()) r.per_type[label] = counts_from_json(c);
    r.n_sentences = j.at("n_sentences").get<std::size_t>();
    r.gold_spans = j.value("gold_spans", std::size_t{0});
    r.predicted_spans = j.value("predicted_spans", std::size_t{0});
    r.diagnostics_summary = j.value("diagnostics_summary", std::map<std::string, std::size_t>{});
    return r;
}

std::string report_to_text(const ScoreReport& r) {
    std::ostringstream os;
    auto line = [&](const std::string& name, const Counts& c) {
        os << std::left << std::setw(10) << name << std::right << std::setw(8) << c.tp << std::setw(8) << c.fp
           << std::setw(8) << c.fn << std::setw(9) << fmt_pct(c.precision()) << std::setw(9) << fmt_pct(c.recall())
           << std::setw(9) << fmt_pct(c.f1()) << '\n';
    };
    os << std::left << std::setw(10) << "type" << std::right << std::setw(8) << "tp" << std::setw(8) << "fp"
       << std::setw(8) << "fn" << std::setw(9) << "P(%)" << std::setw(9) << "R(%)" << std::setw(9) << "F1(%)" << '\n';
    for (const auto& [label, c] : r.per_type) line(label, c);
    line("overall", r.total);
    os << "sentences: " << r.n_sentences << '\n';
    if (!r.diagnostics_summary.empty()) {
        os << "repairs:";
        for (const auto& [k, v] : r.diagnostics_summary) os << ' ' << k << '=' << v;
        os << '\n';
    }
    return os.str();
}

std::vector<AggregateRow> aggregate(const std::vector<AggregateItem>& items) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const AggregateItem*>> groups;
    for (const auto& it : items) {
        auto [pos, fresh] = groups.try_emplace(it.group);
        if (fresh) order.push_back(it.group);
        pos->second.push_back(&it);
    }
    std::vector<AggregateRow> rows;
    for (const auto& g : order) {
        const auto& members = groups[g];
        std::vector<SentencePrediction> preds;
        std::vector<SentenceGold> gold;
        AggregateRow row;
        row.group = g;
        double shots = 0;
        for (const auto* m : members) {
            preds.push_back(m->prediction);
            gold.push_back(m->gold);
            row.total_cost += m->cost;
            shots += static_cast<double>(m->shots);
        }
        row.report = score(preds, gold);
        for (const auto* m : members) {
            for (const auto& [k, v] : m->diagnostics) row.report.diagnostics_summary[k] += v;
        }
        row.mean_shots = members.empty() ? 0.0 : shots / static_cast<double>(members.size());
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string rows_to_text(const std::vector<AggregateRow>& rows, const std::string& group_header) {
    std::size_t width = group_header.size();
    for (const auto& r : rows) width = std::max(width, r.group.size());
    width += 2;
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << group_header << std::right << std::setw(10) << "sentences"
       << std::setw(9) << "P(%)" << std::setw(9) << "R(%)" << std::setw(9) << "F1(%)" << std::setw(14) << "cost"
       << std::setw(8) << "shots" << "  repairs\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(static_cast<int>(width)) << r.group << std::right << std::setw(10)
           << r.report.n_sentences << std::setw(9) << fmt_pct(r.report.precision) << std::setw(9)
           << fmt_pct(r.report.recall) << std::setw(9) << fmt_pct(r.report.f1) << std::setw(14)
           << r.total_cost.to_string() << std::setw(8) << std::fixed << std::setprecision(1) << r.mean_shots << "  ";
        bool first = true;
        for (const auto& [k, v] : r.report.diagnostics_summary) {
            os << (first ? "" : " ") << k << '=' << v;
            first = false;
        }
        if (first) os << '-';
        os << '\n';
    }
    return os.str();
}

nlohmann::json rows_to_json(const std::vector<AggregateRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
        auto j = report_to_json(r.report);
        j["group"] = r.group;
        j["total_cost"] = r.total_cost.to_string();
        j["mean_shots"] = r.mean_shots;
        arr.push_back(std::move(j));
    }
    return arr;
}

}  // namespace ltner
