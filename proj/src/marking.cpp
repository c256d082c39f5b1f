#include "ltner/marking.hpp"

#include <algorithm>
#include <cctype>
#include <optional>

#include "ltner/errors.hpp"

namespace ltner {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

constexpr std::string_view kEntityWord = "entity";
constexpr std::string_view kTrailingPunct = ".,;:!?";

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

struct LabelRead {
    std::string candidate;  // what was read, for UnknownLabel
    std::string label;      // schema label when ok
    std::size_t end = 0;    // one past the consumed label text
    bool ok = false;
    bool trimmed = false;
    bool detached = false;
};

LabelRead read_label(std::string_view gen, std::size_t at, const LabelSchema& schema) {
    LabelRead r;
    std::size_t i = at;
    if (i < gen.size() && is_space(gen[i])) {
        while (i < gen.size() && (gen[i] == ' ' || gen[i] == '\t')) ++i;
        r.detached = true;
    }
    std::size_t j = i;
    while (j < gen.size() && !is_space(gen[j])) ++j;
    std::string_view run = gen.substr(i, j - i);
    r.candidate = std::string(run);
    if (run.empty()) return r;
    if (schema.contains(run)) {
        r.ok = true;
        r.label = std::string(run);
        r.end = j;
        return r;
    }
    if (run.size() > 1 && kTrailingPunct.find(run.back()) != std::string_view::npos &&
        schema.contains(run.substr(0, run.size() - 1))) {
        r.ok = true;
        r.trimmed = true;
        r.label = std::string(run.substr(0, run.size() - 1));
        r.end = j - 1;
    }
    return r;
}

// Scanner state shared by the tag decoder passes.
class TagDecoder {
public:
    TagDecoder(std::string_view gen, const std::vector<std::string>& source, const TagConfig& cfg,
               const LabelSchema& schema)
        : gen_(gen), src_(source), cfg_(cfg), schema_(schema), consumed_(source.size(), false) {}

    Decoding run() {
        if (cfg_.open.empty() || cfg_.close.empty()) return std::move(out_);
        std::size_t p = 0;
        while (p < gen_.size()) {
            std::size_t q = gen_.find(cfg_.open, p);
            if (q == std::string_view::npos) break;
            std::size_t chunk_begin = q;
            while (chunk_begin > plain_start_ && !is_space(gen_[chunk_begin - 1])) --chunk_begin;
            std::size_t cursor = advance_cursor(gen_.substr(plain_start_, chunk_begin - plain_start_));

            if (auto next = try_markup(q, cursor)) {
                p = *next;
                continue;
            }
            std::size_t chunk_end = q;
            while (chunk_end < gen_.size() && !is_space(gen_[chunk_end])) ++chunk_end;
            if (is_literal_token(gen_.substr(chunk_begin, chunk_end - chunk_begin), cursor)) {
                p = chunk_end;
                continue;
            }
            p = drop_malformed(q, cursor);
        }
        std::sort(out_.spans.begin(), out_.spans.end());
        return std::move(out_);
    }

private:
    // Source cursor after the verbatim text in `plain`; only whole chunks move it.
    std::size_t advance_cursor(std::string_view plain) const {
        std::size_t cursor = cursor_;
        for (const auto& chunk : split_whitespace(plain)) {
            for (std::size_t j = cursor; j < src_.size(); ++j) {
                if (!consumed_[j] && src_[j] == chunk) {
                    cursor = j + 1;
                    break;
                }
            }
        }
        return cursor;
    }

    bool is_literal_token(std::string_view chunk, std::size_t cursor) const {
        for (std::size_t j = cursor; j < src_.size(); ++j) {
            if (!consumed_[j] && src_[j] == chunk) return true;
        }
        return false;
    }

    std::optional<std::size_t> align(const std::vector<std::string>& surface, std::size_t cursor) const {
        for (std::size_t from : {cursor, std::size_t{0}}) {
            for (bool fold : {false, true}) {
                if (auto at = find_unconsumed(src_, consumed_, surface, from, fold)) return at;
            }
        }
        return std::nullopt;
    }

    void commit(std::size_t at, std::size_t len, const std::string& label, std::size_t cursor) {
        for (std::size_t k = 0; k < len; ++k) consumed_[at + k] = true;
        out_.spans.push_back({at, at + len, label});
        cursor_ = std::max(cursor, at + len);
    }

    void note_label_repairs(const LabelRead& lr, std::size_t close_at) {
        if (lr.detached) out_.diagnostics.push_back({RepairKind::DetachedLabel, close_at, lr.label});
        if (lr.trimmed) out_.diagnostics.push_back({RepairKind::TrimmedLabel, close_at, lr.candidate});
    }

    // Tries every close after `q`, nearest first, and accepts the first one
    // whose surface aligns with the source and is followed by a schema label.
    // A delimiter string inside the accepted surface is then part of the
    // source text rather than markup.
    std::optional<std::size_t> try_markup(std::size_t q, std::size_t cursor) {
        const std::size_t body = q + cfg_.open.size();
        for (std::size_t r = gen_.find(cfg_.close, body); r != std::string_view::npos;
             r = gen_.find(cfg_.close, r + 1)) {
            std::string_view surface = trim(gen_.substr(body, r - body));
            if (surface.empty()) continue;
            LabelRead lr = read_label(gen_, r + cfg_.close.size(), schema_);
            if (!lr.ok) continue;
            auto toks = split_whitespace(surface);
            auto at = align(toks, cursor);
            if (!at) continue;
            commit(*at, toks.size(), lr.label, cursor);
            note_label_repairs(lr, r);
            plain_start_ = lr.end;
            return lr.end;
        }
        return std::nullopt;
    }

    // Nearest-close reading of a construct that failed try_markup; records
    // exactly one drop or unaligned diagnostic and returns the resume offset.
    std::size_t drop_malformed(std::size_t q, std::size_t cursor) {
        const std::size_t body = q + cfg_.open.size();
        const std::size_t r = gen_.find(cfg_.close, body);
        std::size_t resume;
        if (r == std::string_view::npos) {
            out_.diagnostics.push_back({RepairKind::UnmatchedOpen, q, std::string(gen_.substr(body, 40))});
            resume = body;
        } else {
            std::string_view surface = trim(gen_.substr(body, r - body));
            LabelRead lr = read_label(gen_, r + cfg_.close.size(), schema_);
            if (surface.empty()) {
                out_.diagnostics.push_back({RepairKind::EmptyEntity, q, {}});
                resume = r + cfg_.close.size();
            } else if (!lr.ok) {
                out_.diagnostics.push_back({RepairKind::UnknownLabel, r, lr.candidate});
                resume = r + cfg_.close.size();
            } else {
                note_label_repairs(lr, r);
                out_.unaligned.push_back({std::string(surface), lr.label});
                out_.diagnostics.push_back({RepairKind::Unaligned, q, std::string(surface)});
                resume = lr.end;
            }
        }
        plain_start_ = resume;
        cursor_ = cursor;
        return resume;
    }

    std::string_view gen_;
    const std::vector<std::string>& src_;
    const TagConfig& cfg_;
    const LabelSchema& schema_;
    std::vector<bool> consumed_;
    std::size_t cursor_ = 0;
    std::size_t plain_start_ = 0;
    Decoding out_;
};

}  // namespace

TagConfig TagConfig::make(std::string open, std::string close) {
    std::string name = open + std::string(kEntityWord) + close;
    return {std::move(open), std::move(close), std::move(name)};
}

TagConfig TagConfig::parse(std::string_view key) {
    auto at = key.find(kEntityWord);
    if (at == std::string_view::npos)
        throw ArgumentError("tag config '" + std::string(key) + "' must look like <open>entity<close>");
    return make(std::string(key.substr(0, at)), std::string(key.substr(at + kEntityWord.size())));
}

const std::vector<TagConfig>& tag_presets() {
    static const std::vector<TagConfig> presets = [] {
        const std::pair<const char*, const char*> pairs[] = {
            {"##", "@@"}, {"@@", "##"}, {"##", "##"}, {"@@", "@@"}, {"@@", "#"},   {"@@", "@"}, {"#", "#"},
            {"#", "@"},   {"[", "]"},   {"'", "'"},   {"<", ">"},   {"(", ")"},    {"+", "+"},  {"?", "?"},
            {"%", "%"},   {"{", "}"},   {"{{", "}}"}, {"[[", "]]"}, {"<<", ">>"}, {"%%", "%%"},
        };
        std::vector<TagConfig> v;
        for (auto [o, c] : pairs) v.push_back(TagConfig::make(o, c));
        return v;
    }();
    return presets;
}

TagConfig tag_config_by_name(std::string_view name) {
    for (const auto& p : tag_presets()) {
        if (p.name == name) return p;
    }
    return TagConfig::parse(name);
}

std::string_view to_string(ConfigViolation v) {
    switch (v) {
        case ConfigViolation::EmptyDelimiter: return "EmptyDelimiter";
        case ConfigViolation::WhitespaceInDelimiter: return "WhitespaceInDelimiter";
        case ConfigViolation::LabelCollision: return "LabelCollision";
    }
    return "?";
}

std::vector<ConfigIssue> validate_tag_config(const TagConfig& cfg, const LabelSchema& schema) {
    std::vector<ConfigIssue> issues;
    for (const auto* side : {&cfg.open, &cfg.close}) {
        const char* which = side == &cfg.open ? "open" : "close";
        if (side->empty()) {
            issues.push_back({ConfigViolation::EmptyDelimiter, std::string(which) + " delimiter is empty"});
            continue;
        }
        if (std::any_of(side->begin(), side->end(), is_space))
            issues.push_back({ConfigViolation::WhitespaceInDelimiter, std::string(which) + " delimiter has whitespace"});
        for (const auto& label : schema.names()) {
            if (label.find(*side) != std::string::npos)
                issues.push_back({ConfigViolation::LabelCollision,
                                  std::string(which) + " delimiter '" + *side + "' occurs in label " + label});
        }
    }
    return issues;
}

std::string_view to_string(RepairKind k) {
    switch (k) {
        case RepairKind::UnmatchedOpen: return "UnmatchedOpen";
        case RepairKind::EmptyEntity: return "EmptyEntity";
        case RepairKind::UnknownLabel: return "UnknownLabel";
        case RepairKind::Unaligned: return "Unaligned";
        case RepairKind::TrimmedLabel: return "TrimmedLabel";
        case RepairKind::DetachedLabel: return "DetachedLabel";
        case RepairKind::MalformedJson: return "MalformedJson";
    }
    return "?";
}

RepairKind repair_kind_from_string(std::string_view s) {
    for (auto k : {RepairKind::UnmatchedOpen, RepairKind::EmptyEntity, RepairKind::UnknownLabel,
                   RepairKind::Unaligned, RepairKind::TrimmedLabel, RepairKind::DetachedLabel,
                   RepairKind::MalformedJson}) {
        if (to_string(k) == s) return k;
    }
    throw ArgumentError("unknown repair kind '" + std::string(s) + "'");
}

std::string encode_tagged(const LabeledExample& ex, const TagConfig& cfg) {
    const auto& toks = ex.tokens();
    std::string out;
    auto span = ex.spans().begin();
    for (std::size_t i = 0; i < toks.size();) {
        if (i) out += ' ';
        if (span != ex.spans().end() && span->start == i) {
            out += cfg.open;
            out += ex.surface(*span);
            out += cfg.close;
            out += span->label;
            i = span->end;
            ++span;
        } else {
            out += toks[i++];
        }
    }
    return out;
}

Decoding decode_tagged(std::string_view generation, const std::vector<std::string>& source, const TagConfig& cfg,
                       const LabelSchema& schema) {
    return TagDecoder(generation, source, cfg, schema).run();
}

std::string encode_json_answer(const LabeledExample& ex) { return to_json_record(ex)["label"].dump(); }

Decoding decode_json_answer(std::string_view generation, const std::vector<std::string>& source,
                            const LabelSchema& schema) {
    Decoding out;
    const auto lbrace = generation.find('{');
    const auto rbrace = generation.rfind('}');
    nlohmann::ordered_json obj;
    if (lbrace == std::string_view::npos || rbrace == std::string_view::npos || rbrace < lbrace) {
        if (!trim(generation).empty())
            out.diagnostics.push_back({RepairKind::MalformedJson, 0, "no JSON object"});
        return out;
    }
    obj = nlohmann::ordered_json::parse(generation.substr(lbrace, rbrace - lbrace + 1), nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) {
        out.diagnostics.push_back({RepairKind::MalformedJson, lbrace, "unparseable object"});
        return out;
    }
    std::vector<bool> consumed(source.size(), false);
    for (const auto& [key, value] : obj.items()) {
        if (!schema.contains(key)) {
            out.diagnostics.push_back({RepairKind::UnknownLabel, lbrace, key});
            continue;
        }
        nlohmann::ordered_json list = value.is_array() ? value : nlohmann::ordered_json::array({value});
        for (const auto& item : list) {
            if (!item.is_string()) {
                out.diagnostics.push_back({RepairKind::MalformedJson, lbrace, "non-string surface under " + key});
                continue;
            }
            const std::string surface(trim(item.get<std::string>()));
            if (surface.empty()) {
                out.diagnostics.push_back({RepairKind::EmptyEntity, lbrace, key});
                continue;
            }
            auto toks = split_whitespace(surface);
            auto at = find_unconsumed(source, consumed, toks, 0, false);
            if (!at) at = find_unconsumed(source, consumed, toks, 0, true);
            if (!at) {
                out.unaligned.push_back({surface, key});
                out.diagnostics.push_back({RepairKind::Unaligned, lbrace, surface});
                continue;
            }
            for (std::size_t k = 0; k < toks.size(); ++k) consumed[*at + k] = true;
            out.spans.push_back({*at, *at + toks.size(), key});
        }
    }
    std::sort(out.spans.begin(), out.spans.end());
    return out;
}

std::string_view to_string(OutputFormat f) { return f == OutputFormat::Tag ? "tag" : "json"; }

OutputFormat output_format_from_string(std::string_view s) {
    if (s == "tag") return OutputFormat::Tag;
    if (s == "json") return OutputFormat::Json;
    throw ArgumentError("unknown output format '" + std::string(s) + "' (tag|json)");
}

nlohmann::json decoding_to_json(const Decoding& d) {
    nlohmann::json spans = nlohmann::json::array(), unaligned = nlohmann::json::array(),
                   diags = nlohmann::json::array();
    for (const auto& s : d.spans) spans.push_back(span_to_json(s));
    for (const auto& u : d.unaligned) unaligned.push_back({{"surface", u.surface}, {"label", u.label}});
    for (const auto& g : d.diagnostics)
        diags.push_back({{"kind", std::string(to_string(g.kind))}, {"position", g.position}, {"detail", g.detail}});
    return {{"spans", spans}, {"unaligned", unaligned}, {"diagnostics", diags}};
}

Decoding decoding_from_json(const nlohmann::json& j) {
    Decoding d;
    for (const auto& s : j.at("spans")) d.spans.push_back(span_from_json(s));
    for (const auto& u : j.at("unaligned"))
        d.unaligned.push_back({u.at("surface").get<std::string>(), u.at("label").get<std::string>()});
    for (const auto& g : j.at("diagnostics"))
        d.diagnostics.push_back({repair_kind_from_string(g.at("kind").get<std::string>()),
                                 g.at("position").get<std::size_t>(), g.at("detail").get<std::string>()});
    return d;
}

}  // namespace ltner
