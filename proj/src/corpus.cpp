#include "ltner/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "ltner/errors.hpp"

namespace ltner {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string upper(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

bool equal_fold(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(a[i])) != std::tolower(static_cast<unsigned char>(b[i])))
            return false;
    }
    return true;
}

std::string make_id(const IobOptions& opts, std::size_t n) {
    std::ostringstream os;
    os << opts.id_prefix << '-' << to_string(opts.split) << '-' << std::setw(6) << std::setfill('0') << n;
    return os.str();
}

// Span assembly for one sentence under IOB2 semantics.
std::vector<EntitySpan> spans_from_tags(const std::vector<std::string>& tags, const LabelSchema& schema,
                                        const std::vector<std::size_t>& line_numbers) {
    std::vector<EntitySpan> spans;
    std::optional<EntitySpan> open;
    auto close = [&](std::size_t at) {
        if (open) {
            open->end = at;
            spans.push_back(*open);
            open.reset();
        }
    };
    for (std::size_t i = 0; i < tags.size(); ++i) {
        const std::string& tag = tags[i];
        if (tag == "O") {
            close(i);
            continue;
        }
        if (tag.size() < 3 || (tag[0] != 'B' && tag[0] != 'I') || tag[1] != '-')
            throw ParseError("unrecognized tag '" + tag + "'", line_numbers[i]);
        std::string type = upper(std::string_view(tag).substr(2));
        if (!schema.contains(type))
            throw ParseError("tag '" + tag + "' names a type outside the " + schema.dataset() + " schema",
                             line_numbers[i]);
        bool continues = tag[0] == 'I' && open && open->label == type;
        if (!continues) {
            close(i);
            open = EntitySpan{i, i, type};
        }
    }
    close(tags.size());
    return spans;
}

}  // namespace

std::string_view to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Dev: return "dev";
        case Split::Test: return "test";
    }
    return "train";
}

Split split_from_string(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "dev" || s == "valid") return Split::Dev;
    if (s == "test") return Split::Test;
    throw ArgumentError("unknown split '" + std::string(s) + "'");
}

LabelSchema::LabelSchema(std::string dataset, std::vector<std::string> names)
    : dataset_(std::move(dataset)), names_(std::move(names)) {
    if (names_.empty()) throw ArgumentError("label schema must not be empty");
    std::set<std::string> seen;
    for (const auto& n : names_) {
        if (n.empty() || n != upper(n)) throw ArgumentError("label '" + n + "' must be non-empty uppercase");
        if (std::any_of(n.begin(), n.end(), is_space))
            throw ArgumentError("label '" + n + "' contains whitespace");
        if (!seen.insert(n).second) throw ArgumentError("duplicate label '" + n + "'");
    }
}

LabelSchema LabelSchema::conll2003() { return LabelSchema("conll2003", {"PER", "LOC", "ORG", "MISC"}); }

LabelSchema LabelSchema::wnut2017() {
    return LabelSchema("wnut2017", {"CORPORATION", "CREATIVE-WORK", "GROUP", "LOCATION", "PERSON", "PRODUCT"});
}

LabelSchema LabelSchema::from_spec(std::string_view spec) {
    if (spec == "conll2003" || spec == "conll") return conll2003();
    if (spec == "wnut2017" || spec == "wnut") return wnut2017();
    std::vector<std::string> names;
    std::string cur;
    for (char c : spec) {
        if (c == ',') {
            names.push_back(upper(cur));
            cur.clear();
        } else if (!is_space(c)) {
            cur += c;
        }
    }
    if (!cur.empty()) names.push_back(upper(cur));
    return LabelSchema("custom", std::move(names));
}

bool LabelSchema::contains(std::string_view label) const {
    return std::find(names_.begin(), names_.end(), label) != names_.end();
}

void check_spans(const std::vector<EntitySpan>& spans, std::size_t n_tokens) {
    std::size_t prev_end = 0;
    for (const auto& s : spans) {
        if (s.start >= s.end || s.end > n_tokens)
            throw ArgumentError("span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                                ") out of bounds for " + std::to_string(n_tokens) + " tokens");
        if (s.start < prev_end) throw ArgumentError("spans overlap or are unsorted");
        if (s.label.empty()) throw ArgumentError("span with empty label");
        prev_end = s.end;
    }
}

LabeledExample::LabeledExample(std::string id, std::vector<std::string> tokens, std::vector<EntitySpan> spans,
                               Split split)
    : id_(std::move(id)), tokens_(std::move(tokens)), spans_(std::move(spans)), split_(split) {
    for (const auto& t : tokens_) {
        if (t.empty() || std::any_of(t.begin(), t.end(), is_space))
            throw ArgumentError("example " + id_ + ": token '" + t + "' is empty or contains whitespace");
    }
    check_spans(spans_, tokens_.size());
}

std::string LabeledExample::sentence() const {
    std::string out;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (i) out += ' ';
        out += tokens_[i];
    }
    return out;
}

std::string LabeledExample::surface(const EntitySpan& span) const {
    std::string out;
    for (std::size_t i = span.start; i < span.end; ++i) {
        if (i > span.start) out += ' ';
        out += tokens_[i];
    }
    return out;
}

std::vector<LabeledExample> parse_iob(const std::vector<std::string>& lines, const LabelSchema& schema,
                                      const IobOptions& opts) {
    std::vector<LabeledExample> out;
    std::vector<std::string> tokens, tags;
    std::vector<std::size_t> line_numbers;
    std::size_t columns = 0;

    auto flush = [&] {
        if (tokens.empty()) return;
        bool docstart = tokens.front() == "-DOCSTART-";
        if (!docstart) {
            auto spans = spans_from_tags(tags, schema, line_numbers);
            out.emplace_back(make_id(opts, out.size()), std::move(tokens), std::move(spans), opts.split);
        }
        tokens.clear();
        tags.clear();
        line_numbers.clear();
    };

    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        std::string_view line = lines[ln];
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        auto cols = split_whitespace(line);
        if (cols.empty()) {
            flush();
            continue;
        }
        if (columns == 0) {
            if (cols.size() < 2) throw ParseError("expected at least 2 columns, got 1", ln + 1);
            columns = cols.size();
        } else if (cols.size() != columns) {
            throw ParseError("expected " + std::to_string(columns) + " columns, got " + std::to_string(cols.size()),
                             ln + 1);
        }
        tokens.push_back(cols.front());
        tags.push_back(cols.back());
        line_numbers.push_back(ln + 1);
    }
    flush();
    return out;
}

std::vector<LabeledExample> parse_iob(std::istream& in, const LabelSchema& schema, const IobOptions& opts) {
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
    return parse_iob(lines, schema, opts);
}

std::vector<LabeledExample> parse_iob_file(const std::filesystem::path& path, const LabelSchema& schema,
                                           const IobOptions& opts) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    try {
        return parse_iob(in, schema, opts);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

std::vector<std::string> to_iob2_tags(const LabeledExample& ex) {
    std::vector<std::string> tags(ex.tokens().size(), "O");
    for (const auto& s : ex.spans()) {
        tags[s.start] = "B-" + s.label;
        for (std::size_t i = s.start + 1; i < s.end; ++i) tags[i] = "I-" + s.label;
    }
    return tags;
}

nlohmann::ordered_json to_json_record(const LabeledExample& ex) {
    nlohmann::ordered_json label = nlohmann::ordered_json::object();
    for (const auto& s : ex.spans()) label[s.label].push_back(ex.surface(s));
    return {{"sentence", ex.sentence()}, {"label", label}};
}

std::vector<std::string> split_whitespace(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

std::optional<std::size_t> find_unconsumed(const std::vector<std::string>& tokens,
                                           const std::vector<bool>& consumed,
                                           const std::vector<std::string>& surface_tokens, std::size_t from,
                                           bool fold_case) {
    const std::size_t n = surface_tokens.size();
    if (n == 0 || n > tokens.size()) return std::nullopt;
    for (std::size_t i = from; i + n <= tokens.size(); ++i) {
        bool ok = true;
        for (std::size_t k = 0; k < n && ok; ++k) {
            if (consumed[i + k]) ok = false;
            else if (fold_case) ok = equal_fold(tokens[i + k], surface_tokens[k]);
            else ok = tokens[i + k] == surface_tokens[k];
        }
        if (ok) return i;
    }
    return std::nullopt;
}

LabeledExample from_json_record(const nlohmann::ordered_json& obj, std::string id, Split split) {
    if (!obj.is_object() || !obj.contains("sentence") || !obj["sentence"].is_string())
        throw ConversionError("record lacks a \"sentence\" string");
    if (obj.contains("id") && id.empty()) id = obj["id"].get<std::string>();
    if (obj.contains("split")) split = split_from_string(obj["split"].get<std::string>());
    auto tokens = split_whitespace(obj["sentence"].get<std::string>());
    std::vector<bool> consumed(tokens.size(), false);
    std::vector<EntitySpan> spans;
    std::vector<std::string> failed;
    if (obj.contains("label")) {
        const auto& label = obj["label"];
        if (!label.is_object()) throw ConversionError("\"label\" must be an object");
        for (const auto& [type, surfaces] : label.items()) {
            if (!surfaces.is_array()) throw ConversionError("label '" + type + "' must map to a list");
            for (const auto& s : surfaces) {
                auto surf = split_whitespace(s.get<std::string>());
                auto at = find_unconsumed(tokens, consumed, surf, 0, false);
                if (!at) {
                    failed.push_back(s.get<std::string>());
                    continue;
                }
                for (std::size_t k = 0; k < surf.size(); ++k) consumed[*at + k] = true;
                spans.push_back({*at, *at + surf.size(), type});
            }
        }
    }
    if (!failed.empty()) {
        std::string msg = "surfaces not alignable to sentence:";
        for (const auto& f : failed) msg += " '" + f + "'";
        throw ConversionError(msg);
    }
    std::sort(spans.begin(), spans.end());
    return LabeledExample(std::move(id), std::move(tokens), std::move(spans), split);
}

std::vector<LabeledExample> subsample_pool(const std::vector<LabeledExample>& examples, std::size_t n,
                                           std::uint64_t seed) {
    if (n > examples.size())
        throw ArgumentError("cannot sample " + std::to_string(n) + " of " + std::to_string(examples.size()) +
                            " examples");
    std::vector<const LabeledExample*> order;
    order.reserve(examples.size());
    for (const auto& e : examples) order.push_back(&e);
    auto by_id = [](const LabeledExample* a, const LabeledExample* b) { return a->id() < b->id(); };
    std::sort(order.begin(), order.end(), by_id);

    // Partial Fisher-Yates with a rejection-sampled bound so the subset does
    // not depend on the standard library's distribution implementations.
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t range = order.size() - i;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % range;
        std::uint64_t r;
        do r = rng();
        while (r >= limit);
        std::swap(order[i], order[i + r % range]);
    }
    order.resize(n);
    std::sort(order.begin(), order.end(), by_id);
    std::vector<LabeledExample> out;
    out.reserve(n);
    for (const auto* e : order) out.push_back(*e);
    return out;
}

nlohmann::json span_to_json(const EntitySpan& s) {
    return {{"start", s.start}, {"end", s.end}, {"label", s.label}};
}

EntitySpan span_from_json(const nlohmann::json& j) {
    return {j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>(), j.at("label").get<std::string>()};
}

nlohmann::json example_to_jsonl(const LabeledExample& ex) {
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& s : ex.spans()) spans.push_back(span_to_json(s));
    return {{"id", ex.id()},
            {"split", std::string(to_string(ex.split()))},
            {"sentence", ex.sentence()},
            {"tokens", ex.tokens()},
            {"spans", spans}};
}

LabeledExample example_from_jsonl(const nlohmann::json& obj) {
    std::vector<EntitySpan> spans;
    for (const auto& s : obj.at("spans")) spans.push_back(span_from_json(s));
    return LabeledExample(obj.at("id").get<std::string>(), obj.at("tokens").get<std::vector<std::string>>(),
                          std::move(spans), split_from_string(obj.at("split").get<std::string>()));
}

void write_corpus(const std::filesystem::path& path, const std::vector<LabeledExample>& examples) {
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path.string());
    for (const auto& e : examples) out << example_to_jsonl(e).dump() << '\n';
}

std::vector<LabeledExample> read_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open corpus " + path.string());
    std::vector<LabeledExample> out;
    std::set<std::string> ids;
    std::size_t ln = 0;
    for (std::string line; std::getline(in, line);) {
        ++ln;
        if (line.empty()) continue;
        try {
            out.push_back(example_from_jsonl(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw LoadError(path.string() + ":" + std::to_string(ln) + ": " + e.what());
        }
        if (!ids.insert(out.back().id()).second)
            throw LoadError(path.string() + ":" + std::to_string(ln) + ": duplicate id " + out.back().id());
    }
    return out;
}

CorpusStats corpus_stats(const std::vector<LabeledExample>& examples) {
    CorpusStats st;
    for (const auto& e : examples) {
        ++st.sentences_per_split[std::string(to_string(e.split()))];
        st.tokens += e.tokens().size();
        for (const auto& s : e.spans()) ++st.entities_per_type[s.label];
    }
    return st;
}

}  // namespace ltner
