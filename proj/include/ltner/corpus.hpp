#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ltner {

enum class Split { Train, Dev, Test };

std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

/// Half-open token range [start, end) with an entity type.
struct EntitySpan {
    std::size_t start = 0;
    std::size_t end = 0;
    std::string label;

    std::size_t length() const { return end - start; }
    auto operator<=>(const EntitySpan&) const = default;
};

/// Ordered, unique, uppercase entity type names for one dataset.
class LabelSchema {
public:
    LabelSchema(std::string dataset, std::vector<std::string> names);

    static LabelSchema conll2003();
    static LabelSchema wnut2017();
    /// "conll2003", "wnut2017", or a comma-separated list of names.
    static LabelSchema from_spec(std::string_view spec);

    const std::string& dataset() const { return dataset_; }
    const std::vector<std::string>& names() const { return names_; }
    bool contains(std::string_view label) const;

private:
    std::string dataset_;
    std::vector<std::string> names_;
};

/// A tokenized sentence with its gold entities.
///
/// Tokens hold no whitespace; spans are sorted by start, non-overlapping
/// and lie within the sentence. Construction checks all of this.
class LabeledExample {
public:
    LabeledExample(std::string id, std::vector<std::string> tokens, std::vector<EntitySpan> spans,
                   Split split);

    const std::string& id() const { return id_; }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::vector<EntitySpan>& spans() const { return spans_; }
    Split split() const { return split_; }

    /// Tokens joined by single spaces.
    std::string sentence() const;
    std::string surface(const EntitySpan& span) const;

    bool operator==(const LabeledExample&) const = default;

private:
    std::string id_;
    std::vector<std::string> tokens_;
    std::vector<EntitySpan> spans_;
    Split split_;
};

/// Throws ArgumentError unless spans are sorted, disjoint and inside [0, n_tokens).
void check_spans(const std::vector<EntitySpan>& spans, std::size_t n_tokens);

struct IobOptions {
    std::string id_prefix = "ex";
    Split split = Split::Train;
};

/// Parses CoNLL column data (token first, NER tag last, blank line between
/// sentences). -DOCSTART- sentences are dropped and IOB1 input is read with
/// IOB2 span semantics: an I- tag that does not continue a span of the same
/// type opens a new one.
std::vector<LabeledExample> parse_iob(std::istream& in, const LabelSchema& schema,
                                      const IobOptions& opts = {});
std::vector<LabeledExample> parse_iob(const std::vector<std::string>& lines, const LabelSchema& schema,
                                      const IobOptions& opts = {});
std::vector<LabeledExample> parse_iob_file(const std::filesystem::path& path, const LabelSchema& schema,
                                           const IobOptions& opts = {});

/// IOB2 tags for an example ("O", "B-LOC", "I-LOC", ...).
std::vector<std::string> to_iob2_tags(const LabeledExample& ex);

/// {"sentence": "...", "label": {"LOC": [...]}}, label keys in order of
/// first mention, surfaces in span order.
nlohmann::ordered_json to_json_record(const LabeledExample& ex);

/// Inverse of to_json_record. Each surface is aligned to the leftmost
/// token subsequence not consumed by an earlier surface.
LabeledExample from_json_record(const nlohmann::ordered_json& obj, std::string id = "",
                                Split split = Split::Test);

/// Deterministic subset of n examples, returned sorted by id.
std::vector<LabeledExample> subsample_pool(const std::vector<LabeledExample>& examples, std::size_t n,
                                           std::uint64_t seed);

/// Leftmost run of unconsumed tokens equal to `surface_tokens` starting at or
/// after `from`; case-insensitive when `fold_case`.
std::optional<std::size_t> find_unconsumed(const std::vector<std::string>& tokens,
                                           const std::vector<bool>& consumed,
                                           const std::vector<std::string>& surface_tokens, std::size_t from,
                                           bool fold_case);

std::vector<std::string> split_whitespace(std::string_view text);

// Corpus JSON-lines files: one {"id","split","sentence","tokens","spans"} per line.
nlohmann::json example_to_jsonl(const LabeledExample& ex);
LabeledExample example_from_jsonl(const nlohmann::json& obj);
void write_corpus(const std::filesystem::path& path, const std::vector<LabeledExample>& examples);
std::vector<LabeledExample> read_corpus(const std::filesystem::path& path);

struct CorpusStats {
    std::map<std::string, std::size_t> sentences_per_split;
    std::map<std::string, std::size_t> entities_per_type;
    std::size_t tokens = 0;
};
CorpusStats corpus_stats(const std::vector<LabeledExample>& examples);

nlohmann::json span_to_json(const EntitySpan& s);
EntitySpan span_from_json(const nlohmann::json& j);

}  // namespace ltner
