#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "ltner/corpus.hpp"

namespace ltner {

/// Delimiter pair for the inline marking format: open + surface + close + LABEL.
struct TagConfig {
    std::string open;
    std::string close;
    std::string name;

    /// Display key "<open>entity<close>", e.g. "##entity##".
    static TagConfig make(std::string open, std::string close);
    /// Inverse of the display key.
    static TagConfig parse(std::string_view key);

    bool operator==(const TagConfig&) const = default;
};

/// Well-formed delimiter pairs of the tag-format ablation grid.
const std::vector<TagConfig>& tag_presets();
/// Preset by display key, or a custom "<open>entity<close>" pair.
TagConfig tag_config_by_name(std::string_view name);

enum class ConfigViolation { EmptyDelimiter, WhitespaceInDelimiter, LabelCollision };

struct ConfigIssue {
    ConfigViolation kind;
    std::string detail;
};

std::string_view to_string(ConfigViolation v);

/// Empty list means the config is usable with this schema.
std::vector<ConfigIssue> validate_tag_config(const TagConfig& cfg, const LabelSchema& schema);

enum class RepairKind {
    UnmatchedOpen,   // open delimiter with no close before the end; dropped
    EmptyEntity,     // nothing between open and close; dropped
    UnknownLabel,    // text after close is not a schema label; dropped
    Unaligned,       // surface not found in the source; kept as unaligned
    TrimmedLabel,    // trailing punctuation removed from the label
    DetachedLabel,   // whitespace between close and label
    MalformedJson,   // JSON answer could not be parsed
};

std::string_view to_string(RepairKind k);
RepairKind repair_kind_from_string(std::string_view s);

struct Diagnostic {
    RepairKind kind;
    std::size_t position = 0;  // byte offset into the generation
    std::string detail;

    bool operator==(const Diagnostic&) const = default;
};

struct Prediction {
    std::string surface;
    std::string label;

    bool operator==(const Prediction&) const = default;
};

/// Result of parsing one generation against its source sentence.
struct Decoding {
    std::vector<EntitySpan> spans;  // sorted by start
    std::vector<Prediction> unaligned;
    std::vector<Diagnostic> diagnostics;
};

std::string encode_tagged(const LabeledExample& ex, const TagConfig& cfg);

/// Never throws on malformed generations; every repair is a diagnostic.
Decoding decode_tagged(std::string_view generation, const std::vector<std::string>& source, const TagConfig& cfg,
                       const LabelSchema& schema);

// JSON answer mode: the answer is the "label" object of to_json_record.
std::string encode_json_answer(const LabeledExample& ex);
Decoding decode_json_answer(std::string_view generation, const std::vector<std::string>& source,
                            const LabelSchema& schema);

enum class OutputFormat { Tag, Json };
std::string_view to_string(OutputFormat f);
OutputFormat output_format_from_string(std::string_view s);

nlohmann::json decoding_to_json(const Decoding& d);
Decoding decoding_from_json(const nlohmann::json& j);

}  // namespace ltner
