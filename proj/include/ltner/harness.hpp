#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ltner/corpus.hpp"
#include "ltner/eval.hpp"
#include "ltner/llm_client.hpp"
#include "ltner/marking.hpp"
#include "ltner/prompting.hpp"
#include "ltner/retrieval.hpp"

namespace ltner {

/// Every knob of one experiment. Serialized as JSON with these key names.
struct RunConfig {
    std::string dataset = "conll2003";
    std::string schema = "conll2003";  // LabelSchema::from_spec
    std::string corpus;                // corpus JSONL (train + test splits)
    std::string index;                 // index file; empty = build from the train split
    std::string embedder = "hash";     // hash | hashN | remote
    std::string embedding_model = "text-embedding-3-small";
    std::size_t shots = 30;
    std::string tag = "##entity##";  // preset key or <open>entity<close>
    std::string format = "tag";      // tag | json
    std::string role = "SUA";
    std::string instruction;  // template path; empty = built-in template for the format
    std::string ordering = "similar-last";
    std::string model = "gpt-3.5-turbo";
    std::string backend = "mock";  // live | replay | mock
    std::string mock_responder = "echo-gold";
    std::string cache_dir;  // replay cache
    bool fall_through = false;
    std::string base_url = "https://api.openai.com/v1";
    PriceTable prices = PriceTable::defaults();
    std::uint64_t seed = 13;
    std::size_t concurrency = 4;
    double requests_per_minute = 0;
    std::optional<Money> cost_cap;
    std::size_t limit_test = 0;               // 0 = whole test split
    std::optional<std::size_t> pool_budget;   // subsample the retrieval pool
    double temperature = 0.0;
    std::size_t max_output_tokens = 1024;
    int max_attempts = 5;
    std::string output_dir = "runs/latest";
    std::string neighbors_cache;  // empty = <output_dir>/neighbors.jsonl

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    /// Sets one key from its command-line text, typed after the current value.
    void set(const std::string& key, const std::string& value);

    /// SHA-256 of the canonical JSON of every field.
    std::string fingerprint() const;
    /// Throws ArgumentError on the first violated invariant.
    void validate() const;

    LabelSchema label_schema() const { return LabelSchema::from_spec(schema); }
    TagConfig tag_config() const { return tag_config_by_name(tag); }
    PromptPlan prompt_plan() const;
};

/// Parses each CoNLL file as the given split. An empty file is an error.
std::vector<LabeledExample> ingest_files(const std::vector<std::pair<std::filesystem::path, Split>>& files,
                                         const LabelSchema& schema, const std::string& id_prefix);

/// Built-in instruction templates (also shipped under data/prompts/).
const std::string& default_instruction(OutputFormat format);

struct NeighborTable {
    std::string index_fingerprint;
    std::size_t k = 0;
    std::unordered_map<std::string, std::vector<Neighbor>> by_sentence;
};

void save_neighbors(const NeighborTable& table, const std::filesystem::path& path);
std::optional<NeighborTable> load_neighbors(const std::filesystem::path& path);

/// Corpus, index and neighbors shared by every variant of an experiment.
struct Experiment {
    LabelSchema schema;
    std::vector<LabeledExample> train;
    std::vector<LabeledExample> test;
    std::shared_ptr<const FlatIndex> index;
    NeighborTable neighbors;
};

/// Loads corpus and index, then reuses or computes neighbors for `k` shots.
Experiment prepare_experiment(const RunConfig& cfg, std::size_t k,
                              const std::filesystem::path& neighbors_path = {});

/// knn for every test sentence, embedding queries `concurrency` at a time.
NeighborTable compute_neighbors(const FlatIndex& index, const std::vector<LabeledExample>& queries,
                                const Embedder& embedder, std::size_t k, std::size_t concurrency);

struct RunRecord {
    std::string sentence_id;
    std::string fingerprint;
    std::vector<Neighbor> neighbors;
    std::size_t shots = 0;
    std::string request_digest;  // replay cache key
    std::string content_digest;  // contents only, roles excluded
    std::string generation;
    Decoding decoding;
    TokenUsage usage;
    Money cost;
    int attempts = 1;
    BackendKind backend = BackendKind::Mock;
    std::string timestamp;

    nlohmann::json to_json() const;
    static RunRecord from_json(const nlohmann::json& j);
};

std::vector<RunRecord> read_records(const std::filesystem::path& path);

struct RunOutcome {
    ScoreReport report;
    Money total_cost;
    bool partial = false;
    std::string halt_reason;
    std::size_t discarded = 0;  // completed past the cost cap and dropped
    std::vector<RunRecord> records;
    std::string fingerprint;
};

/// Backend named by the config. Mock responders: echo-gold (the gold answer
/// in the configured format), echo-plain (the query unchanged).
std::shared_ptr<Backend> make_backend(const RunConfig& cfg, const Experiment& exp);

/// Runs the pipeline over the experiment's test sentences and, when
/// `out_dir` is non-empty, writes config.json, records.jsonl, report.json
/// and report.txt there. Records are written in sentence order.
RunOutcome run_experiment(const RunConfig& cfg, const Experiment& exp, Backend& backend,
                          const std::filesystem::path& out_dir);

/// Score a records file against the gold spans of a corpus.
ScoreReport score_records(const std::vector<RunRecord>& records, const std::vector<LabeledExample>& corpus);

struct GridRow {
    std::string variant;
    std::optional<RunOutcome> outcome;
    std::string error;  // non-empty when the variant failed
};

struct GridResult {
    std::vector<GridRow> rows;
    bool content_identical = true;  // role grids: contents matched across variants
};

GridResult ablate_tags(const RunConfig& base, const std::vector<TagConfig>& presets);
GridResult ablate_roles(const RunConfig& base, const std::vector<std::string>& roles);

enum class SweepDimension { Shots, Budget, CostCap };
SweepDimension sweep_dimension_from_string(std::string_view s);

struct SweepPoint {
    std::string value;
    std::optional<RunOutcome> outcome;
    std::string error;
};

/// Values must be ascending; "full" is accepted (last) for budget sweeps.
std::vector<SweepPoint> sweep(const RunConfig& base, SweepDimension dim, const std::vector<std::string>& values);
std::vector<std::string> default_sweep_values(SweepDimension dim);

std::string grid_to_csv(const GridResult& g);
std::string grid_to_text(const GridResult& g, const std::string& header);
std::string sweep_to_csv(const std::vector<SweepPoint>& points);

/// Group the records of several run directories by a config key.
std::vector<AggregateRow> aggregate_runs(const std::vector<std::filesystem::path>& run_dirs,
                                         const std::string& group_by);

}  // namespace ltner
