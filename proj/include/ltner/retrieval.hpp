#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ltner/corpus.hpp"
#include "ltner/http.hpp"

namespace ltner {

struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }
    double norm() const;
    bool operator==(const EmbeddingVector&) const = default;
};

/// Maps sentence text to a vector. Implementations must be safe to call
/// from several threads at once.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::string name() const = 0;
    /// Fixed output dimension, or 0 when only known after the first call.
    virtual std::size_t dim() const = 0;
    virtual EmbeddingVector embed(std::string_view text) const = 0;
};

/// Bag of lowercased whitespace tokens, each hashed with FNV-1a 64 into one of
/// `buckets` counters, then L2-normalized.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(std::size_t buckets = 256) : buckets_(buckets) {}
    std::string name() const override { return "hash" + std::to_string(buckets_); }
    std::size_t dim() const override { return buckets_; }
    EmbeddingVector embed(std::string_view text) const override;

private:
    std::size_t buckets_;
};

struct RemoteEmbedderOptions {
    std::string base_url = "https://api.openai.com/v1";
    std::string model = "text-embedding-3-small";
    std::string api_key;
    http::RetryPolicy retry;
    int timeout_s = 60;
};

/// OpenAI-compatible POST {base_url}/embeddings.
class RemoteEmbedder final : public Embedder {
public:
    explicit RemoteEmbedder(RemoteEmbedderOptions opts, http::Sleeper sleeper = http::real_sleeper());
    std::string name() const override { return "remote:" + opts_.model; }
    std::size_t dim() const override { return 0; }
    EmbeddingVector embed(std::string_view text) const override;

private:
    RemoteEmbedderOptions opts_;
    http::Sleeper sleep_;
};

struct IndexRecord {
    std::string example_id;
    EmbeddingVector vector;
    LabeledExample example;
};

struct Neighbor {
    std::string example_id;
    double similarity = 0;
    std::size_t rank = 0;  // 1-based

    bool operator==(const Neighbor&) const = default;
};

/// Exact cosine search over every stored vector. Built with add(), then
/// seal()ed; after sealing the index is immutable and safe for concurrent
/// queries.
class FlatIndex {
public:
    FlatIndex(std::size_t dim, std::string embedder);

    void add(LabeledExample example, EmbeddingVector vector);
    void seal() { sealed_ = true; }
    bool sealed() const { return sealed_; }

    std::size_t size() const { return records_.size(); }
    std::size_t dim() const { return dim_; }
    const std::string& embedder() const { return embedder_; }
    const std::vector<IndexRecord>& records() const { return records_; }
    const IndexRecord* find(std::string_view id) const;

    /// Cosine similarity between `query` and record `i`.
    double similarity(const EmbeddingVector& query, double query_norm, std::size_t i) const;

    /// Top-k by similarity descending, ties by insertion order. Parallel scan.
    std::vector<Neighbor> knn(const EmbeddingVector& query, std::size_t k) const;
    /// One knn per query, parallel over queries.
    std::vector<std::vector<Neighbor>> knn_batch(const std::vector<EmbeddingVector>& queries, std::size_t k) const;

    /// Content hash over dimension, embedder, ids, annotations and vectors.
    std::string fingerprint() const;

    /// Subset holding only the given ids, in this index's insertion order.
    FlatIndex subset(const std::vector<std::string>& ids) const;

private:
    void check_query(const EmbeddingVector& query, std::size_t k) const;
    std::vector<Neighbor> top_k(std::vector<double> sims, std::size_t k) const;

    std::size_t dim_;
    std::string embedder_;
    std::vector<IndexRecord> records_;
    std::vector<double> norms_;
    std::unordered_map<std::string, std::size_t> by_id_;
    bool sealed_ = false;
};

namespace reference {
/// Single-threaded knn kept as the baseline for the parallel scans.
std::vector<Neighbor> knn(const FlatIndex& index, const EmbeddingVector& query, std::size_t k);
}  // namespace reference

/// Embeds each example's plain sentence (up to `concurrency` calls in flight)
/// and returns a sealed index.
FlatIndex build_index(const std::vector<LabeledExample>& examples, const Embedder& embedder,
                      std::size_t concurrency = 4);

EmbeddingVector embed(std::string_view text, const Embedder& embedder);
/// Embeds texts with up to `concurrency` calls in flight; first failure wins.
std::vector<EmbeddingVector> embed_all(const std::vector<std::string>& texts, const Embedder& embedder,
                                       std::size_t concurrency = 4);

void save_index(const FlatIndex& index, const std::filesystem::path& path);
FlatIndex load_index(const std::filesystem::path& path);

/// "hash" (256 buckets), "hashN", or "remote" (uses LTNER_API_KEY).
std::unique_ptr<Embedder> make_embedder(std::string_view kind, const RemoteEmbedderOptions& remote = {});

}  // namespace ltner
