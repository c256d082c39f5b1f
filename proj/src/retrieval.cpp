#include "ltner/retrieval.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include "ltner/digest.hpp"
#include "ltner/errors.hpp"

namespace ltner {

namespace {

constexpr std::string_view kIndexFormat = "ltner-index";
constexpr int kIndexVersion = 1;

// Four interleaved partial sums in a fixed order, so every caller gets the
// same bits regardless of thread count.
double dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

// Similarity descending, then insertion order ascending.
struct RankOrder {
    const std::vector<double>& sims;
    bool operator()(std::size_t a, std::size_t b) const {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        return a < b;
    }
};

}  // namespace

double EmbeddingVector::norm() const { return std::sqrt(dot(values.data(), values.data(), values.size())); }

EmbeddingVector HashingEmbedder::embed(std::string_view text) const {
    std::string lowered(text);
    for (auto& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    auto tokens = split_whitespace(lowered);
    if (tokens.empty()) throw ArgumentError("cannot embed empty text");
    EmbeddingVector v{std::vector<double>(buckets_, 0.0)};
    for (const auto& t : tokens) v.values[fnv1a64(t) % buckets_] += 1.0;
    const double n = v.norm();
    for (auto& x : v.values) x /= n;
    return v;
}

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderOptions opts, http::Sleeper sleeper)
    : opts_(std::move(opts)), sleep_(std::move(sleeper)) {}

EmbeddingVector RemoteEmbedder::embed(std::string_view text) const {
    if (split_whitespace(text).empty()) throw ArgumentError("cannot embed empty text");
    const std::string body = nlohmann::json{{"model", opts_.model}, {"input", std::string(text)}}.dump(
        -1, ' ', false, nlohmann::json::error_handler_t::replace);
    return http::with_retries(opts_.retry, sleep_, [&] {
        auto res = http::post_json(opts_.base_url, "/embeddings", body, opts_.api_key,
                                   std::chrono::seconds(opts_.timeout_s));
        if (res.status == 429) throw http::RetryAfter("embeddings: HTTP 429", res.retry_after_s);
        if (res.status >= 500) throw BackendError("embeddings: HTTP " + std::to_string(res.status), true);
        if (res.status != 200)
            throw BackendError("embeddings: HTTP " + std::to_string(res.status) + ": " + res.body, false);
        auto j = nlohmann::json::parse(res.body, nullptr, false);
        if (j.is_discarded() || !j.contains("data") || j["data"].empty())
            throw BackendError("embeddings: malformed response", false);
        return EmbeddingVector{j["data"][0].at("embedding").get<std::vector<double>>()};
    });
}

EmbeddingVector embed(std::string_view text, const Embedder& embedder) { return embedder.embed(text); }

FlatIndex::FlatIndex(std::size_t dim, std::string embedder) : dim_(dim), embedder_(std::move(embedder)) {
    if (dim_ == 0) throw ArgumentError("index dimension must be positive");
}

void FlatIndex::add(LabeledExample example, EmbeddingVector vector) {
    if (sealed_) throw ArgumentError("index is sealed");
    if (vector.dim() != dim_)
        throw ArgumentError("vector dimension " + std::to_string(vector.dim()) + " != index dimension " +
                            std::to_string(dim_));
    const double n = vector.norm();
    if (!(n > 0) || !std::isfinite(n)) throw ArgumentError("vector for " + example.id() + " has zero norm");
    std::string id = example.id();
    if (!by_id_.emplace(id, records_.size()).second) throw ArgumentError("duplicate index id " + id);
    norms_.push_back(n);
    records_.push_back({std::move(id), std::move(vector), std::move(example)});
}

const IndexRecord* FlatIndex::find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &records_[it->second];
}

double FlatIndex::similarity(const EmbeddingVector& query, double query_norm, std::size_t i) const {
    return dot(query.values.data(), records_[i].vector.values.data(), dim_) / (query_norm * norms_[i]);
}

void FlatIndex::check_query(const EmbeddingVector& query, std::size_t k) const {
    if (!sealed_) throw ArgumentError("index must be sealed before searching");
    if (k == 0) return;
    if (records_.empty()) throw ArgumentError("knn on an empty index");
    if (query.dim() != dim_)
        throw ArgumentError("query dimension " + std::to_string(query.dim()) + " != index dimension " +
                            std::to_string(dim_));
    if (!(query.norm() > 0)) throw ArgumentError("query vector has zero norm");
}

std::vector<Neighbor> FlatIndex::top_k(std::vector<double> sims, std::size_t k) const {
    k = std::min(k, sims.size());
    std::vector<std::size_t> order(sims.size());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), RankOrder{sims});
    std::vector<Neighbor> out;
    out.reserve(k);
    for (std::size_t r = 0; r < k; ++r) out.push_back({records_[order[r]].example_id, sims[order[r]], r + 1});
    return out;
}

std::vector<Neighbor> FlatIndex::knn(const EmbeddingVector& query, std::size_t k) const {
    check_query(query, k);
    if (k == 0) return {};
    const double qn = query.norm();
    const auto n = static_cast<std::ptrdiff_t>(records_.size());
    std::vector<double> sims(records_.size());
#pragma omp parallel for schedule(static) if (n > 2048)
    for (std::ptrdiff_t i = 0; i < n; ++i) sims[static_cast<std::size_t>(i)] = similarity(query, qn, static_cast<std::size_t>(i));
    return top_k(std::move(sims), k);
}

std::vector<std::vector<Neighbor>> FlatIndex::knn_batch(const std::vector<EmbeddingVector>& queries,
                                                        std::size_t k) const {
    for (const auto& q : queries) check_query(q, k);
    std::vector<std::vector<Neighbor>> out(queries.size());
    if (k == 0) return out;
    const auto nq = static_cast<std::ptrdiff_t>(queries.size());
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t qi = 0; qi < nq; ++qi) {
        const auto& q = queries[static_cast<std::size_t>(qi)];
        const double qn = q.norm();
        std::vector<double> sims(records_.size());
        for (std::size_t i = 0; i < records_.size(); ++i) sims[i] = similarity(q, qn, i);
        out[static_cast<std::size_t>(qi)] = top_k(std::move(sims), k);
    }
    return out;
}

std::string FlatIndex::fingerprint() const {
    std::string buf = std::string(kIndexFormat) + '\n' + std::to_string(dim_) + '\n' + embedder_ + '\n';
    for (const auto& r : records_) {
        buf += r.example_id;
        buf += '\t';
        buf += r.example.sentence();
        for (const auto& s : r.example.spans())
            buf += '\t' + std::to_string(s.start) + ':' + std::to_string(s.end) + ':' + s.label;
        buf += '\n';
        buf.append(reinterpret_cast<const char*>(r.vector.values.data()), r.vector.values.size() * sizeof(double));
    }
    return sha256_hex(buf);
}

FlatIndex FlatIndex::subset(const std::vector<std::string>& ids) const {
    std::vector<std::size_t> rows;
    for (const auto& id : ids) {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) throw ArgumentError("id " + id + " not in index");
        rows.push_back(it->second);
    }
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    FlatIndex out(dim_, embedder_);
    for (auto i : rows) out.add(records_[i].example, records_[i].vector);
    out.seal();
    return out;
}

std::vector<Neighbor> reference::knn(const FlatIndex& index, const EmbeddingVector& query, std::size_t k) {
    if (k == 0) return {};
    if (index.size() == 0) throw ArgumentError("knn on an empty index");
    if (query.dim() != index.dim()) throw ArgumentError("query dimension mismatch");
    const double qn = query.norm();
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) scored.emplace_back(index.similarity(query, qn, i), i);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<Neighbor> out;
    for (std::size_t r = 0; r < std::min(k, scored.size()); ++r)
        out.push_back({index.records()[scored[r].second].example_id, scored[r].first, r + 1});
    return out;
}

std::vector<EmbeddingVector> embed_all(const std::vector<std::string>& texts, const Embedder& embedder,
                                       std::size_t concurrency) {
    std::vector<EmbeddingVector> vectors(texts.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < texts.size();) {
            try {
                vectors[i] = embedder.embed(texts[i]);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next = texts.size();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 1; t < std::max<std::size_t>(concurrency, 1); ++t) pool.emplace_back(worker);
        worker();
    }
    if (failure) std::rethrow_exception(failure);
    return vectors;
}

FlatIndex build_index(const std::vector<LabeledExample>& examples, const Embedder& embedder,
                      std::size_t concurrency) {
    std::vector<std::string> texts;
    texts.reserve(examples.size());
    for (const auto& ex : examples) texts.push_back(ex.sentence());
    auto vectors = embed_all(texts, embedder, concurrency);

    std::size_t dim = embedder.dim();
    if (dim == 0) dim = vectors.empty() ? 1 : vectors.front().dim();
    FlatIndex index(dim, embedder.name());
    for (std::size_t i = 0; i < examples.size(); ++i) index.add(examples[i], std::move(vectors[i]));
    index.seal();
    return index;
}

void save_index(const FlatIndex& index, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot write index " + path.string());
    nlohmann::json header = {{"format", kIndexFormat},
                             {"version", kIndexVersion},
                             {"dim", index.dim()},
                             {"embedder", index.embedder()},
                             {"count", index.size()}};
    out << header.dump() << '\n';
    for (const auto& r : index.records()) {
        nlohmann::json spans = nlohmann::json::array();
        for (const auto& s : r.example.spans()) spans.push_back(span_to_json(s));
        nlohmann::json rec = {{"id", r.example_id},
                              {"vector", r.vector.values},
                              {"sentence", r.example.sentence()},
                              {"split", std::string(to_string(r.example.split()))},
                              {"spans", spans}};
        out << rec.dump() << '\n';
    }
    if (!out) throw ArgumentError("write failed for index " + path.string());
}

FlatIndex load_index(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open index " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw LoadError("index " + path.string() + ": missing header");
    auto header = nlohmann::json::parse(line, nullptr, false);
    auto field = [&](const char* name) -> const nlohmann::json& {
        if (header.is_discarded() || !header.is_object() || !header.contains(name))
            throw LoadError("index " + path.string() + ": header field '" + name + "' missing");
        return header[name];
    };
    if (field("format") != kIndexFormat) throw LoadError("index " + path.string() + ": field 'format' is not ltner-index");
    if (field("version") != kIndexVersion)
        throw LoadError("index " + path.string() + ": field 'version' " + field("version").dump() + " unsupported");
    const auto dim = field("dim").get<std::size_t>();
    const auto count = field("count").get<std::size_t>();
    FlatIndex index(dim, field("embedder").get<std::string>());

    std::size_t ln = 1;
    while (std::getline(in, line)) {
        ++ln;
        if (line.empty()) continue;
        auto rec = nlohmann::json::parse(line, nullptr, false);
        const std::string where = "index " + path.string() + ":" + std::to_string(ln) + ": ";
        if (rec.is_discarded()) throw LoadError(where + "corrupt record");
        for (const char* f : {"id", "vector", "sentence", "spans"}) {
            if (!rec.contains(f)) throw LoadError(where + "field '" + f + "' missing");
        }
        try {
            std::vector<EntitySpan> spans;
            for (const auto& s : rec["spans"]) spans.push_back(span_from_json(s));
            Split split = rec.contains("split") ? split_from_string(rec["split"].get<std::string>()) : Split::Train;
            LabeledExample ex(rec["id"].get<std::string>(), split_whitespace(rec["sentence"].get<std::string>()),
                              std::move(spans), split);
            index.add(std::move(ex), EmbeddingVector{rec["vector"].get<std::vector<double>>()});
        } catch (const LoadError&) {
            throw;
        } catch (const std::exception& e) {
            throw LoadError(where + "field 'vector' or 'spans' invalid: " + e.what());
        }
    }
    if (index.size() != count)
        throw LoadError("index " + path.string() + ": field 'count' says " + std::to_string(count) + " records, found " +
                        std::to_string(index.size()));
    index.seal();
    return index;
}

std::unique_ptr<Embedder> make_embedder(std::string_view kind, const RemoteEmbedderOptions& remote) {
    if (kind == "hash") return std::make_unique<HashingEmbedder>(256);
    if (kind.starts_with("hash")) {
        const std::string n(kind.substr(4));
        char* end = nullptr;
        const auto buckets = std::strtoul(n.c_str(), &end, 10);
        if (*end != '\0' || buckets == 0) throw ArgumentError("bad embedder '" + std::string(kind) + "'");
        return std::make_unique<HashingEmbedder>(buckets);
    }
    if (kind == "remote") {
        RemoteEmbedderOptions opts = remote;
        if (opts.api_key.empty()) {
            if (const char* key = std::getenv("LTNER_API_KEY")) opts.api_key = key;
        }
        return std::make_unique<RemoteEmbedder>(std::move(opts));
    }
    throw ArgumentError("unknown embedder '" + std::string(kind) + "' (hash|hashN|remote)");
}

}  // namespace ltner
