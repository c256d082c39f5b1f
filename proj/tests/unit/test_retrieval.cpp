#include <gtest/gtest.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "ltner/errors.hpp"
#include "ltner/retrieval.hpp"
#include "oracles.hpp"

using namespace ltner;
namespace fs = std::filesystem;

namespace {

LabeledExample ex(const std::string& id, const std::string& text = "some text") {
    return LabeledExample(id, split_whitespace(text), {}, Split::Train);
}

EmbeddingVector random_vector(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> g;
    EmbeddingVector v{std::vector<double>(dim)};
    for (auto& x : v.values) x = g(rng);
    return v;
}

struct RandomIndex {
    FlatIndex index{1, "random"};
    std::vector<std::vector<double>> rows;
};

// Random vectors with a sprinkling of exact duplicates to exercise ties.
RandomIndex random_index(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
    RandomIndex r{FlatIndex(dim, "random"), {}};
    for (std::size_t i = 0; i < n; ++i) {
        EmbeddingVector v = (i > 0 && rng() % 10 == 0) ? EmbeddingVector{r.rows[rng() % i]} : random_vector(rng, dim);
        r.rows.push_back(v.values);
        r.index.add(ex("r" + std::to_string(i)), v);
    }
    r.index.seal();
    return r;
}

fs::path temp_path(const std::string& name) {
    auto dir = fs::temp_directory_path() / "ltner_test_retrieval";
    fs::create_directories(dir);
    return dir / name;
}

void expect_same_ids(const std::vector<Neighbor>& got, const std::vector<std::pair<std::size_t, long double>>& want) {
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t r = 0; r < got.size(); ++r) {
        EXPECT_EQ(got[r].example_id, "r" + std::to_string(want[r].first)) << "rank " << r + 1;
        EXPECT_NEAR(got[r].similarity, static_cast<double>(want[r].second), 1e-12);
        EXPECT_EQ(got[r].rank, r + 1);
    }
}

}  // namespace

TEST(HashingEmbedderTest, DeterministicBagOfWords) {
    HashingEmbedder e;
    EXPECT_EQ(e.embed("a b"), e.embed("a b"));
    EXPECT_EQ(e.embed("a b"), e.embed("b a"));
    EXPECT_EQ(e.embed("A b"), e.embed("a B"));
    EXPECT_EQ(e.dim(), 256u);
    EXPECT_THROW(e.embed(""), ArgumentError);
    EXPECT_THROW(e.embed("   "), ArgumentError);
}

TEST(HashingEmbedderTest, MatchesHandWrittenConstruction) {
    HashingEmbedder e;
    for (const std::string s : {"a b", "EU rejects German call to boycott British lamb .", "x x x y"}) {
        const auto got = e.embed(s).values;
        const auto want = oracle::hashed_bag(s, 256);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-15);
    }
}

TEST(FlatIndexTest, KZeroAndSelfSimilarity) {
    std::mt19937_64 rng(1);
    auto r = random_index(rng, 50, 16);
    const EmbeddingVector q{r.rows[17]};
    EXPECT_TRUE(r.index.knn(q, 0).empty());
    const auto top = r.index.knn(q, 1);
    ASSERT_EQ(top.size(), 1u);
    EXPECT_NEAR(top[0].similarity, 1.0, 1e-9);
    EXPECT_NEAR(r.index.similarity(q, q.norm(), 17), 1.0, 1e-9);
}

TEST(FlatIndexTest, MatchesBruteForce200) {
    std::mt19937_64 rng(2);
    auto r = random_index(rng, 200, 32);
    for (std::size_t k : {1u, 5u, 30u}) {
        for (int t = 0; t < 10; ++t) {
            const auto q = random_vector(rng, 32);
            expect_same_ids(r.index.knn(q, k), oracle::cosine_ranking(r.rows, q.values, k));
        }
    }
}

TEST(FlatIndexTest, TiesBreakByInsertionOrder) {
    FlatIndex idx(2, "t");
    for (int i = 0; i < 5; ++i) idx.add(ex("r" + std::to_string(i)), EmbeddingVector{{1.0, 1.0}});
    idx.add(ex("best"), EmbeddingVector{{1.0, 0.0}});
    idx.seal();
    const auto got = idx.knn(EmbeddingVector{{1.0, 0.1}}, 6);
    EXPECT_EQ(got[0].example_id, "best");
    for (int i = 0; i < 5; ++i) EXPECT_EQ(got[i + 1].example_id, "r" + std::to_string(i));
}

TEST(FlatIndexTest, ScaleInvariant) {
    std::mt19937_64 rng(3);
    auto r = random_index(rng, 300, 24);
    for (int t = 0; t < 10; ++t) {
        auto q = random_vector(rng, 24);
        auto scaled = q;
        for (auto& x : scaled.values) x *= 8.0;  // a power of two keeps every cosine bit-identical
        const auto a = r.index.knn(q, 20), b = r.index.knn(scaled, 20);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].example_id, b[i].example_id);
    }
}

TEST(FlatIndexTest, ParallelPathsMatchSerial) {
    std::mt19937_64 rng(4);
    auto r = random_index(rng, 3000, 16);
    std::vector<EmbeddingVector> qs;
    for (int t = 0; t < 16; ++t) qs.push_back(random_vector(rng, 16));
    const auto batch = r.index.knn_batch(qs, 25);
    for (std::size_t t = 0; t < qs.size(); ++t) {
        EXPECT_EQ(r.index.knn(qs[t], 25), reference::knn(r.index, qs[t], 25));
        EXPECT_EQ(batch[t], reference::knn(r.index, qs[t], 25));
    }
}

TEST(FlatIndexTest, Errors) {
    FlatIndex idx(3, "t");
    EXPECT_THROW(idx.add(ex("z"), EmbeddingVector{{0, 0, 0}}), ArgumentError);
    EXPECT_THROW(idx.add(ex("d"), EmbeddingVector{{1, 0}}), ArgumentError);
    idx.add(ex("a"), EmbeddingVector{{1, 0, 0}});
    EXPECT_THROW(idx.add(ex("a"), EmbeddingVector{{0, 1, 0}}), ArgumentError);
    EXPECT_THROW(idx.knn(EmbeddingVector{{1, 0, 0}}, 1), ArgumentError);  // not sealed
    idx.seal();
    EXPECT_THROW(idx.add(ex("b"), EmbeddingVector{{0, 1, 0}}), ArgumentError);
    EXPECT_THROW(idx.knn(EmbeddingVector{{1, 0}}, 1), ArgumentError);
    EXPECT_EQ(idx.knn(EmbeddingVector{{1, 0, 0}}, 10).size(), 1u);
    FlatIndex empty(3, "t");
    empty.seal();
    EXPECT_THROW(empty.knn(EmbeddingVector{{1, 0, 0}}, 1), ArgumentError);
    EXPECT_TRUE(empty.knn(EmbeddingVector{{1, 0, 0}}, 0).empty());
}

TEST(FlatIndexTest, SubsetKeepsInsertionOrder) {
    std::mt19937_64 rng(5);
    auto r = random_index(rng, 20, 8);
    const auto sub = r.index.subset({"r9", "r2", "r5"});
    ASSERT_EQ(sub.size(), 3u);
    EXPECT_EQ(sub.records()[0].example_id, "r2");
    EXPECT_EQ(sub.records()[2].example_id, "r9");
    EXPECT_THROW(r.index.subset({"nope"}), ArgumentError);
}

TEST(Persistence, EmptyRoundTrip) {
    FlatIndex idx(8, "hash8");
    idx.seal();
    const auto path = temp_path("empty.idx");
    save_index(idx, path);
    const auto back = load_index(path);
    EXPECT_EQ(back.size(), 0u);
    EXPECT_EQ(back.dim(), 8u);
    EXPECT_EQ(back.fingerprint(), idx.fingerprint());
}

TEST(Persistence, RoundTripPreservesKnn) {
    std::mt19937_64 rng(6);
    auto r = random_index(rng, 500, 64);
    const auto path = temp_path("r500.idx");
    save_index(r.index, path);
    const auto back = load_index(path);
    EXPECT_EQ(back.fingerprint(), r.index.fingerprint());
    for (int t = 0; t < 20; ++t) {
        const auto q = random_vector(rng, 64);
        EXPECT_EQ(back.knn(q, 30), r.index.knn(q, 30));
    }
}

TEST(Persistence, BuiltIndexKeepsAnnotations) {
    std::vector<LabeledExample> xs = {
        LabeledExample("a", {"EU", "rejects", "German", "call"}, {{0, 1, "ORG"}, {2, 3, "MISC"}}, Split::Train),
        LabeledExample("b", {"Peter", "Blackburn"}, {{0, 2, "PER"}}, Split::Train)};
    HashingEmbedder e;
    const auto idx = build_index(xs, e, 3);
    const auto path = temp_path("built.idx");
    save_index(idx, path);
    const auto back = load_index(path);
    ASSERT_NE(back.find("a"), nullptr);
    EXPECT_EQ(back.find("a")->example, xs[0]);
    EXPECT_EQ(back.find("b")->vector, e.embed("Peter Blackburn"));
}

TEST(Persistence, TruncatedAndCorruptFiles) {
    std::mt19937_64 rng(7);
    auto r = random_index(rng, 10, 4);
    const auto path = temp_path("trunc.idx");
    save_index(r.index, path);
    std::string text;
    {
        std::ifstream in(path);
        text.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& s) { std::ofstream(path, std::ios::trunc) << s; };

    write(text.substr(0, text.size() / 2));
    EXPECT_THROW(load_index(path), LoadError);

    // Cut on a line boundary: only the header count can notice.
    const auto last_line = text.rfind('\n', text.size() - 2);
    write(text.substr(0, last_line + 1));
    try {
        load_index(path);
        FAIL();
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find("count"), std::string::npos) << e.what();
    }

    write("");
    EXPECT_THROW(load_index(path), LoadError);

    auto header_end = text.find('\n');
    auto header = nlohmann::json::parse(text.substr(0, header_end));
    header["version"] = 99;
    write(header.dump() + text.substr(header_end));
    try {
        load_index(path);
        FAIL();
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
    }
    EXPECT_THROW(load_index(temp_path("missing.idx")), LoadError);
}

TEST(RemoteEmbedderTest, PostsAndRetries) {
    httplib::Server server;
    int calls = 0;
    server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
        ++calls;
        if (calls == 1) {
            res.status = 503;
            return;
        }
        const auto body = nlohmann::json::parse(req.body);
        EXPECT_EQ(body["model"], "m");
        EXPECT_EQ(req.get_header_value("Authorization"), "Bearer k");
        res.set_content(R"({"data":[{"embedding":[0.5,0.25,1.0]}]})", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    RemoteEmbedderOptions opts;
    opts.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    opts.model = "m";
    opts.api_key = "k";
    std::vector<double> sleeps;
    RemoteEmbedder e(opts, [&](double s) { sleeps.push_back(s); });
    EXPECT_EQ(e.embed("hello").values, (std::vector<double>{0.5, 0.25, 1.0}));
    EXPECT_EQ(calls, 2);
    EXPECT_EQ(sleeps.size(), 1u);
    EXPECT_THROW(e.embed(""), ArgumentError);
    server.stop();
    t.join();
}
