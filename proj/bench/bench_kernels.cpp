// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <map>
#include <random>

#include "ltner/eval.hpp"
#include "ltner/retrieval.hpp"

using namespace ltner;

namespace {

EmbeddingVector random_vector(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> g;
    EmbeddingVector v{std::vector<double>(dim)};
    for (auto& x : v.values) x = g(rng);
    return v;
}

const FlatIndex& shared_index(std::size_t n) {
    static std::map<std::size_t, FlatIndex> cache;
    auto it = cache.find(n);
    if (it == cache.end()) {
        std::mt19937_64 rng(n);
        FlatIndex idx(256, "random");
        for (std::size_t i = 0; i < n; ++i)
            idx.add(LabeledExample("r" + std::to_string(i), {"t"}, {}, Split::Train), random_vector(rng, 256));
        idx.seal();
        it = cache.emplace(n, std::move(idx)).first;
    }
    return it->second;
}

void BM_KnnParallel(benchmark::State& state) {
    const auto& idx = shared_index(static_cast<std::size_t>(state.range(0)));
    std::mt19937_64 rng(1);
    const auto q = random_vector(rng, 256);
    for (auto _ : state) benchmark::DoNotOptimize(idx.knn(q, 30));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_KnnSerial(benchmark::State& state) {
    const auto& idx = shared_index(static_cast<std::size_t>(state.range(0)));
    std::mt19937_64 rng(1);
    const auto q = random_vector(rng, 256);
    for (auto _ : state) benchmark::DoNotOptimize(reference::knn(idx, q, 30));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_KnnBatch(benchmark::State& state) {
    const auto& idx = shared_index(14041);
    std::mt19937_64 rng(2);
    std::vector<EmbeddingVector> qs;
    for (int i = 0; i < state.range(0); ++i) qs.push_back(random_vector(rng, 256));
    for (auto _ : state) benchmark::DoNotOptimize(idx.knn_batch(qs, 30));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_KnnBatchSerial(benchmark::State& state) {
    const auto& idx = shared_index(14041);
    std::mt19937_64 rng(2);
    std::vector<EmbeddingVector> qs;
    for (int i = 0; i < state.range(0); ++i) qs.push_back(random_vector(rng, 256));
    for (auto _ : state) {
        for (const auto& q : qs) benchmark::DoNotOptimize(reference::knn(idx, q, 30));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

struct ScoreInput {
    std::vector<SentencePrediction> predictions;
    std::vector<SentenceGold> gold;
};

const ScoreInput& score_input() {
    static const ScoreInput in = [] {
        ScoreInput s;
        std::mt19937_64 rng(3);
        const std::vector<std::string> labels = {"PER", "LOC", "ORG", "MISC"};
        for (int i = 0; i < 20000; ++i) {
            std::vector<EntitySpan> g, p;
            for (std::size_t pos = rng() % 3; pos + 2 < 30; pos += 3 + rng() % 4) {
                g.push_back({pos, pos + 1 + rng() % 2, labels[rng() % 4]});
                if (rng() % 5) p.push_back(g.back());
            }
            s.gold.push_back({"s" + std::to_string(i), g});
            s.predictions.push_back({"s" + std::to_string(i), p, {}});
        }
        return s;
    }();
    return in;
}

void BM_ScoreParallel(benchmark::State& state) {
    const auto& in = score_input();
    for (auto _ : state) benchmark::DoNotOptimize(score(in.predictions, in.gold));
}

void BM_ScoreSerial(benchmark::State& state) {
    const auto& in = score_input();
    for (auto _ : state) benchmark::DoNotOptimize(reference::score(in.predictions, in.gold));
}

}  // namespace

BENCHMARK(BM_KnnParallel)->Arg(1000)->Arg(14041)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_KnnSerial)->Arg(1000)->Arg(14041)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_KnnBatch)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_KnnBatchSerial)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScoreParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScoreSerial)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
