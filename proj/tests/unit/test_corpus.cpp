#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <map>
#include <set>
#include <sstream>

#include "ltner/corpus.hpp"
#include "ltner/errors.hpp"
#include "ltner/harness.hpp"
#include "oracles.hpp"

using namespace ltner;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kAlAin = {"AL-AIN B-LOC", ", O", "United B-LOC", "Arab I-LOC", "Emirates I-LOC",
                                         "1996-12-06 O"};

LabeledExample al_ain() { return parse_iob(kAlAin, LabelSchema::conll2003()).at(0); }

const std::vector<LabeledExample>& conll_test() {
    static const auto examples =
        parse_iob_file(std::string(LTNER_DATA_DIR) + "/conll2003/test.txt", LabelSchema::conll2003(),
                       {"conll2003", Split::Test});
    return examples;
}

fs::path temp_file(const std::string& name) {
    auto dir = fs::temp_directory_path() / "ltner_test_corpus";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST(ParseIob, AlAinSentence) {
    const auto ex = al_ain();
    ASSERT_EQ(ex.tokens().size(), 6u);
    const std::vector<EntitySpan> want = {{0, 1, "LOC"}, {2, 5, "LOC"}};
    EXPECT_EQ(ex.spans(), want);
    EXPECT_EQ(ex.surface(ex.spans()[1]), "United Arab Emirates");
}

TEST(ParseIob, AllOutsideSentenceHasNoSpans) {
    const auto ex = parse_iob(std::vector<std::string>{"nothing O", "here O"}, LabelSchema::conll2003());
    ASSERT_EQ(ex.size(), 1u);
    EXPECT_TRUE(ex[0].spans().empty());
}

TEST(ParseIob, FourColumnConllWithDocstart) {
    std::istringstream in(
        "-DOCSTART- -X- -X- O\n\nEU NNP B-NP B-ORG\nrejects VBZ B-VP O\nGerman JJ B-NP B-MISC\n\n"
        "Peter NNP B-NP B-PER\nBlackburn NNP I-NP I-PER\n");
    const auto ex = parse_iob(in, LabelSchema::conll2003(), {"t", Split::Train});
    ASSERT_EQ(ex.size(), 2u);
    EXPECT_EQ(ex[0].sentence(), "EU rejects German");
    EXPECT_EQ(ex[1].spans(), (std::vector<EntitySpan>{{0, 2, "PER"}}));
    EXPECT_NE(ex[0].id(), ex[1].id());
}

TEST(ParseIob, Iob1ContinuationRules) {
    // I- after O, and I- of a different type, both open spans.
    const auto ex =
        parse_iob(std::vector<std::string>{"a I-LOC", "b I-LOC", "c I-ORG", "d O", "e I-PER", "f B-PER", "g I-PER"},
                  LabelSchema::conll2003())
            .at(0);
    const std::vector<EntitySpan> want = {{0, 2, "LOC"}, {2, 3, "ORG"}, {4, 5, "PER"}, {5, 7, "PER"}};
    EXPECT_EQ(ex.spans(), want);
}

TEST(ParseIob, WrongColumnCountNamesTheLine) {
    try {
        parse_iob(std::vector<std::string>{"a NNP O", "b O"}, LabelSchema::conll2003());
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
}

TEST(ParseIob, UnknownTypeNamesTheTag) {
    try {
        parse_iob(std::vector<std::string>{"a B-DATE"}, LabelSchema::conll2003());
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("B-DATE"), std::string::npos) << e.what();
    }
}

TEST(ParseIob, RandomTagSequencesMatchRunMergeOracle) {
    std::mt19937_64 rng(7);
    const std::vector<std::string> types = {"PER", "LOC", "ORG", "MISC"};
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t n = 1 + rng() % 12;
        std::vector<std::string> tags, lines;
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = rng() % 3;
            tags.push_back(r == 0 ? "O" : (r == 1 ? "B-" : "I-") + types[rng() % types.size()]);
            lines.push_back("w" + std::to_string(i) + " " + tags.back());
        }
        const auto ex = parse_iob(lines, LabelSchema::conll2003()).at(0);
        ASSERT_EQ(ex.spans(), oracle::run_merge(tags));
        ASSERT_EQ(to_iob2_tags(ex), oracle::normalize_iob2(tags));
    }
}

TEST(ParseIob, ConllTestSplitSentenceCount) {
    // Published CoNLL-2003 English test statistics: 3,453 sentences.
    EXPECT_EQ(conll_test().size(), 3453u);
    for (const auto& ex : conll_test()) check_spans(ex.spans(), ex.tokens().size());
}

TEST(LabelSchemaTest, Invariants) {
    EXPECT_THROW(LabelSchema("x", {}), ArgumentError);
    EXPECT_THROW(LabelSchema("x", {"per"}), ArgumentError);
    EXPECT_THROW(LabelSchema("x", {"PER", "PER"}), ArgumentError);
    EXPECT_EQ(LabelSchema::conll2003().names(), (std::vector<std::string>{"PER", "LOC", "ORG", "MISC"}));
    EXPECT_EQ(LabelSchema::wnut2017().names().size(), 6u);
    EXPECT_EQ(LabelSchema::from_spec("A,B").names(), (std::vector<std::string>{"A", "B"}));
}

TEST(LabeledExampleTest, RejectsBadSpansAndTokens) {
    EXPECT_THROW(LabeledExample("a", {"x", "y"}, {{0, 2, "PER"}, {1, 2, "LOC"}}, Split::Test), ArgumentError);
    EXPECT_THROW(LabeledExample("a", {"x"}, {{0, 2, "PER"}}, Split::Test), ArgumentError);
    EXPECT_THROW(LabeledExample("a", {"x"}, {{1, 1, "PER"}}, Split::Test), ArgumentError);
    EXPECT_THROW(LabeledExample("a", {"x y"}, {}, Split::Test), ArgumentError);
    EXPECT_THROW(LabeledExample("a", {""}, {}, Split::Test), ArgumentError);
}

TEST(JsonRecord, AlAinMatchesFigure) {
    EXPECT_EQ(to_json_record(al_ain()).dump(),
              R"({"sentence":"AL-AIN , United Arab Emirates 1996-12-06","label":{"LOC":["AL-AIN","United Arab Emirates"]}})");
}

TEST(JsonRecord, ZeroSpans) {
    const LabeledExample ex("z", {"no", "entities"}, {}, Split::Test);
    EXPECT_EQ(to_json_record(ex).dump(), R"({"sentence":"no entities","label":{}})");
}

TEST(JsonRecord, UnalignableSurfaceIsListed) {
    nlohmann::ordered_json obj = {{"sentence", "a b c"}, {"label", {{"PER", {"b", "zzz"}}}}};
    try {
        from_json_record(obj);
        FAIL();
    } catch (const ConversionError& e) {
        EXPECT_NE(std::string(e.what()).find("zzz"), std::string::npos);
    }
}

TEST(JsonRecord, DuplicateSurfacesConsumeLeftToRight) {
    nlohmann::ordered_json obj = {{"sentence", "Smith met Smith"}, {"label", {{"PER", {"Smith", "Smith"}}}}};
    const auto ex = from_json_record(obj, "d");
    EXPECT_EQ(ex.spans(), (std::vector<EntitySpan>{{0, 1, "PER"}, {2, 3, "PER"}}));
}

TEST(JsonRecord, RoundTripOverConllTest) {
    // The label map drops positions; the one test sentence where a surface is
    // tagged with two different types in crossed order cannot be recovered.
    std::vector<std::string> lossy;
    for (const auto& ex : conll_test()) {
        const auto back = from_json_record(nlohmann::ordered_json::parse(to_json_record(ex).dump()), ex.id(),
                                           ex.split());
        EXPECT_EQ(back.tokens(), ex.tokens());
        if (back.spans() != ex.spans()) lossy.push_back(ex.id());
    }
    ASSERT_EQ(lossy.size(), 1u);
    const auto& ex = *std::find_if(conll_test().begin(), conll_test().end(),
                                   [&](const LabeledExample& e) { return e.id() == lossy[0]; });
    EXPECT_NE(ex.sentence().find("Santa Fe"), std::string::npos);
}

TEST(JsonRecord, DistinctTokensRoundTripExactly) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 500; ++i) {
        const auto raw = oracle::random_example(rng, 10, 4, {"PER", "LOC"}, "r" + std::to_string(i));
        std::vector<std::string> tokens;
        for (std::size_t t = 0; t < raw.tokens().size(); ++t) tokens.push_back(raw.tokens()[t] + std::to_string(t));
        const LabeledExample ex(raw.id(), tokens, raw.spans(), Split::Test);
        const auto rec = to_json_record(ex);
        EXPECT_EQ(from_json_record(rec, ex.id(), Split::Test), ex);
        EXPECT_EQ(to_json_record(from_json_record(rec, ex.id())), rec);
    }
}

TEST(JsonRecord, RepeatedTokensKeepSurfacesPerLabel) {
    // With repeated words only positions can move; each label keeps its mentions.
    std::mt19937_64 rng(12);
    auto surfaces = [](const LabeledExample& ex) {
        std::map<std::string, std::multiset<std::string>> out;
        for (const auto& s : ex.spans()) out[s.label].insert(ex.surface(s));
        return out;
    };
    // Greedy leftmost alignment can also spend a word a later mention needs;
    // that is reported, and only happens when some word repeats.
    std::size_t converted = 0;
    for (int i = 0; i < 500; ++i) {
        const auto ex = oracle::random_example(rng, 10, 4, {"PER", "LOC"}, "r" + std::to_string(i));
        try {
            const auto back = from_json_record(to_json_record(ex), ex.id());
            EXPECT_EQ(back.tokens(), ex.tokens());
            EXPECT_EQ(surfaces(back), surfaces(ex));
            ++converted;
        } catch (const ConversionError&) {
            const std::set<std::string> distinct(ex.tokens().begin(), ex.tokens().end());
            EXPECT_LT(distinct.size(), ex.tokens().size());
        }
    }
    EXPECT_GT(converted, 400u);
}

TEST(Subsample, EdgeCasesAndDeterminism) {
    const auto& pool = conll_test();
    const auto all = subsample_pool(pool, pool.size(), 1);
    ASSERT_EQ(all.size(), pool.size());
    EXPECT_TRUE(std::is_sorted(all.begin(), all.end(),
                               [](const LabeledExample& a, const LabeledExample& b) { return a.id() < b.id(); }));
    EXPECT_TRUE(subsample_pool(pool, 0, 1).empty());
    EXPECT_THROW(subsample_pool(pool, pool.size() + 1, 1), ArgumentError);

    auto ids = [](const std::vector<LabeledExample>& xs) {
        std::set<std::string> s;
        for (const auto& x : xs) s.insert(x.id());
        return s;
    };
    EXPECT_EQ(ids(subsample_pool(pool, 30, 42)), ids(subsample_pool(pool, 30, 42)));
    EXPECT_EQ(ids(subsample_pool(pool, 30, 42)).size(), 30u);
    EXPECT_NE(ids(subsample_pool(pool, 30, 42)), ids(subsample_pool(pool, 30, 43)));
}

TEST(CorpusFile, JsonLinesRoundTrip) {
    const auto path = temp_file("round.jsonl");
    std::vector<LabeledExample> xs(conll_test().begin(), conll_test().begin() + 200);
    write_corpus(path, xs);
    EXPECT_EQ(read_corpus(path), xs);
}

TEST(CorpusFile, DuplicateIdsRejected) {
    const auto path = temp_file("dup.jsonl");
    const auto ex = al_ain();
    write_corpus(path, {ex});
    {
        std::ofstream out(path, std::ios::app);
        out << example_to_jsonl(ex).dump() << '\n';
    }
    EXPECT_THROW(read_corpus(path), Error);
}

TEST(Ingest, EmptyFileReportsNoSentences) {
    const auto path = temp_file("empty.txt");
    std::ofstream(path).close();
    try {
        ingest_files({{path, Split::Test}}, LabelSchema::conll2003(), "x");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("no sentences"), std::string::npos);
    }
}

TEST(Ingest, WnutSampleUsesSixTypes) {
    const auto schema = LabelSchema::wnut2017();
    const auto xs = ingest_files({{std::string(LTNER_TEST_DATA_DIR) + "/wnut_sample.conll", Split::Test}}, schema,
                                 "wnut");
    ASSERT_EQ(xs.size(), 4u);
    std::set<std::string> seen;
    for (const auto& x : xs)
        for (const auto& s : x.spans()) seen.insert(s.label);
    EXPECT_EQ(seen, std::set<std::string>(schema.names().begin(), schema.names().end()));
    EXPECT_EQ(xs[0].surface(xs[0].spans()[0]), "Star Wars");
}
