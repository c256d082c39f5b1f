#pragma once

// Deliberately naive reference implementations for the test suites. None of
// them share code with the library beyond the plain data types.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ltner/corpus.hpp"
#include "ltner/eval.hpp"
#include "ltner/retrieval.hpp"

namespace oracle {

// Maximal B/I runs of a tag sequence. A run starts at B-X, or at I-X when the
// previous tag is not B-X/I-X; it continues over I-X of the same type.
std::vector<ltner::EntitySpan> run_merge(const std::vector<std::string>& tags);

// IOB2 form of the same tag sequence.
std::vector<std::string> normalize_iob2(const std::vector<std::string>& tags);

// Counts by enumerating every (prediction, gold) pairing and keeping the
// assignment with the most exact matches. Duplicate predictions count once.
ltner::Counts pairing_counts(const std::vector<ltner::EntitySpan>& predicted, std::size_t n_unaligned,
                             const std::vector<ltner::EntitySpan>& gold);

// Every cosine computed independently, then sorted (similarity desc, index asc).
std::vector<std::pair<std::size_t, long double>> cosine_ranking(const std::vector<std::vector<double>>& rows,
                                                                const std::vector<double>& query, std::size_t k);

// Hashed bag of words written out by hand: FNV-1a 64 per lowercased token.
std::vector<double> hashed_bag(const std::string& text, std::size_t buckets);

// Random sentence of lowercase-ish words with random spans.
ltner::LabeledExample random_example(std::mt19937_64& rng, std::size_t max_tokens, std::size_t max_spans,
                                     const std::vector<std::string>& labels, const std::string& id);

}  // namespace oracle
