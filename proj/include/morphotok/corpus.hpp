#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace morphotok {

/// One input file plus its domain label. Bytes must decode as UTF-8.
struct RawDocument {
    std::string path;
    std::string bytes;
    std::string domain_label;
};

/// Normalized unit sequences (one per nonempty input line) with an optional
/// gold boundary set per sequence. Units are unicode scalar values.
struct Corpus {
    std::vector<std::u32string> sequences;
    std::string domain_label;
    std::optional<std::vector<std::vector<std::size_t>>> gold;

    std::size_t total_units() const {
        std::size_t n = 0;
        for (const auto& s : sequences) n += s.size();
        return n;
    }

    /// Throws if a gold boundary falls outside (0, len) or the corpus is empty.
    void validate() const;
};

struct SplitSpec {
    double train_fraction = 0.8; // in (0,1)
    std::uint64_t seed = 0;
};

// --- unicode plumbing -------------------------------------------------------

/// Strict UTF-8 decode; rejects overlong forms, surrogates and values above
/// U+10FFFF. Throws DecodeError.
std::u32string decode_utf8(std::string_view bytes);
std::string encode_utf8(std::u32string_view units);

// --- operations --------------------------------------------------------------

/// NFC normalization, whitespace runs collapsed to a single U+0020, ends
/// stripped, optionally lowercased. Idempotent.
std::u32string normalize(std::u32string_view text, bool lowercase);
std::string normalize_utf8(std::string_view text, bool lowercase);

/// One sequence per nonempty line. With whitespace_gold, spaces are dropped
/// from the unit stream and their positions recorded as gold boundaries.
Corpus load_corpus(const std::vector<RawDocument>& docs, bool lowercase,
                   bool whitespace_gold);

/// Seeded shuffle partition; train receives ceil(train_fraction * n)
/// sequences. Deterministic for a fixed (corpus, spec).
std::pair<Corpus, Corpus> split(const Corpus& corpus, const SplitSpec& spec);

// --- JSON cache --------------------------------------------------------------

std::string corpus_to_json(const Corpus& corpus);
Corpus corpus_from_json(std::string_view json_text);

// --- synthetic planted-vocabulary corpora ------------------------------------

/// Generator parameters for planted-word text: lines of space-joined words
/// drawn from a fixed random vocabulary, so whitespace gold equals the
/// planted boundaries.
struct SyntheticSpec {
    std::size_t num_words = 50;
    std::size_t word_len_min = 2;
    std::size_t word_len_max = 5;
    std::size_t alphabet_size = 10; // <= 26, units 'a'..
    std::size_t total_units = 120000; // counted without spaces
    std::size_t words_per_sequence = 25;
    bool zipf = false;
    double zipf_s = 1.1;
    std::uint64_t seed = 0;
};

/// Returns UTF-8 text (one sequence per line, words separated by spaces).
std::string generate_planted_text(const SyntheticSpec& spec);

/// Convenience: generate + load with whitespace gold.
Corpus generate_planted_corpus(const SyntheticSpec& spec,
                               const std::string& domain_label);

} // namespace morphotok
