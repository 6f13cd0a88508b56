#pragma once

#include "morphotok/boundary.hpp"
#include "morphotok/corpus.hpp"

#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace morphotok {

/// Static BPE vocabulary: the alphabet plus an ordered merge list, which is
/// also the application order at encode time.
struct BpeVocab {
    std::set<char32_t> alphabet;
    std::vector<std::pair<std::u32string, std::u32string>> merges;
};

/// Greedy BPE: repeatedly merge the most frequent adjacent pair, ties broken
/// by lexicographic order of (left, right); stops early when no pair occurs
/// at least twice.
BpeVocab train_bpe(const Corpus& corpus, std::size_t num_merges);

/// Applies merges in training order; unknown units stay singleton tokens.
Segmentation bpe_encode(const BpeVocab& vocab, std::u32string_view sequence);

std::string bpe_vocab_to_json(const BpeVocab& vocab);
BpeVocab bpe_vocab_from_json(std::string_view json_text);

/// Encoder with token forms interned at construction. Immutable afterwards,
/// so encoding is safe to share across threads. Units outside the alphabet
/// share one sentinel id; no merge rule can touch them.
class BpeEncoder {
public:
    explicit BpeEncoder(const BpeVocab& vocab);
    Segmentation encode(std::u32string_view sequence) const;

private:
    struct Rule {
        std::uint32_t left, right, merged;
    };
    std::unordered_map<char32_t, std::uint32_t> unit_ids_;
    std::vector<Rule> rules_;
    std::vector<std::uint32_t> id_length_;
};

} // namespace morphotok
