#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "morphotok/bpe.hpp"
#include "morphotok/errors.hpp"
#include "morphotok/rng.hpp"

using namespace morphotok;

namespace {

Corpus make_corpus(std::initializer_list<std::u32string> seqs) {
    Corpus c;
    c.domain_label = "test";
    c.sequences.assign(seqs);
    return c;
}

} // namespace

TEST_CASE("zero merges keeps the alphabet only") {
    const BpeVocab v = train_bpe(make_corpus({U"abcab"}), 0);
    CHECK(v.merges.empty());
    CHECK(v.alphabet == std::set<char32_t>{U'a', U'b', U'c'});
    const Segmentation seg = bpe_encode(v, U"abc");
    CHECK(seg.boundaries == std::vector<std::size_t>{1, 2});
}

TEST_CASE("hand-traced greedy merges on aaaa") {
    const BpeVocab v = train_bpe(make_corpus({U"aaaa"}), 1);
    REQUIRE(v.merges.size() == 1);
    CHECK(v.merges[0] == std::pair<std::u32string, std::u32string>{U"a", U"a"});
    const Segmentation seg = bpe_encode(v, U"aaaa");
    CHECK(seg.boundaries == std::vector<std::size_t>{2}); // ["aa","aa"]
}

TEST_CASE("hand-traced two merges on abab twice") {
    const BpeVocab v = train_bpe(make_corpus({U"abab", U"abab"}), 2);
    REQUIRE(v.merges.size() == 2);
    CHECK(v.merges[0] == std::pair<std::u32string, std::u32string>{U"a", U"b"});
    CHECK(v.merges[1] == std::pair<std::u32string, std::u32string>{U"ab", U"ab"});
    const Segmentation seg = bpe_encode(v, U"abab");
    CHECK(seg.boundaries.empty()); // one token "abab"
}

TEST_CASE("training stops early when no pair repeats") {
    const BpeVocab v = train_bpe(make_corpus({U"abcdef"}), 10);
    CHECK(v.merges.empty());
}

TEST_CASE("lexicographic tie-break and retraining determinism") {
    // "ba" and "ab" both occur twice; (a,b) sorts first
    const Corpus c = make_corpus({U"abz", U"abz", U"bay", U"bay"});
    const BpeVocab v1 = train_bpe(c, 1);
    REQUIRE(v1.merges.size() == 1);
    CHECK(v1.merges[0] == std::pair<std::u32string, std::u32string>{U"a", U"b"});
    const BpeVocab v2 = train_bpe(c, 1);
    CHECK(v1.merges == v2.merges);
    CHECK(v1.alphabet == v2.alphabet);
}

TEST_CASE("unknown units stay singleton tokens") {
    const BpeVocab v = train_bpe(make_corpus({U"aaaa"}), 1);
    const Segmentation seg = bpe_encode(v, U"aaxa");
    // "aa" merges, then x and the trailing a stand alone
    CHECK(seg.boundaries == std::vector<std::size_t>{2, 3});
}

TEST_CASE("encoding tiles every sequence exactly") {
    SplitMix64 rng(1234);
    Corpus c;
    c.domain_label = "x";
    for (int s = 0; s < 40; ++s) {
        std::u32string seq;
        for (std::size_t i = 0; i < 3 + rng.next_below(30); ++i)
            seq.push_back(static_cast<char32_t>(U'a' + rng.next_below(5)));
        c.sequences.push_back(seq);
    }
    const BpeVocab v = train_bpe(c, 30);
    const BpeEncoder enc(v);
    for (const auto& seq : c.sequences) {
        const Segmentation seg = enc.encode(seq);
        CHECK(seg.length == seq.size());
        seg.validate();
        // encoder and one-shot helper agree
        CHECK(bpe_encode(v, seq).boundaries == seg.boundaries);
    }
}

TEST_CASE("empty corpus is rejected") {
    Corpus empty;
    empty.domain_label = "x";
    CHECK_THROWS_AS(train_bpe(empty, 3), EmptyCorpusError);
}

TEST_CASE("vocab JSON round trip") {
    const BpeVocab v = train_bpe(make_corpus({U"abab", U"abab", U"ccc"}), 3);
    const BpeVocab back = bpe_vocab_from_json(bpe_vocab_to_json(v));
    CHECK(back.alphabet == v.alphabet);
    CHECK(back.merges == v.merges);
    CHECK_THROWS_AS(bpe_vocab_from_json("{}"), DecodeError);
}
