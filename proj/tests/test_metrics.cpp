#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "morphotok/errors.hpp"
#include "morphotok/kernels.hpp"
#include "morphotok/metrics.hpp"
#include "morphotok/rng.hpp"

#include <cmath>

using namespace morphotok;

namespace {

Segmentation seg_of(std::size_t length, std::vector<std::size_t> bounds) {
    Segmentation s;
    s.length = length;
    s.boundaries = std::move(bounds);
    s.validate();
    return s;
}

} // namespace

TEST_CASE("token stability score") {
    CHECK(token_stability_score(seg_of(5, {1, 2}), seg_of(5, {1, 2})) == 0.0);
    CHECK(token_stability_score(seg_of(5, {1, 2}), seg_of(5, {3, 4})) == 1.0);
    CHECK(token_stability_score(seg_of(5, {1, 2}), seg_of(5, {2, 3})) ==
          doctest::Approx(0.5));
    CHECK(token_stability_score(seg_of(5, {}), seg_of(5, {})) == 0.0);
    // symmetry
    CHECK(token_stability_score(seg_of(5, {1}), seg_of(5, {1, 2})) ==
          token_stability_score(seg_of(5, {1, 2}), seg_of(5, {1})));
    CHECK_THROWS_AS(token_stability_score(seg_of(5, {}), seg_of(6, {})), LengthMismatch);
}

TEST_CASE("coherence index extremes and cross-check") {
    const CoherenceConfig cfg{3, 0.5};
    EmbeddingTable table;
    table.dim = 4;
    Vec e = init_embedding(U"a", 1, 4);
    Vec anti = e;
    kernels::scal(anti.data(), -1.0, 4);
    table.entries[U"a"] = e;
    table.entries[U"b"] = anti;

    // two antipodal single-unit tokens
    const std::vector<std::u32string> seqs{U"ab"};
    const std::vector<Segmentation> segs{seg_of(2, {1})};
    CHECK(coherence_index(seqs, segs, table, cfg) == doctest::Approx(-1.0));

    // identical embeddings everywhere
    EmbeddingTable same;
    same.dim = 4;
    same.entries[U"a"] = e;
    same.entries[U"b"] = e;
    CHECK(coherence_index(seqs, segs, same, cfg) == doctest::Approx(1.0));

    // random case equals the direct mean of coherence() calls
    SplitMix64 rng(77);
    EmbeddingTable rnd;
    rnd.dim = 8;
    for (char32_t u : {U'a', U'b', U'c', U'd', U'e'})
        rnd.entries[std::u32string(1, u)] = init_embedding(std::u32string(1, u), 9, 8);
    const std::vector<std::u32string> rs{U"abcde"};
    const std::vector<Segmentation> rsegs{seg_of(5, {1, 2, 3, 4})};
    double direct = 0.0;
    const std::vector<std::u32string> forms{U"a", U"b", U"c", U"d", U"e"};
    for (std::size_t i = 0; i < 5; ++i) {
        std::vector<Vec> ctx;
        for (std::size_t j = (i >= 3 ? i - 3 : 0); j < std::min<std::size_t>(5, i + 4); ++j)
            if (j != i) ctx.push_back(rnd.entries[forms[j]]);
        direct += coherence(rnd.entries[forms[i]], ctx, cfg);
    }
    CHECK(coherence_index(rs, rsegs, rnd, cfg) == doctest::Approx(direct / 5.0));
}

TEST_CASE("char perplexity analytic cases") {
    // untrained model over V single-unit tokens: uniform 1/V, PPL_char = V
    for (std::size_t v : {2u, 5u, 17u}) {
        std::vector<std::u32string> vocab;
        for (std::size_t i = 0; i < v; ++i)
            vocab.push_back(std::u32string(1, static_cast<char32_t>(U'a' + i)));
        const BigramLm lm(vocab, 0.1);
        const std::vector<std::u32string> eval{U"abab"};
        const std::vector<Segmentation> segs{seg_of(4, {1, 2, 3})};
        CHECK(char_perplexity(lm, eval, segs) ==
              doctest::Approx(static_cast<double>(v)).epsilon(1e-9));
    }

    // deterministic corpus, counts dominate smoothing: PPL -> 1
    std::u32string ab;
    for (int i = 0; i < 400; ++i) ab += U"ab";
    std::vector<std::size_t> singles;
    for (std::size_t i = 1; i < ab.size(); ++i) singles.push_back(i);
    const std::vector<std::u32string> corpus{ab};
    const std::vector<Segmentation> char_segs{seg_of(ab.size(), singles)};
    const BigramLm tiny = BigramLm::train(corpus, char_segs, 1e-9);
    CHECK(char_perplexity(tiny, corpus, char_segs) == doctest::Approx(1.0).epsilon(1e-3));

    // coarser "ab" tokens can only help on this corpus
    std::vector<std::size_t> pairs;
    for (std::size_t i = 2; i < ab.size(); i += 2) pairs.push_back(i);
    const std::vector<Segmentation> pair_segs{seg_of(ab.size(), pairs)};
    const BigramLm lm_single = BigramLm::train(corpus, char_segs, 0.1);
    const BigramLm lm_pair = BigramLm::train(corpus, pair_segs, 0.1);
    CHECK(char_perplexity(lm_pair, corpus, pair_segs) <=
          char_perplexity(lm_single, corpus, char_segs));
}

TEST_CASE("char perplexity ignores sequence order") {
    SplitMix64 rng(3);
    std::vector<std::u32string> seqs;
    std::vector<Segmentation> segs;
    for (int s = 0; s < 6; ++s) {
        std::u32string q;
        for (std::size_t i = 0; i < 4 + rng.next_below(8); ++i)
            q.push_back(static_cast<char32_t>(U'a' + rng.next_below(3)));
        std::vector<std::size_t> b;
        for (std::size_t i = 1; i < q.size(); ++i)
            if (rng.next_below(2)) b.push_back(i);
        seqs.push_back(q);
        segs.push_back(seg_of(q.size(), b));
    }
    const BigramLm lm = BigramLm::train(seqs, segs, 0.1);
    const double base = char_perplexity(lm, seqs, segs);
    std::vector<std::u32string> rseqs(seqs.rbegin(), seqs.rend());
    std::vector<Segmentation> rsegs(segs.rbegin(), segs.rend());
    CHECK(char_perplexity(lm, rseqs, rsegs) == doctest::Approx(base).epsilon(1e-12));

    CHECK_THROWS_AS(char_perplexity(lm, {}, {}), EmptyEval);
}

TEST_CASE("paper arithmetic fixtures") {
    CHECK(perplexity_reduction_ratio(17.8, 21.4) == doctest::Approx(0.168).epsilon(6e-3));
    CHECK(std::abs(perplexity_reduction_ratio(17.8, 21.4) - 0.168) < 1e-3);
    CHECK(std::abs(perplexity_reduction_ratio(22.3, 25.7) - 0.132) < 1e-3);
    CHECK(perplexity_reduction_ratio(5.0, 5.0) == 0.0);
    CHECK_THROWS_AS(perplexity_reduction_ratio(0.0, 1.0), NonpositiveInput);

    CHECK(std::abs(segmentation_overhead(2.3, 1.8) - 0.278) < 1e-3);
    CHECK(std::abs(segmentation_overhead(35.8, 28.5) - 0.256) < 1e-3);
    CHECK(std::abs(segmentation_overhead(9.4, 7.2) - 0.306) < 1e-3);
    CHECK(segmentation_overhead(4.0, 4.0) == 0.0);
    CHECK_THROWS_AS(segmentation_overhead(1.0, -1.0), NonpositiveInput);
}

TEST_CASE("gradient flow variance") {
    CHECK(gradient_flow_variance(std::vector<double>{0.3, 0.3, 0.3}) == 0.0);
    CHECK(gradient_flow_variance(std::vector<double>{0.0, 2.0}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(gradient_flow_variance(std::vector<double>{1.0}), TooFewTraces);

    SplitMix64 rng(8);
    std::vector<double> g;
    for (int i = 0; i < 20; ++i) g.push_back(rng.next_unit());
    double mean = 0.0;
    for (double x : g) mean += x;
    mean /= 20.0;
    double var = 0.0;
    for (double x : g) var += (x - mean) * (x - mean);
    var /= 20.0;
    CHECK(gradient_flow_variance(g) == doctest::Approx(var).epsilon(1e-12));
}

TEST_CASE("semantic integrity score") {
    const auto exact = semantic_integrity_score(seg_of(5, {2, 3}), {2, 3});
    CHECK(exact.f1 == doctest::Approx(1.0));

    const auto none = semantic_integrity_score(seg_of(5, {}), {2});
    CHECK(none.precision == 1.0);
    CHECK(none.recall == 0.0);
    CHECK(none.f1 == 0.0);

    const auto both_empty = semantic_integrity_score(seg_of(5, {}), {});
    CHECK(both_empty.f1 == 1.0);

    const auto half = semantic_integrity_score(seg_of(5, {1, 2}), {2, 3});
    CHECK(half.precision == doctest::Approx(0.5));
    CHECK(half.recall == doctest::Approx(0.5));
    CHECK(half.f1 == doctest::Approx(0.5));

    // F1 = 0 iff no predicted boundary is gold (gold nonempty)
    const auto miss = semantic_integrity_score(seg_of(6, {1, 4}), {2, 3});
    CHECK(miss.f1 == 0.0);
}

TEST_CASE("embedding divergence") {
    EmbeddingTable a, b;
    a.dim = b.dim = 4;
    const Vec e = init_embedding(U"x", 4, 4);
    a.entries[U"x"] = e;
    b.entries[U"x"] = e;
    CHECK(embedding_divergence(a, b) == doctest::Approx(0.0));

    Vec anti = e;
    kernels::scal(anti.data(), -1.0, 4);
    b.entries[U"x"] = anti;
    CHECK(embedding_divergence(a, b) == doctest::Approx(1.0));

    // orthogonal pair -> 0.5
    Vec g = init_embedding(U"g", 5, 4);
    Vec orth = riemannian_project(e, g);
    REQUIRE(normalize_in_place(orth));
    b.entries[U"x"] = orth;
    CHECK(embedding_divergence(a, b) == doctest::Approx(0.5));
    CHECK(embedding_divergence(b, a) == doctest::Approx(0.5)); // symmetric

    EmbeddingTable c;
    c.dim = 4;
    c.entries[U"other"] = e;
    CHECK_THROWS_AS(embedding_divergence(a, c), NoSharedForms);
}

TEST_CASE("token frequency shift") {
    const std::vector<std::u32string> seqs{U"aaaa"};
    const std::vector<Segmentation> singles{seg_of(4, {1, 2, 3})};
    const std::vector<Segmentation> whole{seg_of(4, {})};

    // identical segmentations: identical curves, zero entropy delta
    const FreqShift same = token_frequency_shift(seqs, singles, singles);
    for (const auto& row : same.rows) CHECK(row.rel_freq_dyn == row.rel_freq_static);
    CHECK(same.entropy_dyn == same.entropy_static);

    // one repeated token vs distinct tokens
    const std::vector<std::u32string> seqs2{U"abcd"};
    const std::vector<Segmentation> distinct{seg_of(4, {1, 2, 3})};
    const FreqShift shift = token_frequency_shift(seqs2, whole, distinct);
    CHECK(shift.entropy_dyn == doctest::Approx(0.0));          // single "abcd" token
    CHECK(shift.entropy_static == doctest::Approx(std::log(4.0))); // 4 distinct units

    // recount oracle on a random case
    SplitMix64 rng(6);
    std::u32string q;
    for (int i = 0; i < 60; ++i) q.push_back(static_cast<char32_t>(U'a' + rng.next_below(3)));
    std::vector<std::size_t> cuts;
    for (std::size_t i = 1; i < q.size(); ++i)
        if (rng.next_below(2)) cuts.push_back(i);
    const std::vector<std::u32string> rseqs{q};
    const std::vector<Segmentation> rsegs{seg_of(q.size(), cuts)};
    const FreqShift fs = token_frequency_shift(rseqs, rsegs, rsegs);
    std::map<std::u32string, std::size_t> counts;
    std::size_t total = 0;
    for (const auto f : token_forms(q, rsegs[0])) {
        ++counts[std::u32string(f)];
        ++total;
    }
    double entropy = 0.0;
    for (const auto& [f, c] : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(total);
        entropy -= p * std::log(p);
    }
    CHECK(fs.entropy_dyn == doctest::Approx(entropy).epsilon(1e-12));
}

TEST_CASE("segmentation consistency") {
    const std::vector<Segmentation> it1{seg_of(6, {2, 4})};
    const std::vector<Segmentation> it2{seg_of(6, {2, 4})};
    CHECK(segmentation_consistency({it1, it2}) == 1.0);

    const std::vector<Segmentation> moved{seg_of(6, {1, 3, 5})};
    CHECK(segmentation_consistency({it1, moved}) == 0.0);

    // 2 of 4 final spans survive all iterations
    const std::vector<Segmentation> a{seg_of(8, {2, 4, 6})}; // spans 0-2,2-4,4-6,6-8
    const std::vector<Segmentation> b{seg_of(8, {2, 4, 5})}; // 0-2,2-4 survive
    const std::vector<Segmentation> final_segs{seg_of(8, {2, 4, 6})};
    CHECK(segmentation_consistency({a, b, final_segs}) == doctest::Approx(0.5));

    CHECK_THROWS_AS(segmentation_consistency({it1}), TooFewIterations);
}

TEST_CASE("metrics report validation and JSON round trip") {
    MetricsReport r;
    r.token_stability = 0.2;
    r.coherence_index = 0.6;
    r.ppl_dynamic = 3.1;
    r.ppl_static = 4.0;
    r.ppl_reduction_ratio = perplexity_reduction_ratio(3.1, 4.0);
    r.overhead_ratio = 0.4;
    r.grad_flow_variance = 0.001;
    r.semantic_integrity_f1 = 0.9;
    r.embedding_divergence_by_step = {0.3, 0.2, 0.1};
    r.seg_consistency_by_domain["planted"] = 0.8;
    r.freq_shift = {{1, 0.25, 0.2}, {2, 0.12, 0.1}};
    r.freq_entropy_dyn = 2.0;
    r.freq_entropy_static = 2.5;
    r.meta["gold_source"] = "whitespace-proxy";
    r.validate();

    const MetricsReport back = metrics_report_from_json(metrics_report_to_json(r));
    CHECK(back.token_stability == r.token_stability);
    CHECK(back.ppl_dynamic == r.ppl_dynamic);
    CHECK(back.embedding_divergence_by_step == r.embedding_divergence_by_step);
    CHECK(back.seg_consistency_by_domain == r.seg_consistency_by_domain);
    CHECK(back.freq_shift.size() == r.freq_shift.size());
    CHECK(back.meta == r.meta);

    MetricsReport bad = r;
    bad.token_stability = 1.5;
    CHECK_THROWS_AS(bad.validate(), MetricRangeError);
    bad = r;
    bad.ppl_dynamic = 0.0;
    CHECK_THROWS_AS(bad.validate(), MetricRangeError);
    bad = r;
    bad.overhead_ratio = -0.1;
    CHECK_THROWS_AS(bad.validate(), MetricRangeError);

    CHECK_THROWS_AS(metrics_report_from_json("not json"), MalformedReport);
    CHECK_THROWS_AS(metrics_report_from_json("{}"), MalformedReport);
}
