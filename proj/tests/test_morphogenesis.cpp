#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "morphotok/errors.hpp"
#include "morphotok/kernels.hpp"
#include "morphotok/morphogenesis.hpp"
#include "morphotok/rng.hpp"

#include <cmath>
#include <cstdlib>

using namespace morphotok;

namespace {

Corpus make_corpus(std::initializer_list<std::u32string> seqs) {
    Corpus c;
    c.domain_label = "test";
    c.sequences.assign(seqs);
    return c;
}

HyperParams defaults() {
    HyperParams hp;
    hp.iterations = 5;
    hp.seed = 11;
    return hp;
}

HyperParams fixed_point_params() {
    HyperParams hp = defaults();
    hp.gamma = 0.0;
    hp.lambda = 0.0;
    hp.theta = 1.0;
    return hp;
}

MorphoState small_state(const Corpus& corpus, const HyperParams& hp, std::size_t dim = 8) {
    auto model = std::make_shared<const BoundaryModel>(BoundaryModel::fit(corpus, 2, 2.0));
    GateParams gate = GateParams::identity(dim);
    gate.theta = hp.theta;
    return init_morpho_state(corpus, model, hp, SegConstraints{8, 1}, gate, dim);
}

void set_all_embeddings(MorphoState& state, const Vec& v) {
    for (auto& [form, e] : state.table.entries) e = v;
}

// after hand-patching a segmentation, give its forms table entries
void ensure_forms(MorphoState& state) {
    for (const auto& ss : state.seqs)
        for (const auto f : token_forms(ss.units, ss.seg))
            if (state.table.find(f) == nullptr)
                state.table.entries.emplace(std::u32string(f),
                                            init_embedding(f, 1, state.table.dim));
}

bool tables_equal(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.dim == b.dim && a.entries == b.entries;
}

} // namespace

TEST_CASE("score update rule") {
    CHECK(evolve_boundary_score(0.37, 0.0, 0.5, 0.3) == 0.37); // zero net drive
    CHECK(evolve_boundary_score(0.37, 0.1, 0.5, 0.0) == 0.37); // gamma 0
    CHECK(evolve_boundary_score(0.9, 1.0, 0.9, 0.5) == 1.0);   // clamped high
    CHECK(evolve_boundary_score(0.1, -1.0, 0.1, 0.5) == 0.0);  // clamped low
    CHECK(evolve_boundary_score(0.5, 0.2, 0.6, 0.5) ==
          doctest::Approx(0.5 + 0.5 * 0.3));
}

TEST_CASE("initial state thresholds back to the DP segmentation") {
    const HyperParams hp = defaults();
    SyntheticSpec spec;
    spec.num_words = 12;
    spec.total_units = 2500;
    spec.seed = 3;
    const Corpus corpus = generate_planted_corpus(spec, "p");
    MorphoState state = small_state(corpus, hp);
    for (const auto& ss : state.seqs) {
        CHECK(apply_threshold(ss.boundary_scores, state.constraints.max_token_len)
                  .boundaries == ss.seg.boundaries);
        for (double b : ss.boundary_scores) {
            CHECK(b >= 0.0);
            CHECK(b <= 1.0);
        }
    }
}

TEST_CASE("alignment scores") {
    const HyperParams hp = defaults();
    MorphoState state = small_state(make_corpus({U"abab", U"ab"}), hp);

    // identical embeddings everywhere -> coherence 1 for every token
    ensure_forms(state);
    set_all_embeddings(state, init_embedding(U"ref", 1, 8));
    for (std::size_t s = 0; s < state.seqs.size(); ++s)
        for (double c : alignment_scores(state, s, hp))
            CHECK(c == doctest::Approx(1.0));

    // two antipodal tokens
    MorphoState two = small_state(make_corpus({U"ab"}), hp);
    two.seqs[0].seg = Segmentation{2, {1}};
    ensure_forms(two);
    const Vec e = init_embedding(U"x", 2, 8);
    Vec anti = e;
    kernels::scal(anti.data(), -1.0, anti.size());
    two.table.entries[U"a"] = e;
    two.table.entries[U"b"] = anti;
    const auto scores = alignment_scores(two, 0, hp);
    REQUIRE(scores.size() == 2);
    CHECK(scores[0] == doctest::Approx(-1.0));
    CHECK(scores[1] == doctest::Approx(-1.0));

    // random tokenization matches a direct coherence recomputation
    MorphoState r = small_state(make_corpus({U"abcde"}), hp);
    r.seqs[0].seg = Segmentation{5, {1, 2, 3, 4}};
    ensure_forms(r);
    const auto direct = alignment_scores(r, 0, hp);
    const std::vector<std::u32string> forms{U"a", U"b", U"c", U"d", U"e"};
    for (std::size_t i = 0; i < 5; ++i) {
        std::vector<Vec> ctx;
        for (std::size_t j = (i >= hp.window ? i - hp.window : 0);
             j < std::min<std::size_t>(5, i + hp.window + 1); ++j)
            if (j != i) ctx.push_back(r.table.entries[forms[j]]);
        CHECK(direct[i] ==
              doctest::Approx(coherence(r.table.entries[forms[i]], ctx,
                                        hp.coherence_config())));
    }
}

TEST_CASE("merge and split probabilities") {
    HyperParams hp = defaults();
    hp.kappa_merge = 4.0;
    hp.tau_merge = 0.5;
    MorphoState state = small_state(make_corpus({U"ab"}), hp);
    state.seqs[0].seg = Segmentation{2, {1}};
    ensure_forms(state);

    // identical adjacent embeddings: logistic(4 * (1 - 0.5)) = logistic(2)
    const Vec e = init_embedding(U"m", 3, 8);
    state.table.entries[U"a"] = e;
    state.table.entries[U"b"] = e;
    auto probs = merge_split_probabilities(state, 0, hp);
    REQUIRE(probs.merge.size() == 1);
    CHECK(probs.merge[0] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-9));
    CHECK(probs.split.empty()); // single-unit tokens: no intra-token positions

    // orthogonal adjacent embeddings: logistic(-2)
    Vec g = init_embedding(U"g", 6, 8);
    Vec orth = riemannian_project(e, g);
    REQUIRE(normalize_in_place(orth));
    state.table.entries[U"b"] = orth;
    probs = merge_split_probabilities(state, 0, hp);
    CHECK(probs.merge[0] == doctest::Approx(1.0 / (1.0 + std::exp(2.0))).epsilon(1e-9));

    // split probabilities reduce to the boundary model signal at defaults
    MorphoState wide = small_state(make_corpus({U"abcdab", U"bcda"}), hp);
    wide.seqs[0].seg = Segmentation{6, {4}};
    ensure_forms(wide);
    const auto ms = merge_split_probabilities(wide, 0, hp);
    REQUIRE(ms.split.size() == 4); // positions 1,2,3 then 5
    REQUIRE((ms.split_pos == std::vector<std::size_t>{1, 2, 3, 5}));
    for (std::size_t k = 0; k < ms.split.size(); ++k)
        CHECK(ms.split[k] ==
              wide.model->boundary_probability(wide.seqs[0].units, ms.split_pos[k]));
}

TEST_CASE("apply_threshold") {
    // all scores below 0.5: forced cuts every max_token_len units
    const Segmentation forced = apply_threshold(std::vector<double>(19, 0.0), 8);
    CHECK(forced.boundaries == std::vector<std::size_t>{8, 16});

    const Segmentation all = apply_threshold(std::vector<double>(3, 1.0), 8);
    CHECK(all.boundaries == std::vector<std::size_t>{1, 2, 3});

    // the 0.5 tie counts as a boundary
    const Segmentation tie = apply_threshold({0.49, 0.5, 0.51}, 8);
    CHECK(tie.boundaries == std::vector<std::size_t>{2, 3});

    // clamp interacts with real cuts
    std::vector<double> scores(11, 0.0);
    scores[9] = 1.0; // boundary at position 10, length-12 sequence
    const Segmentation mixed = apply_threshold(scores, 4);
    CHECK(mixed.boundaries == std::vector<std::size_t>{4, 8, 10});
}

TEST_CASE("boundary score evolution stays in range and respects gamma = 0") {
    HyperParams hp = defaults();
    MorphoState state = small_state(make_corpus({U"abcabcab", U"cabcab"}), hp);

    HyperParams frozen = hp;
    frozen.gamma = 0.0;
    for (std::size_t s = 0; s < state.seqs.size(); ++s)
        CHECK(update_boundary_scores(state, s, frozen) == state.seqs[s].boundary_scores);

    for (std::size_t s = 0; s < state.seqs.size(); ++s) {
        for (double b : update_boundary_scores(state, s, hp)) {
            CHECK(b >= 0.0);
            CHECK(b <= 1.0);
        }
    }
}

TEST_CASE("update_embeddings identities and norms") {
    HyperParams hp = fixed_point_params();
    MorphoState state = small_state(make_corpus({U"abab", U"baba"}), hp);

    // lambda = 0 with a direction-preserving gate leaves the table untouched
    const EmbeddingUpdate upd = update_embeddings(state, hp, state.segmentations());
    CHECK(tables_equal(upd.table, state.table));
    CHECK(upd.alignment_loss == 0.0);
    CHECK(upd.grad_mean == 0.0);

    // real update keeps everything unit-norm
    HyperParams live = defaults();
    const EmbeddingUpdate moved = update_embeddings(state, live, state.segmentations());
    for (const auto& [form, e] : moved.table.entries)
        CHECK(std::abs(std::sqrt(kernels::sqnorm(e.data(), e.size())) - 1.0) < 1e-9);
    CHECK(moved.divergence >= 0.0);
}

TEST_CASE("merged forms start at the normalized midpoint of their parts") {
    HyperParams hp = defaults();
    MorphoState state = small_state(make_corpus({U"xy", U"xy", U"yx"}), hp);
    // previous segmentation: two single-unit tokens; new: one merged token
    const std::vector<Segmentation> previous{Segmentation{2, {1}}, Segmentation{2, {1}},
                                             Segmentation{2, {1}}};
    state.seqs[0].seg = Segmentation{2, {}};
    state.seqs[1].seg = Segmentation{2, {}};

    const Vec e = init_embedding(U"same", 4, 8);
    state.table.entries[U"x"] = e;
    state.table.entries[U"y"] = e;
    state.table.entries.erase(U"xy");

    const EmbeddingUpdate upd = update_embeddings(state, hp, previous);
    REQUIRE(upd.table.find(U"xy") != nullptr);
    // midpoint of two identical points is that point; the later drive step
    // moves it, so compare against the table entry before the geodesic step
    // by re-deriving: with identical parts the midpoint equals e.
    // The drive then acts on it like on any form; check it stayed unit norm
    // and close to e's great-circle neighborhood.
    const Vec& merged = *upd.table.find(U"xy");
    CHECK(std::abs(std::sqrt(kernels::sqnorm(merged.data(), merged.size())) - 1.0) < 1e-9);
    const double cos = kernels::dot(merged.data(), e.data(), e.size());
    CHECK(cos > 0.9);
}

TEST_CASE("fixed point: zero drives make every step a bit-exact identity") {
    const HyperParams hp = fixed_point_params();
    SyntheticSpec spec;
    spec.num_words = 10;
    spec.total_units = 1500;
    spec.seed = 9;
    const Corpus corpus = generate_planted_corpus(spec, "p");
    MorphoState state = small_state(corpus, hp);

    const auto segs0 = state.segmentations();
    const EmbeddingTable table0 = state.table;
    std::vector<std::vector<double>> scores0;
    for (const auto& ss : state.seqs) scores0.push_back(ss.boundary_scores);

    for (int it = 0; it < 3; ++it) {
        const StepTrace trace = morphogenesis_step(state, hp);
        CHECK(trace.token_stability == 0.0);
        CHECK(trace.alignment_loss == 0.0);
        CHECK(trace.grad_mean == 0.0);
        CHECK(state.segmentations() == segs0);
        CHECK(tables_equal(state.table, table0));
        for (std::size_t s = 0; s < state.seqs.size(); ++s)
            CHECK(state.seqs[s].boundary_scores == scores0[s]);
    }
}

TEST_CASE("run is deterministic and independent of thread count") {
    SyntheticSpec spec;
    spec.num_words = 14;
    spec.total_units = 3000;
    spec.seed = 17;
    const Corpus corpus = generate_planted_corpus(spec, "p");
    HyperParams hp = defaults();
    hp.iterations = 4;

    auto model = std::make_shared<const BoundaryModel>(BoundaryModel::fit(corpus, 2, 2.0));
    GateParams gate = GateParams::identity(8);
    gate.theta = hp.theta;

    setenv("MORPHOTOK_THREADS", "1", 1);
    auto [state1, traces1] =
        run_morphogenesis(corpus, model, hp, SegConstraints{8, 1}, gate, 8);
    setenv("MORPHOTOK_THREADS", "4", 1);
    auto [state2, traces2] =
        run_morphogenesis(corpus, model, hp, SegConstraints{8, 1}, gate, 8);
    unsetenv("MORPHOTOK_THREADS");

    REQUIRE(traces1.size() == traces2.size());
    for (std::size_t t = 0; t < traces1.size(); ++t) {
        CHECK(traces1[t].token_stability == traces2[t].token_stability);
        CHECK(traces1[t].mean_coherence == traces2[t].mean_coherence);
        CHECK(traces1[t].alignment_loss == traces2[t].alignment_loss);
        CHECK(traces1[t].embedding_divergence == traces2[t].embedding_divergence);
        CHECK(traces1[t].grad_mean == traces2[t].grad_mean);
        CHECK(traces1[t].grad_var == traces2[t].grad_var);
    }
    CHECK(state1.segmentations() == state2.segmentations());
    CHECK(tables_equal(state1.table, state2.table));

    // vocabulary bound: every stored form occurred, so the table can never
    // outgrow the unit count
    CHECK(state1.table.entries.size() <= corpus.total_units());
}

TEST_CASE("segmentations stay valid and scores bounded across a live run") {
    SyntheticSpec spec;
    spec.num_words = 14;
    spec.total_units = 2500;
    spec.seed = 29;
    const Corpus corpus = generate_planted_corpus(spec, "p");
    HyperParams hp = defaults();
    hp.iterations = 6;
    auto model = std::make_shared<const BoundaryModel>(BoundaryModel::fit(corpus, 2, 2.0));
    GateParams gate = GateParams::identity(8);
    gate.theta = hp.theta;

    run_morphogenesis(corpus, model, hp, SegConstraints{8, 1}, gate, 8, {},
                      [&](const MorphoState& st, const StepTrace&) {
                          for (const auto& ss : st.seqs) {
                              ss.seg.validate();
                              CHECK(ss.seg.length == ss.units.size());
                              std::size_t prev = 0;
                              for (std::size_t b : ss.seg.boundaries) {
                                  CHECK(b - prev <= st.constraints.max_token_len);
                                  prev = b;
                              }
                              CHECK(ss.seg.length - prev <= st.constraints.max_token_len);
                              for (double b : ss.boundary_scores) {
                                  CHECK(b >= 0.0);
                                  CHECK(b <= 1.0);
                              }
                          }
                      });
}

TEST_CASE("planted boundaries accumulate higher scores than word-internal ones") {
    SyntheticSpec spec;
    spec.num_words = 20;
    spec.total_units = 6000;
    spec.words_per_sequence = 14;
    spec.seed = 33;
    const Corpus corpus = generate_planted_corpus(spec, "p");
    HyperParams hp = defaults();
    hp.iterations = 10;
    auto model = std::make_shared<const BoundaryModel>(BoundaryModel::fit(corpus, 2, 2.0));
    GateParams gate = GateParams::identity(16);
    gate.theta = hp.theta;
    auto [state, traces] =
        run_morphogenesis(corpus, model, hp, SegConstraints{8, 1}, gate, 16);

    double gold_sum = 0.0, internal_sum = 0.0;
    std::size_t gold_n = 0, internal_n = 0;
    for (std::size_t s = 0; s < state.seqs.size(); ++s) {
        const auto& gold = (*corpus.gold)[s];
        std::size_t g = 0;
        for (std::size_t i = 1; i < state.seqs[s].units.size(); ++i) {
            const bool is_gold = g < gold.size() && gold[g] == i;
            if (is_gold) ++g;
            const double b = state.seqs[s].boundary_scores[i - 1];
            if (is_gold) {
                gold_sum += b;
                ++gold_n;
            } else {
                internal_sum += b;
                ++internal_n;
            }
        }
    }
    REQUIRE(gold_n > 0);
    REQUIRE(internal_n > 0);
    CHECK(gold_sum / gold_n > internal_sum / internal_n);
}

TEST_CASE("run contract basics") {
    SyntheticSpec spec;
    spec.num_words = 8;
    spec.total_units = 900;
    spec.seed = 41;
    const Corpus corpus = generate_planted_corpus(spec, "p");
    HyperParams hp = defaults();
    hp.iterations = 0;
    auto model = std::make_shared<const BoundaryModel>(BoundaryModel::fit(corpus, 2, 2.0));
    GateParams gate = GateParams::identity(8);
    gate.theta = hp.theta;

    const auto [state, traces] =
        run_morphogenesis(corpus, model, hp, SegConstraints{8, 1}, gate, 8);
    CHECK(traces.empty());

    // freezing both halves keeps the state constant
    HyperParams hp3 = defaults();
    hp3.iterations = 3;
    AblationFlags both{true, true};
    auto [frozen, ftraces] =
        run_morphogenesis(corpus, model, hp3, SegConstraints{8, 1}, gate, 8, both);
    MorphoState fresh = init_morpho_state(corpus, model, hp3, SegConstraints{8, 1}, gate, 8);
    CHECK(frozen.segmentations() == fresh.segmentations());
    CHECK(tables_equal(frozen.table, fresh.table));
    for (const auto& t : ftraces) CHECK(t.token_stability == 0.0);
}

TEST_CASE("gradient flow variance overload reads the trace column") {
    std::vector<StepTrace> traces(3);
    traces[0].grad_mean = 0.0;
    traces[1].grad_mean = 2.0;
    traces[2].grad_mean = 1.0;
    const double direct = gradient_flow_variance(std::vector<double>{0.0, 2.0, 1.0});
    CHECK(gradient_flow_variance(traces) == doctest::Approx(direct));
}
