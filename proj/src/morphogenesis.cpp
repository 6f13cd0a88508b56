#include "morphotok/morphogenesis.hpp"

#include "morphotok/errors.hpp"
#include "morphotok/kernels.hpp"
#include "morphotok/rng.hpp"

#include "parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace morphotok {

namespace k = kernels;

void HyperParams::validate() const {
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (alpha <= 0.0) throw ConfigError("alpha must be > 0");
    if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
    if (theta < 0.0 || theta > 1.0) throw ConfigError("theta must be in [0,1]");
    if (tau <= 0.0) throw ConfigError("tau must be > 0");
    if (window < 1) throw ConfigError("window must be >= 1");
    if (kappa_merge <= 0.0 || kappa_split <= 0.0)
        throw ConfigError("merge/split slopes must be > 0");
    if (tau_merge < -1.0 || tau_merge > 1.0) throw ConfigError("tau_merge must be in [-1,1]");
}

std::vector<Segmentation> MorphoState::segmentations() const {
    std::vector<Segmentation> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) out.push_back(s.seg);
    return out;
}

std::vector<std::u32string> MorphoState::sequences() const {
    std::vector<std::u32string> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) out.push_back(s.units);
    return out;
}

double MorphoState::boundary_score_variance() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : seqs) {
        for (double b : s.boundary_scores) {
            sum += b * (1.0 - b);
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double gradient_flow_variance(const std::vector<StepTrace>& traces) {
    std::vector<double> means;
    means.reserve(traces.size());
    for (const auto& t : traces) means.push_back(t.grad_mean);
    return gradient_flow_variance(means);
}

// --- shared helpers ---------------------------------------------------------------

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::uint64_t embedding_seed(const HyperParams& hp) {
    return derive_seed(hp.seed, "embedding-init");
}

/// Token index of every unit under a segmentation.
std::vector<std::uint32_t> unit_token_index(const Segmentation& seg) {
    std::vector<std::uint32_t> out(seg.length);
    std::uint32_t tok = 0;
    std::size_t next = 0;
    for (std::size_t u = 0; u < seg.length; ++u) {
        if (next < seg.boundaries.size() && u == seg.boundaries[next]) {
            ++tok;
            ++next;
        }
        out[u] = tok;
    }
    return out;
}

/// Embedding pointers for the current tokens of a sequence; forms must
/// already be present in the table.
std::vector<const double*> resolve_embeddings(const EmbeddingTable& table,
                                              std::u32string_view units,
                                              const Segmentation& seg) {
    std::vector<const double*> out;
    out.reserve(seg.token_count());
    for (const auto f : token_forms(units, seg)) {
        const Vec* e = table.find(f);
        if (e == nullptr)
            throw EmptyState("missing embedding for form '" + encode_utf8(f) + "'");
        out.push_back(e->data());
    }
    return out;
}

/// Insert init_embedding entries for any current token form not yet in the
/// table. Serial; runs before the parallel phases of each step.
void insert_missing_forms(MorphoState& state, const HyperParams& hp) {
    const std::uint64_t seed = embedding_seed(hp);
    for (const auto& ss : state.seqs) {
        for (const auto f : token_forms(ss.units, ss.seg)) {
            if (state.table.find(f) == nullptr)
                state.table.entries.emplace(std::u32string(f),
                                            init_embedding(f, seed, state.table.dim));
        }
    }
}

double window_mean_coherence(const std::vector<const double*>& embs, std::size_t wlo,
                             std::size_t whi, std::size_t dim, const CoherenceConfig& cfg,
                             std::vector<const double*>& ctx_scratch) {
    double sum = 0.0;
    const std::size_t w = cfg.window;
    for (std::size_t t = wlo; t < whi; ++t) {
        ctx_scratch.clear();
        const std::size_t lo = t >= w ? t - w : 0;
        const std::size_t hi = std::min(embs.size(), t + w + 1);
        for (std::size_t j = lo; j < hi; ++j)
            if (j != t) ctx_scratch.push_back(embs[j]);
        sum += ctx_scratch.empty()
                   ? 1.0
                   : coherence(std::span<const double>(embs[t], dim),
                               std::span<const double* const>(ctx_scratch), cfg);
    }
    return sum / static_cast<double>(whi - wlo);
}

} // namespace

// --- alignment scores ---------------------------------------------------------------

std::vector<double> alignment_scores(const MorphoState& state, std::size_t seq_index,
                                     const HyperParams& hp) {
    const SeqState& ss = state.seqs.at(seq_index);
    const auto embs = resolve_embeddings(state.table, ss.units, ss.seg);
    return window_coherences(embs, state.table.dim, hp.coherence_config());
}

// --- merge / split probabilities -------------------------------------------------------

MergeSplitProbs merge_split_probabilities(const MorphoState& state, std::size_t seq_index,
                                          const HyperParams& hp) {
    const SeqState& ss = state.seqs.at(seq_index);
    const auto embs = resolve_embeddings(state.table, ss.units, ss.seg);
    const double tau_split = hp.tau_split.value_or(state.model->h_bar());

    MergeSplitProbs out;
    out.merge.reserve(embs.size() > 0 ? embs.size() - 1 : 0);
    for (std::size_t t = 0; t + 1 < embs.size(); ++t) {
        const double cos = k::dot(embs[t], embs[t + 1], state.table.dim);
        out.merge.push_back(logistic(hp.kappa_merge * (cos - hp.tau_merge)));
    }
    for (const auto& [start, end] : ss.seg.token_spans()) {
        for (std::size_t j = start + 1; j < end; ++j) {
            out.split.push_back(logistic(
                hp.kappa_split * (state.model->entropy_average(ss.units, j) - tau_split)));
            out.split_pos.push_back(j);
        }
    }
    return out;
}

// --- boundary score evolution -----------------------------------------------------------

double evolve_boundary_score(double b, double delta, double p, double gamma) {
    return std::clamp(b + gamma * (delta + p - 0.5), 0.0, 1.0);
}

namespace {

std::vector<double> update_boundary_scores_impl(const MorphoState& state,
                                                std::size_t seq_index, const HyperParams& hp,
                                                const std::vector<double>& cur_coh) {
    const SeqState& ss = state.seqs[seq_index];
    const std::size_t len = ss.units.size();
    std::vector<double> out = ss.boundary_scores;
    if (len < 2 || hp.gamma == 0.0) return out;

    const CoherenceConfig cfg = hp.coherence_config();
    const std::size_t dim = state.table.dim;
    const std::size_t w = hp.window;
    const std::size_t margin = 2 * w + 1;

    const auto spans = ss.seg.token_spans();
    const std::size_t m = spans.size();
    const auto tok_of = unit_token_index(ss.seg);
    const auto cur_embs = resolve_embeddings(state.table, ss.units, ss.seg);

    std::vector<double> cum(m + 1, 0.0);
    for (std::size_t t = 0; t < m; ++t) cum[t + 1] = cum[t] + cur_coh[t];

    const std::uint64_t seed = embedding_seed(hp);
    Vec scratch_a(dim), scratch_b(dim);
    std::vector<const double*> local;
    std::vector<const double*> ctx_scratch;
    local.reserve(2 * margin + 3);
    ctx_scratch.reserve(2 * w + 2);

    // Resolve a hypothesis form: evolved value when known, otherwise the same
    // rule update_embeddings would use on adoption.
    const auto lookup_or = [&](std::u32string_view form, Vec& scratch,
                               const double* midpoint_a,
                               const double* midpoint_b) -> const double* {
        if (const Vec* e = state.table.find(form)) return e->data();
        if (midpoint_a != nullptr) {
            for (std::size_t i = 0; i < dim; ++i) scratch[i] = midpoint_a[i] + midpoint_b[i];
            if (normalize_in_place(scratch)) return scratch.data();
        }
        scratch = init_embedding(form, seed, dim);
        return scratch.data();
    };

    for (std::size_t i = 1; i < len; ++i) {
        const bool on = tok_of[i - 1] != tok_of[i];
        const std::size_t center_lo = tok_of[i - 1];
        const std::size_t center_hi = tok_of[i];

        // Hypothesis equal to the current tokenization: window mean over the
        // precomputed per-token coherences.
        const std::size_t cw_lo = center_lo >= w ? center_lo - w : 0;
        const std::size_t cw_hi = std::min(m, center_hi + w + 1);
        const double c_current =
            (cum[cw_hi] - cum[cw_lo]) / static_cast<double>(cw_hi - cw_lo);

        // Toggled hypothesis: rebuild the neighborhood with the merge/split
        // applied and score its window fresh.
        const std::size_t lo = center_lo >= margin ? center_lo - margin : 0;
        const std::size_t hi = std::min(m, center_hi + margin + 1);
        local.clear();
        std::size_t mod_center_lo = 0, mod_center_hi = 0;
        if (on) {
            // merge the two tokens flanking the cut
            const std::size_t a = spans[center_lo].first;
            const std::size_t b = spans[center_hi].second;
            for (std::size_t t = lo; t < hi; ++t) {
                if (t == center_hi) continue;
                if (t == center_lo) {
                    mod_center_lo = mod_center_hi = local.size();
                    local.push_back(lookup_or(
                        std::u32string_view(ss.units).substr(a, b - a), scratch_a,
                        cur_embs[center_lo], cur_embs[center_hi]));
                } else {
                    local.push_back(cur_embs[t]);
                }
            }
        } else {
            // split the containing token at i
            const std::size_t a = spans[center_lo].first;
            const std::size_t b = spans[center_lo].second;
            for (std::size_t t = lo; t < hi; ++t) {
                if (t == center_lo) {
                    mod_center_lo = local.size();
                    local.push_back(
                        lookup_or(std::u32string_view(ss.units).substr(a, i - a),
                                  scratch_a, nullptr, nullptr));
                    mod_center_hi = local.size();
                    local.push_back(
                        lookup_or(std::u32string_view(ss.units).substr(i, b - i),
                                  scratch_b, nullptr, nullptr));
                } else {
                    local.push_back(cur_embs[t]);
                }
            }
        }
        const std::size_t mw_lo = mod_center_lo >= w ? mod_center_lo - w : 0;
        const std::size_t mw_hi = std::min(local.size(), mod_center_hi + w + 1);
        const double c_modified =
            window_mean_coherence(local, mw_lo, mw_hi, dim, cfg, ctx_scratch);

        const double c_on = on ? c_current : c_modified;
        const double c_off = on ? c_modified : c_current;
        const double delta = c_on - c_off;
        out[i - 1] = evolve_boundary_score(ss.boundary_scores[i - 1], delta,
                                           ss.prob_cache[i - 1], hp.gamma);
    }
    return out;
}

} // namespace

std::vector<double> update_boundary_scores(const MorphoState& state, std::size_t seq_index,
                                           const HyperParams& hp) {
    const SeqState& ss = state.seqs.at(seq_index);
    const auto embs = resolve_embeddings(state.table, ss.units, ss.seg);
    const auto cur_coh = window_coherences(embs, state.table.dim, hp.coherence_config());
    return update_boundary_scores_impl(state, seq_index, hp, cur_coh);
}

// --- thresholding ---------------------------------------------------------------------

Segmentation apply_threshold(const std::vector<double>& boundary_scores,
                             std::size_t max_token_len) {
    if (max_token_len == 0) throw ConfigError("max_token_len must be >= 1");
    Segmentation seg;
    seg.length = boundary_scores.size() + 1;
    std::size_t prev = 0;
    for (std::size_t i = 1; i <= boundary_scores.size(); ++i) {
        if (boundary_scores[i - 1] >= 0.5) {
            while (i - prev > max_token_len) {
                prev += max_token_len;
                seg.boundaries.push_back(prev);
            }
            seg.boundaries.push_back(i);
            prev = i;
        }
    }
    while (seg.length - prev > max_token_len) {
        prev += max_token_len;
        seg.boundaries.push_back(prev);
    }
    return seg;
}

// --- embedding update -------------------------------------------------------------------

namespace {

/// Classify a form's first occurrence against the previous segmentation and
/// produce its initial embedding: normalized midpoint of completely merged
/// old tokens, hash init for split fragments and everything else.
Vec newcomer_embedding(const EmbeddingTable& table, std::u32string_view units,
                       const Segmentation& old_seg, std::size_t a, std::size_t b,
                       std::uint64_t seed) {
    const std::u32string_view form = units.substr(a, b - a);
    const std::size_t dim = table.dim;
    const bool left_cut = a == 0 || old_seg.has(a);
    const bool right_cut = b == old_seg.length || old_seg.has(b);
    if (left_cut && right_cut) {
        std::vector<std::size_t> cuts{a};
        for (std::size_t p : old_seg.boundaries)
            if (p > a && p < b) cuts.push_back(p);
        cuts.push_back(b);
        if (cuts.size() >= 3) { // at least two constituents: a merge
            Vec mid(dim, 0.0);
            bool complete = true;
            for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
                const Vec* e = table.find(units.substr(cuts[c], cuts[c + 1] - cuts[c]));
                if (e == nullptr) {
                    complete = false;
                    break;
                }
                k::axpy(mid.data(), 1.0, e->data(), dim);
            }
            if (complete && normalize_in_place(mid)) return mid;
        }
    }
    return init_embedding(form, seed, dim);
}

struct FormDrive {
    Vec grad_sum;
    std::size_t occurrences = 0;
};

} // namespace

EmbeddingUpdate update_embeddings(const MorphoState& state, const HyperParams& hp,
                                  const std::vector<Segmentation>& previous_segs) {
    if (previous_segs.size() != state.seqs.size())
        throw LengthMismatch("previous segmentation list does not match state");
    const std::size_t dim = state.table.dim;
    const CoherenceConfig cfg = hp.coherence_config();
    const std::uint64_t seed = embedding_seed(hp);

    // Working table: previous embeddings plus entries for forms created by
    // this iteration's merges/splits. All drive reads come from here.
    EmbeddingTable working = state.table;
    for (std::size_t s = 0; s < state.seqs.size(); ++s) {
        const SeqState& ss = state.seqs[s];
        for (const auto& [a, b] : ss.seg.token_spans()) {
            const auto form = std::u32string_view(ss.units).substr(a, b - a);
            if (working.find(form) == nullptr) {
                working.entries.emplace(
                    std::u32string(form),
                    newcomer_embedding(working, ss.units, previous_segs[s], a, b, seed));
            }
        }
    }

    // Mean coherence gradient per form over all of its occurrences, sequences
    // and tokens visited in canonical order.
    std::map<std::u32string, FormDrive, std::less<>> drives;
    const std::size_t w = hp.window;
    std::vector<const double*> ctx;
    for (const auto& ss : state.seqs) {
        const auto forms = token_forms(ss.units, ss.seg);
        std::vector<const double*> embs;
        embs.reserve(forms.size());
        for (const auto f : forms) embs.push_back(working.find(f)->data());
        for (std::size_t t = 0; t < forms.size(); ++t) {
            ctx.clear();
            const std::size_t lo = t >= w ? t - w : 0;
            const std::size_t hi = std::min(forms.size(), t + w + 1);
            for (std::size_t j = lo; j < hi; ++j)
                if (j != t) ctx.push_back(embs[j]);
            auto it = drives.find(forms[t]);
            if (it == drives.end()) {
                it = drives.emplace(std::u32string(forms[t]), FormDrive{Vec(dim, 0.0), 0})
                         .first;
            }
            if (!ctx.empty()) {
                const Vec g = coherence_gradient(std::span<const double>(embs[t], dim),
                                                 std::span<const double* const>(ctx), cfg);
                k::axpy(it->second.grad_sum.data(), 1.0, g.data(), dim);
            }
            ++it->second.occurrences;
        }
    }

    EmbeddingUpdate out;
    out.table = working;

    const double decayed_alpha =
        hp.alpha_decay ? hp.alpha / std::sqrt(static_cast<double>(state.iteration + 1))
                       : hp.alpha;
    const double signed_alpha = hp.descent ? decayed_alpha : -decayed_alpha;
    const bool identity_gate = state.gate.is_identity();

    std::vector<Vec> displacements, projected_grads;
    std::vector<double> magnitudes;
    displacements.reserve(drives.size());
    projected_grads.reserve(drives.size());
    magnitudes.reserve(drives.size());

    for (const auto& [form, drive] : drives) {
        const Vec& e = *working.find(form);
        Vec mean_grad(dim, 0.0);
        k::axpy(mean_grad.data(), 1.0 / static_cast<double>(drive.occurrences),
                drive.grad_sum.data(), dim);
        const Vec tangent_unit = riemannian_project(e, mean_grad);
        Vec scaled = tangent_unit;
        k::scal(scaled.data(), hp.lambda, dim);

        Vec stepped = geodesic_step(e, scaled, signed_alpha);
        Vec updated;
        if (identity_gate) {
            updated = std::move(stepped);
        } else {
            Vec gated = residual_gate(stepped, state.gate);
            updated = normalize_in_place(gated) ? std::move(gated) : std::move(stepped);
        }

        Vec disp(dim);
        for (std::size_t i = 0; i < dim; ++i) disp[i] = updated[i] - e[i];
        magnitudes.push_back(std::sqrt(k::sqnorm(disp.data(), dim)));
        displacements.push_back(std::move(disp));
        projected_grads.push_back(tangent_unit);

        out.table.entries[std::u32string(form)] = std::move(updated);
    }

    if (!displacements.empty()) {
        out.alignment_loss = alignment_loss(displacements, projected_grads, hp.lambda);
        double mean = 0.0;
        for (double g : magnitudes) mean += g;
        mean /= static_cast<double>(magnitudes.size());
        double var = 0.0;
        for (double g : magnitudes) var += (g - mean) * (g - mean);
        out.grad_mean = mean;
        out.grad_var = var / static_cast<double>(magnitudes.size());
    }
    out.divergence = embedding_divergence(state.table, out.table);
    return out;
}

// --- the step ------------------------------------------------------------------------

StepTrace morphogenesis_step(MorphoState& state, const HyperParams& hp,
                             const AblationFlags& ablation) {
    const auto t0 = std::chrono::steady_clock::now();
    hp.validate();
    const unsigned threads = thread_budget();
    const std::size_t n = state.seqs.size();

    insert_missing_forms(state, hp);

    // Phase 1: alignment scores and merge/split probabilities per sequence
    // under the entering tokenization.
    std::vector<std::vector<double>> coh(n);
    parallel_for(n, threads, [&](std::size_t s) {
        const SeqState& ss = state.seqs[s];
        const auto embs = resolve_embeddings(state.table, ss.units, ss.seg);
        coh[s] = window_coherences(embs, state.table.dim, hp.coherence_config());
        (void)merge_split_probabilities(state, s, hp);
    });

    double coh_sum = 0.0;
    std::size_t coh_count = 0;
    for (const auto& c : coh) {
        for (double x : c) coh_sum += x;
        coh_count += c.size();
    }

    // Phases 2+3: boundary-score evolution and re-thresholding.
    std::vector<Segmentation> old_segs = state.segmentations();
    std::vector<double> stability(n, 0.0);
    if (!ablation.freeze_segmentation) {
        std::vector<std::vector<double>> new_scores(n);
        parallel_for(n, threads, [&](std::size_t s) {
            new_scores[s] = update_boundary_scores_impl(state, s, hp, coh[s]);
        });
        for (std::size_t s = 0; s < n; ++s) {
            state.seqs[s].boundary_scores = std::move(new_scores[s]);
            state.seqs[s].seg = apply_threshold(state.seqs[s].boundary_scores,
                                                state.constraints.max_token_len);
            stability[s] = token_stability_score(old_segs[s], state.seqs[s].seg);
        }
    }

    StepTrace trace;
    trace.token_stability = 0.0;
    for (double s : stability) trace.token_stability += s;
    if (n > 0) trace.token_stability /= static_cast<double>(n);
    trace.mean_coherence =
        coh_count > 0 ? coh_sum / static_cast<double>(coh_count) : 0.0;

    // Phase 4: latent-space embedding update under the new tokenization.
    if (!ablation.freeze_embeddings) {
        EmbeddingUpdate upd = update_embeddings(state, hp, old_segs);
        state.table = std::move(upd.table);
        trace.alignment_loss = upd.alignment_loss;
        trace.embedding_divergence = upd.divergence;
        trace.grad_mean = upd.grad_mean;
        trace.grad_var = upd.grad_var;
    }

    state.iteration += 1;
    trace.iteration = state.iteration;
    trace.duration_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    return trace;
}

// --- init / run ------------------------------------------------------------------------

MorphoState init_morpho_state(const Corpus& corpus,
                              std::shared_ptr<const BoundaryModel> model,
                              const HyperParams& hp, const SegConstraints& constraints,
                              const GateParams& gate, std::size_t dim,
                              const EmbeddingTable* warm_start) {
    if (corpus.sequences.empty()) throw EmptyCorpusError("cannot run on empty corpus");
    hp.validate();
    gate.validate();
    if (gate.dim != dim) throw DimensionMismatch("gate dimension differs from table");

    MorphoState state;
    state.model = std::move(model);
    state.constraints = constraints;
    state.gate = gate;
    if (warm_start != nullptr) {
        if (warm_start->dim != dim) throw DimensionMismatch("warm-start table dim differs");
        state.table = *warm_start;
    }
    state.table.dim = dim;

    state.seqs.reserve(corpus.sequences.size());
    for (const auto& units : corpus.sequences) {
        SeqState ss;
        ss.units = units;
        ss.prob_cache = state.model->probability_profile(units);
        ss.seg = optimal_segmentation_probs(ss.prob_cache, constraints);

        // Scores start at the model profile, nudged across the 0.5 line where
        // needed so thresholding reproduces the DP segmentation exactly.
        ss.boundary_scores = ss.prob_cache;
        for (std::size_t i = 0; i < ss.boundary_scores.size(); ++i) {
            const bool cut = ss.seg.has(i + 1);
            double& b = ss.boundary_scores[i];
            if (cut && b < 0.5) b = 0.5;
            if (!cut && b >= 0.5) b = std::nextafter(0.5, 0.0);
        }
        state.seqs.push_back(std::move(ss));
    }
    insert_missing_forms(state, hp);
    return state;
}

std::vector<StepTrace> continue_morphogenesis(MorphoState& state, const HyperParams& hp,
                                              std::size_t iterations,
                                              const AblationFlags& ablation,
                                              const StepObserver& observer) {
    std::vector<StepTrace> traces;
    traces.reserve(iterations);
    for (std::size_t t = 0; t < iterations; ++t) {
        traces.push_back(morphogenesis_step(state, hp, ablation));
        if (observer) observer(state, traces.back());
    }
    return traces;
}

std::pair<MorphoState, std::vector<StepTrace>> run_morphogenesis(
    const Corpus& corpus, std::shared_ptr<const BoundaryModel> model,
    const HyperParams& hp, const SegConstraints& constraints, const GateParams& gate,
    std::size_t dim, const AblationFlags& ablation, const StepObserver& observer) {
    MorphoState state = init_morpho_state(corpus, std::move(model), hp, constraints,
                                          gate, dim);
    auto traces = continue_morphogenesis(state, hp, hp.iterations, ablation, observer);
    return {std::move(state), std::move(traces)};
}

} // namespace morphotok
