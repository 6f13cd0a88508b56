#pragma once

#include "morphotok/boundary.hpp"
#include "morphotok/corpus.hpp"
#include "morphotok/manifold.hpp"
#include "morphotok/metrics.hpp"

#include <functional>
#include <memory>
#include <optional>

namespace morphotok {

struct HyperParams {
    double lambda = 1.0;      // coherence-drive trade-off
    double alpha = 0.1;       // geodesic step size
    double gamma = 0.3;       // boundary-score update coefficient
    double theta = 0.9;       // residual gate scale
    double tau = 0.5;         // attention temperature
    std::size_t window = 3;   // context window, in tokens
    double kappa_merge = 4.0;
    double tau_merge = 0.5;
    double kappa_split = 2.0;
    std::optional<double> tau_split; // nats; empty -> boundary model h_bar
    std::size_t iterations = 20;
    std::uint64_t seed = 0;
    bool descent = true;      // step toward the coherence drive
    bool alpha_decay = false; // optional 1/sqrt(t) schedule

    void validate() const;
    CoherenceConfig coherence_config() const { return {window, tau}; }
};

struct AblationFlags {
    bool freeze_segmentation = false;
    bool freeze_embeddings = false;
};

/// One sequence's evolving segmentation state.
struct SeqState {
    std::u32string units;
    std::vector<double> boundary_scores; // interior positions, in [0,1]
    Segmentation seg;
    std::vector<double> prob_cache; // boundary-model profile, fixed per run
};

struct MorphoState {
    std::vector<SeqState> seqs;
    EmbeddingTable table;
    GateParams gate;
    std::shared_ptr<const BoundaryModel> model;
    SegConstraints constraints;
    std::size_t iteration = 0;

    std::vector<Segmentation> segmentations() const;
    std::vector<std::u32string> sequences() const;

    /// Mean Bernoulli variance of the boundary scores, b(1-b); the per-
    /// iteration "token variance" of the ablation study.
    double boundary_score_variance() const;
};

struct StepTrace {
    std::size_t iteration = 0;
    double token_stability = 0.0;
    double mean_coherence = 0.0;
    double alignment_loss = 0.0;
    double embedding_divergence = 0.0;
    double grad_mean = 0.0;
    double grad_var = 0.0;
    double duration_ms = 0.0;
};

/// Convenience overload matching the metrics-level signature.
double gradient_flow_variance(const std::vector<StepTrace>& traces);

/// Per-token coherence of one sequence under its current segmentation.
std::vector<double> alignment_scores(const MorphoState& state, std::size_t seq_index,
                                     const HyperParams& hp);

struct MergeSplitProbs {
    std::vector<double> merge;          // one per adjacent token pair
    std::vector<double> split;          // one per intra-token interior position
    std::vector<std::size_t> split_pos; // unit positions the split probs refer to
};

/// Merge probability from adjacent-embedding cosine, split probability from
/// the branching-entropy signal inside tokens.
MergeSplitProbs merge_split_probabilities(const MorphoState& state, std::size_t seq_index,
                                          const HyperParams& hp);

/// The score update rule itself: clamp(b + gamma * (delta + p - 1/2), 0, 1).
double evolve_boundary_score(double b, double delta, double p, double gamma);

/// Evolves the continuous boundary scores of one sequence: local coherence
/// difference of the boundary-on/off hypotheses blended with the boundary
/// model signal, scaled by gamma and clamped to [0,1].
std::vector<double> update_boundary_scores(const MorphoState& state, std::size_t seq_index,
                                           const HyperParams& hp);

/// Threshold at 0.5 (>= 0.5 is a boundary) plus forced cuts so no token
/// exceeds max_token_len.
Segmentation apply_threshold(const std::vector<double>& boundary_scores,
                             std::size_t max_token_len);

/// Geodesic coherence-drive update of every form in the current tokenization,
/// gate applied after the step, everything renormalized. Returns the updated
/// table plus the step diagnostics.
struct EmbeddingUpdate {
    EmbeddingTable table;
    double alignment_loss = 0.0;
    double grad_mean = 0.0;
    double grad_var = 0.0;
    double divergence = 0.0;
};
EmbeddingUpdate update_embeddings(const MorphoState& state, const HyperParams& hp,
                                  const std::vector<Segmentation>& previous_segs);

/// One full iteration over every sequence, in the fixed phase order.
StepTrace morphogenesis_step(MorphoState& state, const HyperParams& hp,
                             const AblationFlags& ablation = {});

/// Initial state: DP segmentation under the boundary model, scores from the
/// probability profile (reconciled so thresholding reproduces the DP result),
/// hash-initialized embeddings for every starting form. A warm-start table
/// (e.g. from a finished training run) seeds the embeddings instead.
MorphoState init_morpho_state(const Corpus& corpus,
                              std::shared_ptr<const BoundaryModel> model,
                              const HyperParams& hp, const SegConstraints& constraints,
                              const GateParams& gate, std::size_t dim,
                              const EmbeddingTable* warm_start = nullptr);

using StepObserver = std::function<void(const MorphoState&, const StepTrace&)>;

/// Full run: init + hp.iterations steps. The observer (if any) fires after
/// every step with the post-step state.
std::pair<MorphoState, std::vector<StepTrace>> run_morphogenesis(
    const Corpus& corpus, std::shared_ptr<const BoundaryModel> model,
    const HyperParams& hp, const SegConstraints& constraints, const GateParams& gate,
    std::size_t dim, const AblationFlags& ablation = {},
    const StepObserver& observer = nullptr);

/// Continue iterating an existing state (used for eval-time inference with a
/// trained model and embedding table).
std::vector<StepTrace> continue_morphogenesis(MorphoState& state, const HyperParams& hp,
                                              std::size_t iterations,
                                              const AblationFlags& ablation = {},
                                              const StepObserver& observer = nullptr);

} // namespace morphotok
