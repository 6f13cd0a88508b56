#pragma once

#include "morphotok/boundary.hpp"
#include "morphotok/manifold.hpp"

#include <map>
#include <string>
#include <vector>

namespace morphotok {

/// Tokens of a sequence under a segmentation, as views into the sequence.
std::vector<std::u32string_view> token_forms(std::u32string_view sequence,
                                             const Segmentation& seg);

/// Per-token coherence against the windowed context (self excluded); a token
/// with no neighbors scores 1. Shared by the metrics and the morphogenesis
/// loop so the two always agree.
std::vector<double> window_coherences(const std::vector<const double*>& token_embs,
                                      std::size_t dim, const CoherenceConfig& cfg);

// --- Table 1 metrics -----------------------------------------------------------

/// Dice divergence of the two boundary sets: 1 - 2|A n B| / (|A|+|B|);
/// 0 when both are empty.
double token_stability_score(const Segmentation& a, const Segmentation& b);

/// Mean over all token occurrences of the window coherence.
double coherence_index(const std::vector<std::u32string>& sequences,
                       const std::vector<Segmentation>& segs,
                       const EmbeddingTable& table, const CoherenceConfig& cfg);

struct PrfScore {
    double precision = 1.0;
    double recall = 1.0;
    double f1 = 1.0;
};

/// Boundary-level precision/recall/F1 against gold positions.
PrfScore semantic_integrity_score(const Segmentation& seg,
                                  const std::vector<std::size_t>& gold);

/// Micro-averaged over a corpus (intersection/predicted/gold counts pooled).
PrfScore semantic_integrity_corpus(const std::vector<Segmentation>& segs,
                                   const std::vector<std::vector<std::size_t>>& golds);

double perplexity_reduction_ratio(double ppl_dynamic, double ppl_static);
double segmentation_overhead(double t_dynamic_ms, double t_static_ms);

/// Population variance of per-iteration mean update magnitudes.
double gradient_flow_variance(const std::vector<double>& grad_means);

/// Mean normalized geodesic distance over shared forms: arccos(<a,b>)/pi.
double embedding_divergence(const EmbeddingTable& before, const EmbeddingTable& after);

struct FreqShiftRow {
    std::size_t rank;
    double rel_freq_dyn;
    double rel_freq_static;
};
struct FreqShift {
    std::vector<FreqShiftRow> rows;
    double entropy_dyn = 0.0;
    double entropy_static = 0.0;
};

/// Rank-aligned relative token frequencies of the two tokenizations of one
/// corpus, plus the Shannon entropy (nats) of each full distribution.
FreqShift token_frequency_shift(const std::vector<std::u32string>& sequences,
                                const std::vector<Segmentation>& dynamic_segs,
                                const std::vector<Segmentation>& static_segs,
                                std::size_t top_ranks = 50);

/// Fraction of final-iteration token spans present in every recorded
/// iteration. Outer index: iteration; inner: sequence.
double segmentation_consistency(const std::vector<std::vector<Segmentation>>& history);

// --- bigram language model -------------------------------------------------------

/// Add-k smoothed token bigram model with a start symbol per sequence.
/// Substitutes for a full LM in the perplexity comparison.
class BigramLm {
public:
    /// Untrained model over an explicit vocabulary (pure smoothing).
    BigramLm(std::vector<std::u32string> vocabulary, double k);

    static BigramLm train(const std::vector<std::u32string>& sequences,
                          const std::vector<Segmentation>& segs, double k);

    std::size_t vocab_size() const { return vocab_.size(); }
    double smoothing_k() const { return k_; }

    /// ln p(token | prev); prev may be the start symbol (prev_id == start_id()).
    double log_prob(std::uint32_t prev_id, std::u32string_view token) const;
    std::uint32_t start_id() const { return static_cast<std::uint32_t>(vocab_.size()); }
    std::uint32_t token_id(std::u32string_view token) const; // start_id() when unknown

private:
    double k_;
    std::map<std::u32string, std::uint32_t, std::less<>> vocab_;
    std::vector<std::uint64_t> ctx_totals_; // indexed by context id, start row last
    std::unordered_map<std::uint64_t, std::uint64_t> counts_;

    friend double char_perplexity(const BigramLm&, const std::vector<std::u32string>&,
                                  const std::vector<Segmentation>&);
};

/// Character-normalized perplexity: exp(-(1/N_units) sum ln p(t | prev)).
double char_perplexity(const BigramLm& lm, const std::vector<std::u32string>& sequences,
                       const std::vector<Segmentation>& segs);

// --- report -----------------------------------------------------------------------

struct MetricsReport {
    double token_stability = 0.0;       // [0,1]
    double coherence_index = 0.0;       // [-1,1]
    double ppl_dynamic = 1.0;           // > 0
    double ppl_static = 1.0;            // > 0
    double ppl_reduction_ratio = 0.0;
    double overhead_ratio = 0.0;        // >= 0
    double grad_flow_variance = 0.0;    // >= 0
    double semantic_integrity_f1 = 0.0; // [0,1]
    std::vector<double> embedding_divergence_by_step; // each [0,1]
    std::map<std::string, double> seg_consistency_by_domain; // each [0,1]
    std::vector<FreqShiftRow> freq_shift;
    double freq_entropy_dyn = 0.0;
    double freq_entropy_static = 0.0;

    // report provenance labels; not metrics
    std::map<std::string, std::string> meta;

    /// Throws MetricRangeError when any field leaves its declared range.
    void validate() const;
};

std::string metrics_report_to_json(const MetricsReport& report);
MetricsReport metrics_report_from_json(std::string_view json_text);

} // namespace morphotok
