#pragma once

#include "morphotok/corpus.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace morphotok {

/// Sorted interior boundary positions over a sequence of `length` units.
/// Tokens are the spans between consecutive cuts; token count = |boundaries|+1.
struct Segmentation {
    std::size_t length = 0;
    std::vector<std::size_t> boundaries; // strictly increasing, 0 < p < length

    bool has(std::size_t p) const;
    std::size_t token_count() const { return boundaries.size() + 1; }
    std::vector<std::pair<std::size_t, std::size_t>> token_spans() const;
    void validate() const;

    bool operator==(const Segmentation&) const = default;
};

struct SegConstraints {
    std::size_t max_token_len = 8;
    std::size_t min_token_len = 1;
};

// Transparent hashing so count tables can be probed with substring views.
struct U32Hash {
    using is_transparent = void;
    std::size_t operator()(std::u32string_view s) const {
        std::size_t h = 0xcbf29ce484222325ULL;
        for (char32_t u : s) {
            h ^= static_cast<std::size_t>(u);
            h *= 0x100000001b3ULL;
        }
        return h;
    }
};
struct U32Eq {
    using is_transparent = void;
    bool operator()(std::u32string_view a, std::u32string_view b) const { return a == b; }
};

/// Exact n-gram successor counts in both directions. Backward counts are
/// forward counts fitted on the reversed text, so context keys on that side
/// are reversed right contexts.
struct BranchingStats {
    using CountTable =
        std::unordered_map<std::u32string, std::unordered_map<char32_t, std::uint64_t>,
                           U32Hash, U32Eq>;
    int order = 2;
    CountTable forward;
    CountTable backward;
    std::uint64_t total_units = 0;
};

BranchingStats fit_branching_stats(const Corpus& corpus, int order);

std::string branching_stats_to_json(const BranchingStats& stats);
BranchingStats branching_stats_from_json(std::string_view json_text);

/// Branching-entropy boundary model: P(boundary at i) is a logistic link on
/// the centered average of forward/backward successor entropies (nats).
class BoundaryModel {
public:
    /// Fits stats on `corpus`, precomputes per-context entropies and the
    /// corpus mean entropy h_bar.
    static BoundaryModel fit(const Corpus& corpus, int order, double kappa_b);

    /// Entropy of the successor distribution of the longest seen left context
    /// ending at i, averaged with the mirrored backward value; unseen contexts
    /// back off to shorter ones and finally to h_bar.
    double entropy_average(std::u32string_view sequence, std::size_t i) const;

    /// logistic(kappa_b * (entropy_average - h_bar)), always in (0,1).
    double boundary_probability(std::u32string_view sequence, std::size_t i) const;

    /// All interior positions at once (positions 1..len-1).
    std::vector<double> probability_profile(std::u32string_view sequence) const;

    const BranchingStats& stats() const { return stats_; }
    double kappa_b() const { return kappa_b_; }
    double h_bar() const { return h_bar_; }

    /// Swaps the direction tables; used by the reversal-symmetry property.
    BoundaryModel mirrored() const;

private:
    BranchingStats stats_;
    std::unordered_map<std::u32string, double, U32Hash, U32Eq> fwd_entropy_;
    std::unordered_map<std::u32string, double, U32Hash, U32Eq> bwd_entropy_;
    double kappa_b_ = 2.0;
    double h_bar_ = 0.0;

    double directional_entropy(std::u32string_view sequence, std::size_t i,
                               bool forward) const;
};

/// Bernoulli configuration log-likelihood of a boundary set under the
/// per-position probabilities: sum of ln P at cuts and ln(1-P) elsewhere.
double config_log_likelihood(const std::vector<double>& probs, const Segmentation& seg);
double config_log_likelihood(const BoundaryModel& model, std::u32string_view sequence,
                             const Segmentation& seg);

/// Likelihood-maximizing segmentation under token-length constraints, by
/// dynamic programming over cut positions. Ties break toward fewer
/// boundaries, then the lexicographically smallest boundary set.
Segmentation optimal_segmentation_probs(const std::vector<double>& probs,
                                        const SegConstraints& constraints);
Segmentation optimal_segmentation(const BoundaryModel& model,
                                  std::u32string_view sequence,
                                  const SegConstraints& constraints);

/// Exhaustive oracle with the identical objective and tie-break; sequences
/// of at most 20 units.
Segmentation brute_force_segmentation_probs(const std::vector<double>& probs,
                                            const SegConstraints& constraints);
Segmentation brute_force_segmentation(const BoundaryModel& model,
                                      std::u32string_view sequence,
                                      const SegConstraints& constraints);

} // namespace morphotok
