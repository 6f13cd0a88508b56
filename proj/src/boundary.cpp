#include "morphotok/boundary.hpp"

#include "morphotok/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

namespace morphotok {

// --- Segmentation ------------------------------------------------------------

bool Segmentation::has(std::size_t p) const {
    return std::binary_search(boundaries.begin(), boundaries.end(), p);
}

std::vector<std::pair<std::size_t, std::size_t>> Segmentation::token_spans() const {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    if (length == 0) return spans;
    spans.reserve(boundaries.size() + 1);
    std::size_t start = 0;
    for (std::size_t b : boundaries) {
        spans.emplace_back(start, b);
        start = b;
    }
    spans.emplace_back(start, length);
    return spans;
}

void Segmentation::validate() const {
    std::size_t prev = 0;
    for (std::size_t p : boundaries) {
        if (p <= prev || p >= length)
            throw Error("segmentation boundary out of range or unordered");
        prev = p;
    }
}

// --- branching statistics ------------------------------------------------------

namespace {

void count_sequence(BranchingStats::CountTable& table, std::u32string_view seq, int order) {
    for (std::size_t i = 1; i < seq.size(); ++i) {
        const std::size_t kmax = std::min<std::size_t>(static_cast<std::size_t>(order), i);
        for (std::size_t k = 1; k <= kmax; ++k) {
            const std::u32string_view ctx = seq.substr(i - k, k);
            auto it = table.find(ctx);
            if (it == table.end())
                it = table.emplace(std::u32string(ctx),
                                   std::unordered_map<char32_t, std::uint64_t>{}).first;
            ++it->second[seq[i]];
        }
    }
}

double successor_entropy(const std::unordered_map<char32_t, std::uint64_t>& counts) {
    std::uint64_t total = 0;
    for (const auto& [unit, c] : counts) total += c;
    if (total == 0) return 0.0;
    double h = 0.0;
    for (const auto& [unit, c] : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

BranchingStats fit_branching_stats(const Corpus& corpus, int order) {
    if (corpus.sequences.empty()) throw EmptyCorpusError("cannot fit on empty corpus");
    if (order < 1) throw ConfigError("branching order must be >= 1");
    BranchingStats stats;
    stats.order = order;
    for (const auto& seq : corpus.sequences) {
        stats.total_units += seq.size();
        count_sequence(stats.forward, seq, order);
        std::u32string rev(seq.rbegin(), seq.rend());
        count_sequence(stats.backward, rev, order);
    }
    return stats;
}

std::string branching_stats_to_json(const BranchingStats& stats) {
    nlohmann::json j;
    j["order"] = stats.order;
    j["total_units"] = stats.total_units;
    const auto dump_table = [](const BranchingStats::CountTable& table) {
        nlohmann::json out = nlohmann::json::object();
        for (const auto& [ctx, succ] : table) {
            nlohmann::json row = nlohmann::json::object();
            for (const auto& [unit, count] : succ)
                row[encode_utf8(std::u32string(1, unit))] = count;
            out[encode_utf8(ctx)] = std::move(row);
        }
        return out;
    };
    j["forward"] = dump_table(stats.forward);
    j["backward"] = dump_table(stats.backward);
    return j.dump(2) + "\n";
}

BranchingStats branching_stats_from_json(std::string_view json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw DecodeError(std::string("stats are not valid JSON: ") + e.what());
    }
    BranchingStats stats;
    try {
        stats.order = j.at("order").get<int>();
        stats.total_units = j.at("total_units").get<std::uint64_t>();
        const auto load_table = [](const nlohmann::json& src) {
            BranchingStats::CountTable table;
            for (const auto& [ctx, row] : src.items()) {
                auto& succ = table[decode_utf8(ctx)];
                for (const auto& [unit, count] : row.items()) {
                    const std::u32string u = decode_utf8(unit);
                    if (u.size() != 1) throw DecodeError("successor key is not one unit");
                    succ[u[0]] = count.get<std::uint64_t>();
                }
            }
            return table;
        };
        stats.forward = load_table(j.at("forward"));
        stats.backward = load_table(j.at("backward"));
    } catch (const nlohmann::json::exception& e) {
        throw DecodeError(std::string("stats schema mismatch: ") + e.what());
    }
    return stats;
}

// --- boundary model ------------------------------------------------------------

BoundaryModel BoundaryModel::fit(const Corpus& corpus, int order, double kappa_b) {
    if (kappa_b <= 0.0) throw ConfigError("kappa_b must be positive");
    BoundaryModel model;
    model.stats_ = fit_branching_stats(corpus, order);
    model.kappa_b_ = kappa_b;
    for (const auto& [ctx, succ] : model.stats_.forward)
        model.fwd_entropy_[ctx] = successor_entropy(succ);
    for (const auto& [ctx, succ] : model.stats_.backward)
        model.bwd_entropy_[ctx] = successor_entropy(succ);

    // Corpus mean entropy. Every interior position has its length-1 context in
    // the tables, so the h_bar fallback cannot fire while computing h_bar.
    model.h_bar_ = 0.0;
    double sum = 0.0;
    std::uint64_t positions = 0;
    for (const auto& seq : corpus.sequences) {
        for (std::size_t i = 1; i < seq.size(); ++i) {
            sum += model.entropy_average(seq, i);
            ++positions;
        }
    }
    model.h_bar_ = positions > 0 ? sum / static_cast<double>(positions) : 0.0;
    return model;
}

double BoundaryModel::directional_entropy(std::u32string_view seq, std::size_t i,
                                          bool forward) const {
    const auto& table = forward ? fwd_entropy_ : bwd_entropy_;
    if (forward) {
        const std::size_t kmax =
            std::min<std::size_t>(static_cast<std::size_t>(stats_.order), i);
        for (std::size_t k = kmax; k >= 1; --k) {
            const auto it = table.find(seq.substr(i - k, k));
            if (it != table.end()) return it->second;
        }
    } else {
        // Right context, reversed to match how backward stats were fitted.
        const std::size_t kmax = std::min<std::size_t>(
            static_cast<std::size_t>(stats_.order), seq.size() - i);
        char32_t buf[64];
        for (std::size_t k = kmax; k >= 1; --k) {
            for (std::size_t t = 0; t < k; ++t) buf[t] = seq[i + k - 1 - t];
            const auto it = table.find(std::u32string_view(buf, k));
            if (it != table.end()) return it->second;
        }
    }
    return h_bar_;
}

double BoundaryModel::entropy_average(std::u32string_view seq, std::size_t i) const {
    if (i == 0 || i >= seq.size())
        throw PositionOutOfRange("interior position required, got " + std::to_string(i));
    return 0.5 * (directional_entropy(seq, i, true) + directional_entropy(seq, i, false));
}

double BoundaryModel::boundary_probability(std::u32string_view seq, std::size_t i) const {
    return logistic(kappa_b_ * (entropy_average(seq, i) - h_bar_));
}

std::vector<double> BoundaryModel::probability_profile(std::u32string_view seq) const {
    std::vector<double> probs;
    if (seq.size() <= 1) return probs;
    probs.reserve(seq.size() - 1);
    for (std::size_t i = 1; i < seq.size(); ++i)
        probs.push_back(boundary_probability(seq, i));
    return probs;
}

BoundaryModel BoundaryModel::mirrored() const {
    BoundaryModel m = *this;
    std::swap(m.stats_.forward, m.stats_.backward);
    std::swap(m.fwd_entropy_, m.bwd_entropy_);
    return m;
}

// --- configuration likelihood ----------------------------------------------------

namespace {

constexpr double kProbFloor = 1e-15;

double clamped(double p) {
    return std::min(std::max(p, kProbFloor), 1.0 - kProbFloor);
}

} // namespace

double config_log_likelihood(const std::vector<double>& probs, const Segmentation& seg) {
    if (probs.size() + 1 != seg.length && !(seg.length == 0 && probs.empty()))
        throw LengthMismatch("probability vector does not match sequence length");
    double ll = 0.0;
    for (std::size_t i = 1; i < seg.length; ++i) {
        const double p = clamped(probs[i - 1]);
        ll += seg.has(i) ? std::log(p) : std::log(1.0 - p);
    }
    return ll;
}

double config_log_likelihood(const BoundaryModel& model, std::u32string_view sequence,
                             const Segmentation& seg) {
    return config_log_likelihood(model.probability_profile(sequence), seg);
}

// --- optimal segmentation ---------------------------------------------------------

namespace {

struct DpCell {
    double score = -std::numeric_limits<double>::infinity();
    std::size_t count = 0;
    bool feasible = false;
};

std::vector<double> boundary_gains(const std::vector<double>& probs) {
    std::vector<double> delta(probs.size() + 1, 0.0); // indexed by position, delta[0] unused
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = clamped(probs[i]);
        delta[i + 1] = std::log(p) - std::log(1.0 - p);
    }
    return delta;
}

} // namespace

Segmentation optimal_segmentation_probs(const std::vector<double>& probs,
                                        const SegConstraints& constraints) {
    const std::size_t len = probs.size() + 1;
    const std::size_t lmin = constraints.min_token_len;
    const std::size_t lmax = constraints.max_token_len;
    if (lmin == 0 || lmin > lmax) throw ConfigError("invalid token length constraints");

    const std::vector<double> delta = boundary_gains(probs);

    // dp[j]: best score over segmentations of the suffix [j, len) given a cut
    // at j; score counts only the chosen boundary gains.
    std::vector<DpCell> dp(len + 1);
    dp[len] = {0.0, 0, true};
    for (std::size_t j = len; j-- > 0;) {
        DpCell best;
        for (std::size_t L = lmin; L <= lmax && j + L <= len; ++L) {
            const std::size_t p = j + L;
            if (!dp[p].feasible) continue;
            const double score = p < len ? delta[p] + dp[p].score : dp[p].score;
            const std::size_t count = dp[p].count + (p < len ? 1 : 0);
            if (!best.feasible || score > best.score ||
                (score == best.score && count < best.count)) {
                best = {score, count, true};
            }
        }
        dp[j] = best;
    }
    if (!dp[0].feasible)
        throw InfeasibleConstraints("no token tiling satisfies the length bounds");

    // Greedy reconstruction; taking the smallest admissible next cut at every
    // step realizes the lexicographic tie-break over whole boundary sets.
    Segmentation seg;
    seg.length = len;
    std::size_t k = 0;
    while (k < len) {
        bool advanced = false;
        for (std::size_t L = lmin; L <= lmax && k + L <= len; ++L) {
            const std::size_t p = k + L;
            if (!dp[p].feasible) continue;
            const double score = p < len ? delta[p] + dp[p].score : dp[p].score;
            const std::size_t count = dp[p].count + (p < len ? 1 : 0);
            if (score == dp[k].score && count == dp[k].count) {
                if (p < len) seg.boundaries.push_back(p);
                k = p;
                advanced = true;
                break;
            }
        }
        if (!advanced) throw Error("segmentation DP reconstruction failed");
    }
    return seg;
}

Segmentation optimal_segmentation(const BoundaryModel& model,
                                  std::u32string_view sequence,
                                  const SegConstraints& constraints) {
    if (sequence.empty()) throw Error("sequence must have length >= 1");
    return optimal_segmentation_probs(model.probability_profile(sequence), constraints);
}

Segmentation brute_force_segmentation_probs(const std::vector<double>& probs,
                                            const SegConstraints& constraints) {
    const std::size_t len = probs.size() + 1;
    if (len > 20) throw SequenceTooLong("brute force limited to 20 units");
    const std::size_t lmin = constraints.min_token_len;
    const std::size_t lmax = constraints.max_token_len;
    if (lmin == 0 || lmin > lmax) throw ConfigError("invalid token length constraints");

    const std::vector<double> delta = boundary_gains(probs);
    const std::size_t interior = len - 1;

    bool found = false;
    double best_score = -std::numeric_limits<double>::infinity();
    std::vector<std::size_t> best_bounds;

    std::vector<std::size_t> bounds;
    for (std::uint32_t mask = 0; mask < (1u << interior); ++mask) {
        bounds.clear();
        for (std::size_t b = 0; b < interior; ++b)
            if (mask & (1u << b)) bounds.push_back(b + 1);

        bool ok = true;
        std::size_t prev = 0;
        for (std::size_t p : bounds) {
            const std::size_t tok = p - prev;
            if (tok < lmin || tok > lmax) { ok = false; break; }
            prev = p;
        }
        if (ok) {
            const std::size_t tok = len - prev;
            if (tok < lmin || tok > lmax) ok = false;
        }
        if (!ok) continue;

        // Accumulate right-to-left so the float sum associates exactly like
        // the DP recursion; tie handling then sees bitwise-equal scores.
        double score = 0.0;
        for (std::size_t r = bounds.size(); r-- > 0;) score = delta[bounds[r]] + score;

        if (!found || score > best_score ||
            (score == best_score &&
             (bounds.size() < best_bounds.size() ||
              (bounds.size() == best_bounds.size() &&
               std::lexicographical_compare(bounds.begin(), bounds.end(),
                                            best_bounds.begin(), best_bounds.end()))))) {
            found = true;
            best_score = score;
            best_bounds = bounds;
        }
    }
    if (!found) throw InfeasibleConstraints("no token tiling satisfies the length bounds");

    Segmentation seg;
    seg.length = len;
    seg.boundaries = std::move(best_bounds);
    return seg;
}

Segmentation brute_force_segmentation(const BoundaryModel& model,
                                      std::u32string_view sequence,
                                      const SegConstraints& constraints) {
    if (sequence.size() > 20) throw SequenceTooLong("brute force limited to 20 units");
    return brute_force_segmentation_probs(model.probability_profile(sequence), constraints);
}

} // namespace morphotok
