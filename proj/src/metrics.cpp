#include "morphotok/metrics.hpp"

#include "morphotok/corpus.hpp"
#include "morphotok/errors.hpp"
#include "morphotok/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <set>

#include "json.hpp"

namespace morphotok {

std::vector<std::u32string_view> token_forms(std::u32string_view sequence,
                                             const Segmentation& seg) {
    if (sequence.size() != seg.length)
        throw LengthMismatch("segmentation length does not match sequence");
    std::vector<std::u32string_view> forms;
    forms.reserve(seg.token_count());
    std::size_t start = 0;
    for (std::size_t b : seg.boundaries) {
        forms.push_back(sequence.substr(start, b - start));
        start = b;
    }
    if (seg.length > 0) forms.push_back(sequence.substr(start));
    return forms;
}

std::vector<double> window_coherences(const std::vector<const double*>& token_embs,
                                      std::size_t dim, const CoherenceConfig& cfg) {
    const std::size_t m = token_embs.size();
    std::vector<double> out(m, 1.0);
    std::vector<const double*> ctx;
    ctx.reserve(2 * cfg.window);
    for (std::size_t i = 0; i < m; ++i) {
        ctx.clear();
        const std::size_t lo = i >= cfg.window ? i - cfg.window : 0;
        const std::size_t hi = std::min(m, i + cfg.window + 1);
        for (std::size_t j = lo; j < hi; ++j)
            if (j != i) ctx.push_back(token_embs[j]);
        if (ctx.empty()) continue; // lone token: self-coherent by convention
        out[i] = coherence(std::span<const double>(token_embs[i], dim),
                           std::span<const double* const>(ctx), cfg);
    }
    return out;
}

// --- structural metrics ---------------------------------------------------------

double token_stability_score(const Segmentation& a, const Segmentation& b) {
    if (a.length != b.length)
        throw LengthMismatch("stability compares segmentations of one sequence");
    const std::size_t na = a.boundaries.size();
    const std::size_t nb = b.boundaries.size();
    if (na + nb == 0) return 0.0;
    std::size_t inter = 0;
    std::size_t i = 0, j = 0;
    while (i < na && j < nb) {
        if (a.boundaries[i] == b.boundaries[j]) {
            ++inter;
            ++i;
            ++j;
        } else if (a.boundaries[i] < b.boundaries[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    return 1.0 - 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double coherence_index(const std::vector<std::u32string>& sequences,
                       const std::vector<Segmentation>& segs,
                       const EmbeddingTable& table, const CoherenceConfig& cfg) {
    if (sequences.size() != segs.size())
        throw LengthMismatch("sequence/segmentation lists differ");
    double sum = 0.0;
    std::size_t count = 0;
    std::vector<const double*> embs;
    for (std::size_t s = 0; s < sequences.size(); ++s) {
        const auto forms = token_forms(sequences[s], segs[s]);
        embs.clear();
        for (const auto f : forms) {
            const Vec* e = table.find(f);
            if (e == nullptr)
                throw EmptyState("missing embedding for token form '" + encode_utf8(f) + "'");
            embs.push_back(e->data());
        }
        for (double c : window_coherences(embs, table.dim, cfg)) {
            sum += c;
            ++count;
        }
    }
    if (count == 0) throw EmptyState("no token occurrences");
    return sum / static_cast<double>(count);
}

PrfScore semantic_integrity_score(const Segmentation& seg,
                                  const std::vector<std::size_t>& gold) {
    for (std::size_t p : gold)
        if (p == 0 || p >= seg.length) throw LengthMismatch("gold boundary out of range");

    const std::size_t npred = seg.boundaries.size();
    const std::size_t ngold = gold.size();
    std::size_t inter = 0;
    for (std::size_t p : gold)
        if (seg.has(p)) ++inter;

    PrfScore s;
    s.precision = npred == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(npred);
    s.recall = ngold == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(ngold);
    s.f1 = (s.precision + s.recall) > 0.0
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
    return s;
}

PrfScore semantic_integrity_corpus(const std::vector<Segmentation>& segs,
                                   const std::vector<std::vector<std::size_t>>& golds) {
    if (segs.size() != golds.size())
        throw LengthMismatch("segmentation/gold lists differ");
    std::size_t inter = 0, npred = 0, ngold = 0;
    for (std::size_t s = 0; s < segs.size(); ++s) {
        npred += segs[s].boundaries.size();
        ngold += golds[s].size();
        for (std::size_t p : golds[s])
            if (segs[s].has(p)) ++inter;
    }
    PrfScore out;
    out.precision = npred == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(npred);
    out.recall = ngold == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(ngold);
    out.f1 = (out.precision + out.recall) > 0.0
                 ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                 : 0.0;
    return out;
}

double perplexity_reduction_ratio(double ppl_dynamic, double ppl_static) {
    if (ppl_dynamic <= 0.0 || ppl_static <= 0.0)
        throw NonpositiveInput("perplexities must be positive");
    return (ppl_static - ppl_dynamic) / ppl_static;
}

double segmentation_overhead(double t_dynamic_ms, double t_static_ms) {
    if (t_dynamic_ms <= 0.0 || t_static_ms <= 0.0)
        throw NonpositiveInput("timings must be positive");
    return (t_dynamic_ms - t_static_ms) / t_static_ms;
}

double gradient_flow_variance(const std::vector<double>& grad_means) {
    if (grad_means.size() < 2)
        throw TooFewTraces("variance needs at least two iterations");
    double mean = 0.0;
    for (double g : grad_means) mean += g;
    mean /= static_cast<double>(grad_means.size());
    double var = 0.0;
    for (double g : grad_means) var += (g - mean) * (g - mean);
    return var / static_cast<double>(grad_means.size());
}

double embedding_divergence(const EmbeddingTable& before, const EmbeddingTable& after) {
    if (before.dim != after.dim) throw DimensionMismatch("tables differ in dim");
    double sum = 0.0;
    std::size_t shared = 0;
    for (const auto& [form, ea] : before.entries) {
        const Vec* eb = after.find(form);
        if (eb == nullptr) continue;
        const double c = std::clamp(kernels::dot(ea.data(), eb->data(), before.dim), -1.0, 1.0);
        sum += std::acos(c) / std::numbers::pi;
        ++shared;
    }
    if (shared == 0) throw NoSharedForms("tables share no token forms");
    return sum / static_cast<double>(shared);
}

namespace {

struct FreqTable {
    std::vector<double> rel_by_rank; // descending
    double entropy = 0.0;
};

FreqTable frequency_table(const std::vector<std::u32string>& sequences,
                          const std::vector<Segmentation>& segs) {
    std::map<std::u32string, std::uint64_t, std::less<>> counts;
    std::uint64_t total = 0;
    for (std::size_t s = 0; s < sequences.size(); ++s) {
        for (const auto f : token_forms(sequences[s], segs[s])) {
            const auto it = counts.find(f);
            if (it == counts.end())
                counts.emplace(std::u32string(f), 1);
            else
                ++it->second;
            ++total;
        }
    }
    FreqTable out;
    if (total == 0) return out;
    out.rel_by_rank.reserve(counts.size());
    for (const auto& [form, c] : counts)
        out.rel_by_rank.push_back(static_cast<double>(c) / static_cast<double>(total));
    std::sort(out.rel_by_rank.begin(), out.rel_by_rank.end(), std::greater<>());
    for (double p : out.rel_by_rank) out.entropy -= p * std::log(p);
    return out;
}

} // namespace

FreqShift token_frequency_shift(const std::vector<std::u32string>& sequences,
                                const std::vector<Segmentation>& dynamic_segs,
                                const std::vector<Segmentation>& static_segs,
                                std::size_t top_ranks) {
    if (sequences.empty()) throw EmptyCorpusError("frequency shift over empty corpus");
    if (sequences.size() != dynamic_segs.size() || sequences.size() != static_segs.size())
        throw LengthMismatch("segmentation lists must cover the corpus");
    const FreqTable dyn = frequency_table(sequences, dynamic_segs);
    const FreqTable sta = frequency_table(sequences, static_segs);
    FreqShift shift;
    shift.entropy_dyn = dyn.entropy;
    shift.entropy_static = sta.entropy;
    const std::size_t n =
        std::min(top_ranks, std::max(dyn.rel_by_rank.size(), sta.rel_by_rank.size()));
    for (std::size_t r = 0; r < n; ++r) {
        shift.rows.push_back({r + 1,
                              r < dyn.rel_by_rank.size() ? dyn.rel_by_rank[r] : 0.0,
                              r < sta.rel_by_rank.size() ? sta.rel_by_rank[r] : 0.0});
    }
    return shift;
}

namespace {

bool span_is_token(const Segmentation& seg, std::size_t start, std::size_t end) {
    if (!(start == 0 || seg.has(start))) return false;
    if (!(end == seg.length || seg.has(end))) return false;
    const auto lo = std::upper_bound(seg.boundaries.begin(), seg.boundaries.end(), start);
    return lo == seg.boundaries.end() || *lo >= end;
}

} // namespace

double segmentation_consistency(const std::vector<std::vector<Segmentation>>& history) {
    if (history.size() < 2)
        throw TooFewIterations("consistency needs at least two iterations");
    const auto& final_segs = history.back();
    std::size_t total = 0, persistent = 0;
    for (std::size_t s = 0; s < final_segs.size(); ++s) {
        for (const auto& [start, end] : final_segs[s].token_spans()) {
            ++total;
            bool everywhere = true;
            for (std::size_t t = 0; t + 1 < history.size() && everywhere; ++t) {
                if (s >= history[t].size() || !span_is_token(history[t][s], start, end))
                    everywhere = false;
            }
            if (everywhere) ++persistent;
        }
    }
    return total == 0 ? 1.0 : static_cast<double>(persistent) / static_cast<double>(total);
}

// --- bigram LM -------------------------------------------------------------------

BigramLm::BigramLm(std::vector<std::u32string> vocabulary, double k) : k_(k) {
    if (k <= 0.0) throw ConfigError("smoothing k must be positive");
    for (auto& f : vocabulary)
        vocab_.emplace(std::move(f), static_cast<std::uint32_t>(vocab_.size()));
    // map was sorted on insert; ids must follow sorted order for determinism
    std::uint32_t id = 0;
    for (auto& [form, v] : vocab_) v = id++;
    ctx_totals_.assign(vocab_.size() + 1, 0);
}

std::uint32_t BigramLm::token_id(std::u32string_view token) const {
    const auto it = vocab_.find(token);
    return it == vocab_.end() ? start_id() : it->second;
}

BigramLm BigramLm::train(const std::vector<std::u32string>& sequences,
                         const std::vector<Segmentation>& segs, double k) {
    if (sequences.size() != segs.size())
        throw LengthMismatch("sequence/segmentation lists differ");
    std::vector<std::u32string> vocab_forms;
    {
        std::set<std::u32string> forms;
        for (std::size_t s = 0; s < sequences.size(); ++s)
            for (const auto f : token_forms(sequences[s], segs[s]))
                forms.insert(std::u32string(f));
        vocab_forms.assign(forms.begin(), forms.end());
    }
    BigramLm lm(std::move(vocab_forms), k);
    for (std::size_t s = 0; s < sequences.size(); ++s) {
        std::uint32_t prev = lm.start_id();
        for (const auto f : token_forms(sequences[s], segs[s])) {
            const std::uint32_t cur = lm.token_id(f);
            ++lm.ctx_totals_[prev];
            ++lm.counts_[(static_cast<std::uint64_t>(prev) << 32) | cur];
            prev = cur;
        }
    }
    return lm;
}

double BigramLm::log_prob(std::uint32_t prev_id, std::u32string_view token) const {
    const std::size_t v = vocab_.size();
    std::uint64_t pair_count = 0;
    const auto it = vocab_.find(token);
    if (it != vocab_.end()) {
        const auto key = (static_cast<std::uint64_t>(prev_id) << 32) | it->second;
        const auto cit = counts_.find(key);
        if (cit != counts_.end()) pair_count = cit->second;
    }
    const double num = static_cast<double>(pair_count) + k_;
    const double den =
        static_cast<double>(ctx_totals_[prev_id]) + k_ * static_cast<double>(v);
    return std::log(num) - std::log(den);
}

double char_perplexity(const BigramLm& lm, const std::vector<std::u32string>& sequences,
                       const std::vector<Segmentation>& segs) {
    if (sequences.size() != segs.size())
        throw LengthMismatch("sequence/segmentation lists differ");
    double ll = 0.0;
    std::size_t units = 0;
    for (std::size_t s = 0; s < sequences.size(); ++s) {
        units += sequences[s].size();
        std::uint32_t prev = lm.start_id();
        for (const auto f : token_forms(sequences[s], segs[s])) {
            ll += lm.log_prob(prev, f);
            prev = lm.token_id(f);
        }
    }
    if (units == 0) throw EmptyEval("evaluation corpus has no units");
    return std::exp(-ll / static_cast<double>(units));
}

// --- report ------------------------------------------------------------------------

void MetricsReport::validate() const {
    const auto in01 = [](double x) { return x >= 0.0 && x <= 1.0; };
    const auto fail = [](const std::string& what) { throw MetricRangeError(what); };
    if (!in01(token_stability)) fail("token_stability outside [0,1]");
    if (!(coherence_index >= -1.0 && coherence_index <= 1.0))
        fail("coherence_index outside [-1,1]");
    if (!(ppl_dynamic > 0.0) || !(ppl_static > 0.0)) fail("perplexities must be positive");
    if (!std::isfinite(ppl_reduction_ratio)) fail("ppl_reduction_ratio not finite");
    if (!(overhead_ratio >= 0.0)) fail("overhead_ratio negative");
    if (!(grad_flow_variance >= 0.0)) fail("grad_flow_variance negative");
    if (!in01(semantic_integrity_f1)) fail("semantic_integrity_f1 outside [0,1]");
    for (double d : embedding_divergence_by_step)
        if (!in01(d)) fail("embedding divergence step outside [0,1]");
    for (const auto& [domain, c] : seg_consistency_by_domain)
        if (!in01(c)) fail("segmentation consistency outside [0,1] for " + domain);
    for (const auto& row : freq_shift)
        if (!in01(row.rel_freq_dyn) || !in01(row.rel_freq_static))
            fail("relative frequency outside [0,1]");
    if (!(freq_entropy_dyn >= 0.0) || !(freq_entropy_static >= 0.0))
        fail("frequency entropy negative");
}

std::string metrics_report_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["token_stability"] = report.token_stability;
    j["coherence_index"] = report.coherence_index;
    j["ppl_dynamic"] = report.ppl_dynamic;
    j["ppl_static"] = report.ppl_static;
    j["ppl_reduction_ratio"] = report.ppl_reduction_ratio;
    j["overhead_ratio"] = report.overhead_ratio;
    j["grad_flow_variance"] = report.grad_flow_variance;
    j["semantic_integrity_f1"] = report.semantic_integrity_f1;
    j["embedding_divergence_by_step"] = report.embedding_divergence_by_step;
    j["seg_consistency_by_domain"] = report.seg_consistency_by_domain;
    auto& rows = j["freq_shift"] = nlohmann::json::array();
    for (const auto& row : report.freq_shift) {
        rows.push_back({{"rank", row.rank},
                        {"rel_freq_dyn", row.rel_freq_dyn},
                        {"rel_freq_static", row.rel_freq_static}});
    }
    j["freq_entropy_dyn"] = report.freq_entropy_dyn;
    j["freq_entropy_static"] = report.freq_entropy_static;
    j["meta"] = report.meta;
    return j.dump(2) + "\n";
}

MetricsReport metrics_report_from_json(std::string_view json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw MalformedReport(std::string("report is not valid JSON: ") + e.what());
    }
    MetricsReport r;
    try {
        r.token_stability = j.at("token_stability").get<double>();
        r.coherence_index = j.at("coherence_index").get<double>();
        r.ppl_dynamic = j.at("ppl_dynamic").get<double>();
        r.ppl_static = j.at("ppl_static").get<double>();
        r.ppl_reduction_ratio = j.at("ppl_reduction_ratio").get<double>();
        r.overhead_ratio = j.at("overhead_ratio").get<double>();
        r.grad_flow_variance = j.at("grad_flow_variance").get<double>();
        r.semantic_integrity_f1 = j.at("semantic_integrity_f1").get<double>();
        r.embedding_divergence_by_step =
            j.at("embedding_divergence_by_step").get<std::vector<double>>();
        r.seg_consistency_by_domain =
            j.at("seg_consistency_by_domain").get<std::map<std::string, double>>();
        for (const auto& row : j.at("freq_shift")) {
            r.freq_shift.push_back({row.at("rank").get<std::size_t>(),
                                    row.at("rel_freq_dyn").get<double>(),
                                    row.at("rel_freq_static").get<double>()});
        }
        r.freq_entropy_dyn = j.at("freq_entropy_dyn").get<double>();
        r.freq_entropy_static = j.at("freq_entropy_static").get<double>();
        if (j.contains("meta"))
            r.meta = j["meta"].get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw MalformedReport(std::string("report schema mismatch: ") + e.what());
    }
    try {
        r.validate();
    } catch (const MetricRangeError& e) {
        throw MalformedReport(std::string("report out of range: ") + e.what());
    }
    return r;
}

} // namespace morphotok
