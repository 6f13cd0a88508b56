#include "morphotok/pipeline.hpp"

#include "morphotok/errors.hpp"
#include "morphotok/kernels.hpp"
#include "morphotok/rng.hpp"

#include "parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace morphotok {

// --- small helpers -----------------------------------------------------------------

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content,
                std::vector<std::string>* created) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path);
    out << content;
    if (created != nullptr) created->push_back(path);
}

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace

// --- config ------------------------------------------------------------------------

void BenchSpec::validate() const {
    if (repetitions < 3) throw ConfigError("bench repetitions must be >= 3");
    if (buckets.empty()) throw ConfigError("bench needs at least one bucket");
    for (std::size_t a = 0; a < buckets.size(); ++a) {
        const auto [lo_a, hi_a] = buckets[a];
        if (hi_a != 0 && hi_a < lo_a) throw ConfigError("bucket bounds inverted");
        for (std::size_t b = a + 1; b < buckets.size(); ++b) {
            const auto [lo_b, hi_b] = buckets[b];
            const std::size_t amax = hi_a == 0 ? SIZE_MAX : hi_a;
            const std::size_t bmax = hi_b == 0 ? SIZE_MAX : hi_b;
            if (lo_a <= bmax && lo_b <= amax)
                throw ConfigError("bench buckets overlap");
        }
    }
}

void RunConfig::validate() const {
    if (corpora.empty()) throw ConfigError("config lists no corpora");
    std::set<std::string> labels;
    for (const auto& src : corpora) {
        if (src.label.empty()) throw ConfigError("corpus label must be nonempty");
        if (!labels.insert(src.label).second)
            throw ConfigError("duplicate corpus label: " + src.label);
        const int kinds = static_cast<int>(!src.paths.empty()) +
                          static_cast<int>(src.cache.has_value()) +
                          static_cast<int>(src.synthetic.has_value());
        if (kinds != 1)
            throw ConfigError("corpus '" + src.label +
                              "' must give exactly one of paths/cache/synthetic");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("train_fraction must be in (0,1)");
    hp.validate();
    if (constraints.min_token_len == 0 ||
        constraints.min_token_len > constraints.max_token_len)
        throw ConfigError("token length constraints invalid");
    if (boundary_order < 1) throw ConfigError("boundary order must be >= 1");
    if (kappa_b <= 0.0) throw ConfigError("kappa_b must be > 0");
    if (dim < 2) throw ConfigError("embedding dim must be >= 2");
    if (gate_mode != "identity" && gate_mode != "random")
        throw ConfigError("gate mode must be identity or random");
    if (lm_k <= 0.0) throw ConfigError("lm smoothing k must be > 0");
    bench.validate();
}

namespace {

void expect_keys(const json& obj, const char* where,
                 std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : obj.items()) {
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) {
                return key == a;
            }) == allowed.end()) {
            throw ConfigError(std::string("unknown key '") + key + "' in " + where);
        }
    }
}

template <typename T>
void maybe(const json& obj, const char* key, T& out) {
    if (obj.contains(key) && !obj[key].is_null()) out = obj[key].get<T>();
}

} // namespace

RunConfig run_config_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config root must be an object");
    expect_keys(j, "config",
                {"seed", "out", "lowercase", "whitespace_gold", "corpora", "split",
                 "hyperparams", "constraints", "boundary", "embedding", "gate", "bpe",
                 "lm", "eval", "ablation", "formats", "measure_overhead", "bench",
                 "sweep"});

    RunConfig cfg;
    maybe(j, "seed", cfg.seed);
    maybe(j, "out", cfg.out);
    maybe(j, "lowercase", cfg.lowercase);
    maybe(j, "whitespace_gold", cfg.whitespace_gold);

    if (!j.contains("corpora") || !j["corpora"].is_array() || j["corpora"].empty())
        throw ConfigError("config must list corpora");
    for (const auto& c : j["corpora"]) {
        expect_keys(c, "corpora[]", {"label", "paths", "cache", "synthetic"});
        CorpusSource src;
        if (!c.contains("label")) throw ConfigError("corpus entry needs a label");
        src.label = c["label"].get<std::string>();
        if (c.contains("paths")) src.paths = c["paths"].get<std::vector<std::string>>();
        if (c.contains("cache") && !c["cache"].is_null())
            src.cache = c["cache"].get<std::string>();
        if (c.contains("synthetic") && !c["synthetic"].is_null()) {
            const json& s = c["synthetic"];
            expect_keys(s, "synthetic",
                        {"num_words", "word_len_min", "word_len_max", "alphabet_size",
                         "total_units", "words_per_sequence", "zipf", "zipf_s", "seed"});
            SyntheticSpec spec;
            maybe(s, "num_words", spec.num_words);
            maybe(s, "word_len_min", spec.word_len_min);
            maybe(s, "word_len_max", spec.word_len_max);
            maybe(s, "alphabet_size", spec.alphabet_size);
            maybe(s, "total_units", spec.total_units);
            maybe(s, "words_per_sequence", spec.words_per_sequence);
            maybe(s, "zipf", spec.zipf);
            maybe(s, "zipf_s", spec.zipf_s);
            spec.seed = derive_seed(cfg.seed, "synthetic:" + src.label);
            maybe(s, "seed", spec.seed);
            src.synthetic = spec;
        }
        cfg.corpora.push_back(std::move(src));
    }

    if (j.contains("split")) {
        expect_keys(j["split"], "split", {"train_fraction"});
        maybe(j["split"], "train_fraction", cfg.train_fraction);
    }
    if (j.contains("hyperparams")) {
        const json& h = j["hyperparams"];
        expect_keys(h, "hyperparams",
                    {"lambda", "alpha", "gamma", "theta", "tau", "window", "kappa_merge",
                     "tau_merge", "kappa_split", "tau_split", "iterations", "descent",
                     "alpha_decay"});
        maybe(h, "lambda", cfg.hp.lambda);
        maybe(h, "alpha", cfg.hp.alpha);
        maybe(h, "gamma", cfg.hp.gamma);
        maybe(h, "theta", cfg.hp.theta);
        maybe(h, "tau", cfg.hp.tau);
        maybe(h, "window", cfg.hp.window);
        maybe(h, "kappa_merge", cfg.hp.kappa_merge);
        maybe(h, "tau_merge", cfg.hp.tau_merge);
        maybe(h, "kappa_split", cfg.hp.kappa_split);
        if (h.contains("tau_split") && !h["tau_split"].is_null())
            cfg.hp.tau_split = h["tau_split"].get<double>();
        maybe(h, "iterations", cfg.hp.iterations);
        maybe(h, "descent", cfg.hp.descent);
        maybe(h, "alpha_decay", cfg.hp.alpha_decay);
    }
    if (j.contains("constraints")) {
        expect_keys(j["constraints"], "constraints", {"max_token_len", "min_token_len"});
        maybe(j["constraints"], "max_token_len", cfg.constraints.max_token_len);
        maybe(j["constraints"], "min_token_len", cfg.constraints.min_token_len);
    }
    if (j.contains("boundary")) {
        expect_keys(j["boundary"], "boundary", {"order", "kappa_b"});
        maybe(j["boundary"], "order", cfg.boundary_order);
        maybe(j["boundary"], "kappa_b", cfg.kappa_b);
    }
    if (j.contains("embedding")) {
        expect_keys(j["embedding"], "embedding", {"dim"});
        maybe(j["embedding"], "dim", cfg.dim);
    }
    if (j.contains("gate")) {
        expect_keys(j["gate"], "gate", {"mode", "scale"});
        maybe(j["gate"], "mode", cfg.gate_mode);
        maybe(j["gate"], "scale", cfg.gate_scale);
    }
    if (j.contains("bpe")) {
        expect_keys(j["bpe"], "bpe", {"num_merges"});
        maybe(j["bpe"], "num_merges", cfg.bpe_merges);
    }
    if (j.contains("lm")) {
        expect_keys(j["lm"], "lm", {"k"});
        maybe(j["lm"], "k", cfg.lm_k);
    }
    if (j.contains("eval")) {
        expect_keys(j["eval"], "eval", {"iterations"});
        if (j["eval"].contains("iterations") && !j["eval"]["iterations"].is_null())
            cfg.eval_iterations = j["eval"]["iterations"].get<std::size_t>();
    }
    if (j.contains("ablation")) {
        expect_keys(j["ablation"], "ablation",
                    {"freeze_segmentation", "freeze_embeddings"});
        maybe(j["ablation"], "freeze_segmentation", cfg.ablation.freeze_segmentation);
        maybe(j["ablation"], "freeze_embeddings", cfg.ablation.freeze_embeddings);
    }
    if (j.contains("formats")) {
        expect_keys(j["formats"], "formats", {"json", "csv"});
        maybe(j["formats"], "json", cfg.emit_json);
        maybe(j["formats"], "csv", cfg.emit_csv);
    }
    maybe(j, "measure_overhead", cfg.measure_overhead);
    if (j.contains("bench")) {
        const json& b = j["bench"];
        expect_keys(b, "bench", {"buckets", "repetitions", "warmup"});
        if (b.contains("buckets")) {
            cfg.bench.buckets.clear();
            for (const auto& bucket : b["buckets"]) {
                if (!bucket.is_array() || bucket.size() != 2)
                    throw ConfigError("bench bucket must be [lo, hi]");
                cfg.bench.buckets.emplace_back(bucket[0].get<std::size_t>(),
                                               bucket[1].get<std::size_t>());
            }
        }
        maybe(b, "repetitions", cfg.bench.repetitions);
        maybe(b, "warmup", cfg.bench.warmup);
    }
    // "sweep" is expanded by the CLI before this parser runs; tolerated here
    // so a swept config file round-trips.

    cfg.hp.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["out"] = cfg.out;
    j["lowercase"] = cfg.lowercase;
    j["whitespace_gold"] = cfg.whitespace_gold;
    auto& corpora = j["corpora"] = json::array();
    for (const auto& src : cfg.corpora) {
        json c;
        c["label"] = src.label;
        if (!src.paths.empty()) c["paths"] = src.paths;
        if (src.cache) c["cache"] = *src.cache;
        if (src.synthetic) {
            const SyntheticSpec& s = *src.synthetic;
            c["synthetic"] = {{"num_words", s.num_words},
                              {"word_len_min", s.word_len_min},
                              {"word_len_max", s.word_len_max},
                              {"alphabet_size", s.alphabet_size},
                              {"total_units", s.total_units},
                              {"words_per_sequence", s.words_per_sequence},
                              {"zipf", s.zipf},
                              {"zipf_s", s.zipf_s},
                              {"seed", s.seed}};
        }
        corpora.push_back(std::move(c));
    }
    j["split"] = {{"train_fraction", cfg.train_fraction}};
    json h;
    h["lambda"] = cfg.hp.lambda;
    h["alpha"] = cfg.hp.alpha;
    h["gamma"] = cfg.hp.gamma;
    h["theta"] = cfg.hp.theta;
    h["tau"] = cfg.hp.tau;
    h["window"] = cfg.hp.window;
    h["kappa_merge"] = cfg.hp.kappa_merge;
    h["tau_merge"] = cfg.hp.tau_merge;
    h["kappa_split"] = cfg.hp.kappa_split;
    if (cfg.hp.tau_split)
        h["tau_split"] = *cfg.hp.tau_split;
    else
        h["tau_split"] = nullptr;
    h["iterations"] = cfg.hp.iterations;
    h["descent"] = cfg.hp.descent;
    h["alpha_decay"] = cfg.hp.alpha_decay;
    j["hyperparams"] = std::move(h);
    j["constraints"] = {{"max_token_len", cfg.constraints.max_token_len},
                        {"min_token_len", cfg.constraints.min_token_len}};
    j["boundary"] = {{"order", cfg.boundary_order}, {"kappa_b", cfg.kappa_b}};
    j["embedding"] = {{"dim", cfg.dim}};
    j["gate"] = {{"mode", cfg.gate_mode}, {"scale", cfg.gate_scale}};
    j["bpe"] = {{"num_merges", cfg.bpe_merges}};
    j["lm"] = {{"k", cfg.lm_k}};
    j["eval"] = {{"iterations", cfg.eval_iterations ? json(*cfg.eval_iterations) : json()}};
    j["ablation"] = {{"freeze_segmentation", cfg.ablation.freeze_segmentation},
                     {"freeze_embeddings", cfg.ablation.freeze_embeddings}};
    j["formats"] = {{"json", cfg.emit_json}, {"csv", cfg.emit_csv}};
    j["measure_overhead"] = cfg.measure_overhead;
    json buckets = json::array();
    for (const auto& [lo, hi] : cfg.bench.buckets) buckets.push_back({lo, hi});
    j["bench"] = {{"buckets", std::move(buckets)},
                  {"repetitions", cfg.bench.repetitions},
                  {"warmup", cfg.bench.warmup}};
    return j.dump(2) + "\n";
}

// --- corpus loading ------------------------------------------------------------------

namespace {

Corpus load_source(const RunConfig& cfg, const CorpusSource& src) {
    if (src.synthetic) return generate_planted_corpus(*src.synthetic, src.label);
    if (src.cache) {
        Corpus corpus = corpus_from_json(read_file(*src.cache));
        if (corpus.domain_label != src.label)
            throw MixedDomainError("cache label '" + corpus.domain_label +
                                   "' does not match config label '" + src.label + "'");
        return corpus;
    }
    std::vector<RawDocument> docs;
    for (const auto& path : src.paths)
        docs.push_back({path, read_file(path), src.label});
    return load_corpus(docs, cfg.lowercase, cfg.whitespace_gold);
}

GateParams make_gate(const RunConfig& cfg) {
    if (cfg.gate_mode == "random")
        return GateParams::seeded_random(cfg.dim, derive_seed(cfg.seed, "gate"),
                                         cfg.gate_scale, cfg.hp.theta);
    GateParams g = GateParams::identity(cfg.dim);
    g.theta = cfg.hp.theta;
    return g;
}

std::vector<Segmentation> encode_all(const BpeEncoder& encoder,
                                     const std::vector<std::u32string>& seqs) {
    std::vector<Segmentation> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) out.push_back(encoder.encode(s));
    return out;
}

struct OverheadSample {
    double dynamic_ms = 0.0;
    double static_ms = 0.0;
};

/// Shared timing core: mean per-sequence BPE encode vs one morphogenesis step.
OverheadSample time_sequences(const std::vector<std::u32string>& seqs,
                              const BpeEncoder& encoder,
                              const std::shared_ptr<const BoundaryModel>& model,
                              const RunConfig& cfg, const GateParams& gate,
                              const EmbeddingTable* warm, std::size_t repetitions,
                              std::size_t warmup) {
    using clock = std::chrono::steady_clock;
    ScopedSingleThread single;
    OverheadSample out;

    // static side
    for (std::size_t w = 0; w < warmup; ++w)
        for (const auto& s : seqs) (void)encoder.encode(s);
    {
        const auto t0 = clock::now();
        for (std::size_t r = 0; r < repetitions; ++r)
            for (const auto& s : seqs) (void)encoder.encode(s);
        const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        out.static_ms = ms / static_cast<double>(repetitions * seqs.size());
    }

    // dynamic side: per-sequence state prepared outside the timer, the
    // morphogenesis step itself inside it.
    std::vector<MorphoState> states;
    states.reserve(seqs.size());
    for (const auto& s : seqs) {
        Corpus one;
        one.domain_label = "bench";
        one.sequences.push_back(s);
        states.push_back(init_morpho_state(one, model, cfg.hp, cfg.constraints,
                                           make_gate(cfg), cfg.dim, warm));
    }
    for (std::size_t w = 0; w < warmup; ++w)
        for (auto& st : states) (void)morphogenesis_step(st, cfg.hp);
    {
        const auto t0 = clock::now();
        for (std::size_t r = 0; r < repetitions; ++r)
            for (auto& st : states) (void)morphogenesis_step(st, cfg.hp);
        const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        out.dynamic_ms = ms / static_cast<double>(repetitions * seqs.size());
    }
    (void)gate;
    return out;
}

} // namespace

// --- the run pipeline -------------------------------------------------------------------

RunArtifacts run_pipeline(const RunConfig& cfg) {
    cfg.validate();
    RunArtifacts out;

    // Union eval-side data across domains for the frequency-shift analysis.
    std::vector<std::u32string> union_eval_seqs;
    std::vector<Segmentation> union_dyn_segs, union_static_segs;
    bool any_gold = false;

    double overhead_dyn_ms = 0.0, overhead_static_ms = 0.0;

    for (const auto& src : cfg.corpora) {
        const Corpus corpus = load_source(cfg, src);
        const SplitSpec split_spec{cfg.train_fraction,
                                   derive_seed(cfg.seed, "split:" + src.label)};
        auto [train, eval] = split(corpus, split_spec);
        if (eval.sequences.empty())
            throw ConfigError("eval split is empty for domain " + src.label);

        const auto model = std::make_shared<const BoundaryModel>(
            BoundaryModel::fit(train, cfg.boundary_order, cfg.kappa_b));
        const BpeVocab vocab = train_bpe(train, cfg.bpe_merges);
        const BpeEncoder encoder(vocab);
        const GateParams gate = make_gate(cfg);

        DomainArtifacts dom;
        dom.label = src.label;

        // Train-side morphogenesis with full history for the consistency and
        // ablation figures.
        std::vector<std::vector<Segmentation>> history;
        auto [train_state_init, train_traces] = [&]() {
            MorphoState state = init_morpho_state(train, model, cfg.hp, cfg.constraints,
                                                  gate, cfg.dim);
            history.push_back(state.segmentations());
            dom.boundary_variance_by_iter.push_back(state.boundary_score_variance());
            auto traces = continue_morphogenesis(
                state, cfg.hp, cfg.hp.iterations, cfg.ablation,
                [&](const MorphoState& st, const StepTrace& tr) {
                    history.push_back(st.segmentations());
                    dom.boundary_variance_by_iter.push_back(st.boundary_score_variance());
                    dom.stability_by_iter.push_back(tr.token_stability);
                });
            return std::make_pair(std::move(state), std::move(traces));
        }();
        MorphoState& train_state = train_state_init;
        dom.traces = std::move(train_traces);

        // Eval-side inference: same model and gate, warm-started from the
        // trained embedding table.
        MorphoState eval_state = init_morpho_state(eval, model, cfg.hp, cfg.constraints,
                                                   gate, cfg.dim, &train_state.table);
        const std::size_t eval_iters = cfg.eval_iterations.value_or(cfg.hp.iterations);
        (void)continue_morphogenesis(eval_state, cfg.hp, eval_iters, cfg.ablation);

        const auto dyn_eval_segs = eval_state.segmentations();
        const auto static_eval_segs = encode_all(encoder, eval.sequences);
        const auto dyn_train_segs = train_state.segmentations();
        const auto static_train_segs = encode_all(encoder, train.sequences);

        const BigramLm lm_dyn = BigramLm::train(train.sequences, dyn_train_segs, cfg.lm_k);
        const BigramLm lm_static =
            BigramLm::train(train.sequences, static_train_segs, cfg.lm_k);
        dom.ppl_dynamic = char_perplexity(lm_dyn, eval.sequences, dyn_eval_segs);
        dom.ppl_static = char_perplexity(lm_static, eval.sequences, static_eval_segs);
        dom.ppl_reduction = perplexity_reduction_ratio(dom.ppl_dynamic, dom.ppl_static);

        if (eval.gold) {
            dom.has_gold = true;
            any_gold = true;
            dom.integrity = semantic_integrity_corpus(dyn_eval_segs, *eval.gold);
        } else {
            dom.integrity = {1.0, 0.0, 0.0};
        }

        dom.coherence = coherence_index(eval_state.sequences(), dyn_eval_segs,
                                        eval_state.table, cfg.hp.coherence_config());
        dom.final_stability =
            dom.traces.empty() ? 0.0 : dom.traces.back().token_stability;
        dom.grad_flow_var =
            dom.traces.size() >= 2 ? gradient_flow_variance(dom.traces) : 0.0;
        dom.consistency_dynamic =
            history.size() >= 2 ? segmentation_consistency(history) : 1.0;
        dom.consistency_static = 1.0; // the BPE segmentation never moves

        for (std::size_t s = 0; s < eval.sequences.size(); ++s) {
            union_eval_seqs.push_back(eval.sequences[s]);
            union_dyn_segs.push_back(dyn_eval_segs[s]);
            union_static_segs.push_back(static_eval_segs[s]);
        }

        if (cfg.measure_overhead) {
            const auto sample =
                time_sequences(eval.sequences, encoder, model, cfg, gate,
                               &train_state.table, cfg.bench.repetitions, cfg.bench.warmup);
            overhead_dyn_ms += sample.dynamic_ms;
            overhead_static_ms += sample.static_ms;
        }

        out.domains.push_back(std::move(dom));
    }

    // Report assembly: structural metrics describe the training run, the
    // predictive ones the held-out evaluation.
    MetricsReport& r = out.report;
    std::vector<double> stab, coh, ppl_d, ppl_s, gvar, f1s;
    std::size_t max_steps = 0;
    for (const auto& d : out.domains) {
        stab.push_back(d.final_stability);
        coh.push_back(d.coherence);
        ppl_d.push_back(d.ppl_dynamic);
        ppl_s.push_back(d.ppl_static);
        gvar.push_back(d.grad_flow_var);
        f1s.push_back(d.integrity.f1);
        r.seg_consistency_by_domain[d.label] = d.consistency_dynamic;
        max_steps = std::max(max_steps, d.traces.size());
    }
    r.token_stability = mean_of(stab);
    r.coherence_index = mean_of(coh);
    r.ppl_dynamic = mean_of(ppl_d);
    r.ppl_static = mean_of(ppl_s);
    r.ppl_reduction_ratio = perplexity_reduction_ratio(r.ppl_dynamic, r.ppl_static);
    r.grad_flow_variance = mean_of(gvar);
    r.semantic_integrity_f1 = mean_of(f1s);
    for (std::size_t t = 0; t < max_steps; ++t) {
        std::vector<double> step;
        for (const auto& d : out.domains)
            if (t < d.traces.size()) step.push_back(d.traces[t].embedding_divergence);
        r.embedding_divergence_by_step.push_back(mean_of(step));
    }
    const FreqShift freq =
        token_frequency_shift(union_eval_seqs, union_dyn_segs, union_static_segs);
    r.freq_shift = freq.rows;
    r.freq_entropy_dyn = freq.entropy_dyn;
    r.freq_entropy_static = freq.entropy_static;

    if (cfg.measure_overhead) {
        const double n = static_cast<double>(out.domains.size());
        r.overhead_ratio = std::max(
            0.0, segmentation_overhead(overhead_dyn_ms / n, overhead_static_ms / n));
        r.meta["overhead_measured"] = "true";
    } else {
        r.overhead_ratio = 0.0;
        r.meta["overhead_measured"] = "false";
    }
    r.meta["gold_source"] = any_gold ? "whitespace-proxy" : "none";
    r.meta["baseline"] = "bpe-" + std::to_string(cfg.bpe_merges) + "-merges";
    r.meta["static_divergence"] = "static embeddings are fixed; divergence column is 0";
    {
        std::string labels;
        for (const auto& d : out.domains) {
            if (!labels.empty()) labels += ",";
            labels += d.label;
        }
        r.meta["domains"] = labels;
    }
    r.validate();
    return out;
}

// --- emission ---------------------------------------------------------------------------

namespace {

std::string trace_csv(const std::vector<StepTrace>& traces) {
    std::string csv = "iter,stability,coherence,align_loss,emb_divergence,grad_mean,"
                      "grad_var,ms\n";
    for (const auto& t : traces) {
        csv += std::to_string(t.iteration) + "," + fmt(t.token_stability) + "," +
               fmt(t.mean_coherence) + "," + fmt(t.alignment_loss) + "," +
               fmt(t.embedding_divergence) + "," + fmt(t.grad_mean) + "," +
               fmt(t.grad_var) + "," + fmt(t.duration_ms) + "\n";
    }
    return csv;
}

} // namespace

std::vector<std::string> emit_artifacts(const RunConfig& cfg, const RunArtifacts& artifacts,
                                        const std::string& outdir) {
    std::vector<std::string> created;
    try {
        if (cfg.emit_json) {
            write_file(outdir + "/report.json", metrics_report_to_json(artifacts.report),
                       &created);
        }
        if (cfg.emit_csv) {
            // Per-iteration trace; first domain keeps the canonical name.
            for (std::size_t d = 0; d < artifacts.domains.size(); ++d) {
                const auto& dom = artifacts.domains[d];
                const std::string name =
                    d == 0 ? "trace.csv" : "trace_" + dom.label + ".csv";
                write_file(outdir + "/" + name, trace_csv(dom.traces), &created);
            }

            std::string ppl = "corpus,dynamic,static\n";
            for (const auto& dom : artifacts.domains)
                ppl += dom.label + "," + fmt(dom.ppl_dynamic) + "," +
                       fmt(dom.ppl_static) + "\n";
            write_file(outdir + "/ppl.csv", ppl, &created);

            std::string div = "step,dynamic,static\n";
            const auto& steps = artifacts.report.embedding_divergence_by_step;
            for (std::size_t t = 0; t < steps.size(); ++t)
                div += std::to_string(t + 1) + "," + fmt(steps[t]) + "," + fmt(0.0) + "\n";
            write_file(outdir + "/divergence.csv", div, &created);

            std::string fig1 = "iter,score\n";
            std::size_t max_steps = 0;
            for (const auto& dom : artifacts.domains)
                max_steps = std::max(max_steps, dom.traces.size());
            for (std::size_t t = 0; t < max_steps; ++t) {
                std::vector<double> vals;
                for (const auto& dom : artifacts.domains)
                    if (t < dom.traces.size())
                        vals.push_back(dom.traces[t].token_stability);
                fig1 += std::to_string(t + 1) + "," + fmt(mean_of(vals)) + "\n";
            }
            write_file(outdir + "/figure1_stability.csv", fig1, &created);

            std::string fig3 = "rank,dyn,static\n";
            for (const auto& row : artifacts.report.freq_shift)
                fig3 += std::to_string(row.rank) + "," + fmt(row.rel_freq_dyn) + "," +
                        fmt(row.rel_freq_static) + "\n";
            write_file(outdir + "/figure3_freq.csv", fig3, &created);

            std::string fig4 = "domain,dynamic,static\n";
            for (const auto& dom : artifacts.domains)
                fig4 += dom.label + "," + fmt(dom.consistency_dynamic) + "," +
                        fmt(dom.consistency_static) + "\n";
            write_file(outdir + "/figure4_consistency.csv", fig4, &created);
        }
    } catch (...) {
        for (auto it = created.rbegin(); it != created.rend(); ++it) {
            std::error_code ec;
            fs::remove(*it, ec);
        }
        throw;
    }
    return created;
}

// --- bench ------------------------------------------------------------------------------

std::vector<BenchRow> run_bench(const RunConfig& cfg) {
    cfg.validate();

    std::vector<std::u32string> sequences;
    for (const auto& src : cfg.corpora) {
        const Corpus corpus = load_source(cfg, src);
        sequences.insert(sequences.end(), corpus.sequences.begin(),
                         corpus.sequences.end());
    }
    Corpus bench_corpus;
    bench_corpus.domain_label = "bench";
    bench_corpus.sequences = sequences;

    const auto model = std::make_shared<const BoundaryModel>(
        BoundaryModel::fit(bench_corpus, cfg.boundary_order, cfg.kappa_b));
    const BpeVocab vocab = train_bpe(bench_corpus, cfg.bpe_merges);
    const BpeEncoder encoder(vocab);
    const GateParams gate = make_gate(cfg);

    constexpr std::size_t kMaxPerBucket = 48;

    std::vector<BenchRow> rows;
    for (const auto& [lo, hi] : cfg.bench.buckets) {
        std::vector<std::u32string> bucket;
        for (const auto& s : sequences) {
            if (s.size() >= lo && (hi == 0 || s.size() <= hi)) {
                bucket.push_back(s);
                if (bucket.size() >= kMaxPerBucket) break;
            }
        }
        if (bucket.empty())
            throw EmptyBucket("no sequences of length " + std::to_string(lo) + ".." +
                              (hi == 0 ? std::string("inf") : std::to_string(hi)));

        const auto sample = time_sequences(bucket, encoder, model, cfg, gate, nullptr,
                                           cfg.bench.repetitions, cfg.bench.warmup);
        BenchRow row;
        row.bucket = std::to_string(lo) + "-" + (hi == 0 ? "+" : std::to_string(hi));
        row.dynamic_ms = sample.dynamic_ms;
        row.static_ms = sample.static_ms;
        row.overhead = segmentation_overhead(sample.dynamic_ms, sample.static_ms);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<std::string> emit_bench(const std::vector<BenchRow>& rows,
                                    const std::string& outdir) {
    std::vector<std::string> created;
    std::string csv = "bucket,dynamic_ms,static_ms,overhead\n";
    for (const auto& r : rows)
        csv += r.bucket + "," + fmt(r.dynamic_ms) + "," + fmt(r.static_ms) + "," +
               fmt(r.overhead) + "\n";
    write_file(outdir + "/overhead.csv", csv, &created);
    return created;
}

// --- ablation ---------------------------------------------------------------------------

AblationArtifacts run_ablation(const RunConfig& cfg) {
    AblationArtifacts out;
    const std::vector<std::pair<std::string, AblationFlags>> variants = {
        {"full", {false, false}},
        {"freeze_segmentation", {true, false}},
        {"freeze_embeddings", {false, true}},
    };
    for (const auto& [name, flags] : variants) {
        RunConfig variant_cfg = cfg;
        variant_cfg.ablation = flags;
        RunArtifacts art = run_pipeline(variant_cfg);

        std::size_t iters = 0;
        for (const auto& d : art.domains)
            iters = std::max(iters, d.boundary_variance_by_iter.size());
        for (std::size_t t = 0; t < iters; ++t) {
            std::vector<double> var, stab;
            for (const auto& d : art.domains) {
                if (t < d.boundary_variance_by_iter.size())
                    var.push_back(d.boundary_variance_by_iter[t]);
                if (t >= 1 && t - 1 < d.stability_by_iter.size())
                    stab.push_back(d.stability_by_iter[t - 1]);
            }
            out.rows.push_back({name, t, mean_of(stab), mean_of(var)});
        }
        out.variants.emplace(name, std::move(art));
    }
    return out;
}

std::vector<std::string> emit_ablation(const RunConfig& cfg, const AblationArtifacts& abl,
                                       const std::string& outdir) {
    std::vector<std::string> created;
    try {
        std::string csv = "variant,iter,stability,boundary_variance\n";
        for (const auto& row : abl.rows)
            csv += row.variant + "," + std::to_string(row.iter) + "," +
                   fmt(row.stability) + "," + fmt(row.boundary_variance) + "\n";
        write_file(outdir + "/ablation.csv", csv, &created);
        for (const auto& [name, art] : abl.variants) {
            for (const auto& f : emit_artifacts(cfg, art, outdir + "/" + name))
                created.push_back(f);
        }
    } catch (...) {
        for (auto it = created.rbegin(); it != created.rend(); ++it) {
            std::error_code ec;
            fs::remove(*it, ec);
        }
        throw;
    }
    return created;
}

// --- report rendering ----------------------------------------------------------------------

MetricsReport load_report(const std::string& run_dir) {
    const std::string path = run_dir + "/report.json";
    if (!fs::exists(path)) throw MissingReport("no report.json in " + run_dir);
    return metrics_report_from_json(read_file(path));
}

std::string format_report_summary(const MetricsReport& report) {
    char buf[256];
    std::string out;
    const auto line = [&](const char* name, double value) {
        std::snprintf(buf, sizeof(buf), "%-34s %12.6f\n", name, value);
        out += buf;
    };
    out += "Metric                                    Value\n";
    out += "------------------------------------------------\n";
    line("Token Stability Score", report.token_stability);
    line("Contextual Coherence Index", report.coherence_index);
    line("Perplexity Reduction Ratio", report.ppl_reduction_ratio);
    line("  perplexity (dynamic)", report.ppl_dynamic);
    line("  perplexity (static)", report.ppl_static);
    line("Adaptive Segmentation Overhead", report.overhead_ratio);
    line("Gradient Flow Variance", report.grad_flow_variance);
    line("Semantic Integrity Score", report.semantic_integrity_f1);
    if (!report.seg_consistency_by_domain.empty()) {
        out += "Segmentation Consistency by domain:\n";
        for (const auto& [domain, c] : report.seg_consistency_by_domain) {
            std::snprintf(buf, sizeof(buf), "  %-32s %12.6f\n", domain.c_str(), c);
            out += buf;
        }
    }
    for (const auto& [key, value] : report.meta)
        out += "note: " + key + " = " + value + "\n";
    return out;
}

} // namespace morphotok
