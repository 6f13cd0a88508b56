#pragma once

#include "morphotok/bpe.hpp"
#include "morphotok/corpus.hpp"
#include "morphotok/metrics.hpp"
#include "morphotok/morphogenesis.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace morphotok {

struct BenchSpec {
    // [lo, hi] unit-length buckets; hi == 0 means unbounded.
    std::vector<std::pair<std::size_t, std::size_t>> buckets{{10, 20}, {50, 100}, {200, 0}};
    std::size_t repetitions = 5;
    std::size_t warmup = 2;

    void validate() const;
};

struct CorpusSource {
    std::string label;
    std::vector<std::string> paths;        // UTF-8 text files
    std::optional<std::string> cache;      // corpus JSON cache
    std::optional<SyntheticSpec> synthetic;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string out = "runs/out";
    bool lowercase = false;
    bool whitespace_gold = true;
    std::vector<CorpusSource> corpora;
    double train_fraction = 0.8;
    HyperParams hp;
    SegConstraints constraints;
    int boundary_order = 2;
    double kappa_b = 2.0;
    std::size_t dim = 32;
    std::string gate_mode = "identity"; // or "random"
    double gate_scale = 0.1;
    std::size_t bpe_merges = 192;
    double lm_k = 0.1;
    std::optional<std::size_t> eval_iterations; // default: hp.iterations
    AblationFlags ablation;
    bool emit_json = true;
    bool emit_csv = true;
    bool measure_overhead = false;
    BenchSpec bench;

    void validate() const;
};

/// Strict parse: unknown keys anywhere are rejected.
RunConfig run_config_from_json(const std::string& json_text);
std::string run_config_to_json(const RunConfig& cfg);

struct DomainArtifacts {
    std::string label;
    double ppl_dynamic = 1.0;
    double ppl_static = 1.0;
    double ppl_reduction = 0.0;
    PrfScore integrity;
    bool has_gold = false;
    double coherence = 0.0;
    double final_stability = 0.0;
    double grad_flow_var = 0.0;
    double consistency_dynamic = 1.0;
    double consistency_static = 1.0;
    std::vector<StepTrace> traces;
    std::vector<double> stability_by_iter;
    std::vector<double> boundary_variance_by_iter;
};

struct RunArtifacts {
    MetricsReport report;
    std::vector<DomainArtifacts> domains;
};

/// Full experiment: ingest, split, BPE + boundary-model training, the
/// morphogenesis run, eval-side inference, LM training and every metric.
/// Pure compute; writes nothing.
RunArtifacts run_pipeline(const RunConfig& cfg);

/// Writes report.json, trace.csv and the table/figure CSVs into `outdir`.
/// Returns the list of created files (newest first removal order on failure).
std::vector<std::string> emit_artifacts(const RunConfig& cfg, const RunArtifacts& artifacts,
                                        const std::string& outdir);

struct BenchRow {
    std::string bucket;
    double dynamic_ms = 0.0;
    double static_ms = 0.0;
    double overhead = 0.0;
};

/// Single-threaded wall-clock comparison: BPE encode vs one morphogenesis
/// step per sequence, per length bucket.
std::vector<BenchRow> run_bench(const RunConfig& cfg);
std::vector<std::string> emit_bench(const std::vector<BenchRow>& rows,
                                    const std::string& outdir);

struct AblationRow {
    std::string variant;
    std::size_t iter = 0;
    double stability = 0.0;
    double boundary_variance = 0.0;
};

struct AblationArtifacts {
    std::vector<AblationRow> rows;
    std::map<std::string, RunArtifacts> variants;
};

/// Three runs off one seed: full, freeze_segmentation, freeze_embeddings.
AblationArtifacts run_ablation(const RunConfig& cfg);
std::vector<std::string> emit_ablation(const RunConfig& cfg, const AblationArtifacts& abl,
                                       const std::string& outdir);

/// Loads <run_dir>/report.json and renders the metric summary table.
std::string format_report_summary(const MetricsReport& report);
MetricsReport load_report(const std::string& run_dir);

} // namespace morphotok
