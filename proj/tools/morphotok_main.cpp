// morphotok: dynamic-tokenization experiments driver.
//   run    - full pipeline, metrics report + table/figure CSVs
//   ablate - full / freeze_segmentation / freeze_embeddings comparison
//   bench  - per-bucket dynamic vs static encode timing
//   report - render a run directory's report.json as a summary table

#include "morphotok/errors.hpp"
#include "morphotok/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw morphotok::ConfigError("cannot read config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct CliOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    bool freeze_segmentation = false;
    bool freeze_embeddings = false;
};

void apply_overrides(json& cfg, const CliOverrides& ov) {
    if (ov.seed) cfg["seed"] = *ov.seed;
    if (ov.out) cfg["out"] = *ov.out;
    if (ov.freeze_segmentation) cfg["ablation"]["freeze_segmentation"] = true;
    if (ov.freeze_embeddings) cfg["ablation"]["freeze_embeddings"] = true;
}

void set_json_path(json& root, const std::string& dotted, const json& value) {
    json* node = &root;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', start);
        const std::string key = dotted.substr(start, dot - start);
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

/// Expands a config's "sweep" object (dotted key -> list of values) into the
/// cartesian product of patched configs, one output subdirectory each.
std::vector<json> expand_sweep(json cfg) {
    std::vector<json> points;
    if (!cfg.contains("sweep") || cfg["sweep"].is_null()) {
        cfg.erase("sweep");
        points.push_back(std::move(cfg));
        return points;
    }
    const json sweep = cfg["sweep"];
    cfg.erase("sweep");
    if (!sweep.is_object())
        throw morphotok::ConfigError("sweep must map dotted keys to value lists");

    std::vector<std::pair<std::string, json>> axes;
    for (const auto& [key, values] : sweep.items()) {
        if (!values.is_array() || values.empty())
            throw morphotok::ConfigError("sweep values for " + key + " must be a list");
        axes.emplace_back(key, values);
    }
    const std::string base_out = cfg.value("out", std::string("runs/out"));

    std::vector<std::size_t> idx(axes.size(), 0);
    std::size_t point = 0;
    while (true) {
        json p = cfg;
        for (std::size_t a = 0; a < axes.size(); ++a)
            set_json_path(p, axes[a].first, axes[a].second[idx[a]]);
        char suffix[32];
        std::snprintf(suffix, sizeof(suffix), "/sweep_%03zu", point++);
        p["out"] = base_out + suffix;
        points.push_back(std::move(p));

        std::size_t a = 0;
        while (a < axes.size() && ++idx[a] == axes[a].second.size()) {
            idx[a] = 0;
            ++a;
        }
        if (a == axes.size()) break;
    }
    return points;
}

int cmd_run(const std::string& config_path, const CliOverrides& ov) {
    json raw = json::parse(slurp(config_path));
    apply_overrides(raw, ov);
    for (json& point : expand_sweep(raw)) {
        const morphotok::RunConfig cfg = morphotok::run_config_from_json(point.dump());
        const morphotok::RunArtifacts artifacts = morphotok::run_pipeline(cfg);
        morphotok::emit_artifacts(cfg, artifacts, cfg.out);
        std::cout << "run complete: " << cfg.out << "\n";
    }
    return 0;
}

int cmd_ablate(const std::string& config_path, const CliOverrides& ov) {
    json raw = json::parse(slurp(config_path));
    apply_overrides(raw, ov);
    raw.erase("sweep");
    const morphotok::RunConfig cfg = morphotok::run_config_from_json(raw.dump());
    const morphotok::AblationArtifacts abl = morphotok::run_ablation(cfg);
    morphotok::emit_ablation(cfg, abl, cfg.out);
    std::cout << "ablation complete: " << cfg.out << "/ablation.csv\n";
    return 0;
}

int cmd_bench(const std::string& config_path, const CliOverrides& ov) {
    json raw = json::parse(slurp(config_path));
    apply_overrides(raw, ov);
    raw.erase("sweep");
    const morphotok::RunConfig cfg = morphotok::run_config_from_json(raw.dump());
    const auto rows = morphotok::run_bench(cfg);
    morphotok::emit_bench(rows, cfg.out);
    for (const auto& r : rows) {
        std::cout << r.bucket << ": dynamic " << r.dynamic_ms << " ms, static "
                  << r.static_ms << " ms, overhead " << r.overhead << "\n";
    }
    return 0;
}

int cmd_report(const std::string& config_path, const std::string& out_dir) {
    std::string dir = out_dir;
    if (dir.empty()) {
        if (config_path.empty())
            throw morphotok::ConfigError("report needs --out or --config");
        const json raw = json::parse(slurp(config_path));
        dir = raw.value("out", std::string());
        if (dir.empty()) throw morphotok::ConfigError("config has no out directory");
    }
    const morphotok::MetricsReport report = morphotok::load_report(dir);
    std::cout << morphotok::format_report_summary(report);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"self-organizing tokenization experiments"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    CliOverrides ov;

    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* opt = sub->add_option("--config", config_path, "JSON config file");
        if (config_required) opt->required();
        sub->add_option("--seed", ov.seed, "override config seed");
        sub->add_option("--out", out_dir, "override output directory");
        sub->add_flag("--freeze-segmentation", ov.freeze_segmentation,
                      "disable boundary updates");
        sub->add_flag("--freeze-embeddings", ov.freeze_embeddings,
                      "disable embedding updates");
    };

    auto* run = app.add_subcommand("run", "full experiment pipeline");
    add_common(run, true);
    auto* ablate = app.add_subcommand("ablate", "three-variant ablation study");
    add_common(ablate, true);
    auto* bench = app.add_subcommand("bench", "dynamic vs static encode timing");
    add_common(bench, true);
    auto* report = app.add_subcommand("report", "summarize a run directory");
    add_common(report, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (!out_dir.empty()) ov.out = out_dir;
        if (run->parsed()) return cmd_run(config_path, ov);
        if (ablate->parsed()) return cmd_ablate(config_path, ov);
        if (bench->parsed()) return cmd_bench(config_path, ov);
        if (report->parsed()) return cmd_report(config_path, out_dir);
    } catch (const morphotok::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const morphotok::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
