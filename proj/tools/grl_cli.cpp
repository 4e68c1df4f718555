// grl: ground-roll detection, segmentation and filtering pipeline.

#include <grl/pipeline.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

namespace fs = std::filesystem;
namespace gp = grl::pipeline;
using nlohmann::json;

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kPrerequisite = 3, kNumeric = 4, kArtifact = 5 };

int fail(int code, const std::string& kind, const std::string& message, const std::string& stage = {}) {
    json e = {{"kind", kind}, {"message", message}};
    if (!stage.empty()) e["stage"] = stage;
    std::cerr << json{{"error", e}}.dump() << std::endl;
    return code;
}

// Maps the exception thrown inside a stage to an exit code and error kind.
int classify(const std::exception_ptr& p, const std::string& stage) {
    try {
        std::rethrow_exception(p);
    } catch (const grl::nn::NumericError& e) {
        return fail(kNumeric, "non_finite_loss", e.what(), stage);
    } catch (const gp::MissingPrerequisite& e) {
        return fail(kPrerequisite, "missing_prerequisite", e.what(), stage);
    } catch (const gp::ArtifactError& e) {
        return fail(kArtifact, "artifact", e.what(), stage);
    } catch (const grl::FormatError& e) {
        return fail(kArtifact, "artifact", e.what(), stage);
    } catch (const gp::ConfigError& e) {
        return fail(kUsage, "config", e.what(), stage);
    } catch (const std::exception& e) {
        return fail(kFailure, "stage_failed", e.what(), stage);
    }
}

fs::path resolve_run_dir(const gp::PipelineConfig& cfg, const std::string& manifest) {
    if (!cfg.data_dir.empty()) return cfg.data_dir;
    if (!manifest.empty()) {
        const auto parent = fs::path(manifest).parent_path();
        return parent.empty() ? fs::path(".") : parent;
    }
    if (const char* env = std::getenv("GRL_DATA_DIR"); env && *env) return env;
    return "grl_run";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ground-roll detection, segmentation and cGAN filtering on shot gathers"};
    app.set_version_flag("--version", std::string(gp::kToolVersion));
    app.require_subcommand(1, 1);
    app.fallthrough();

    std::string config_path, manifest_path;
    std::optional<std::uint64_t> seed;
    gp::RunOptions opt;
    std::string results_dir, reference_dir;

    app.add_option("--config", config_path, "Pipeline config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--manifest", manifest_path, "Run manifest path (default: <run dir>/manifest.json)");
    app.add_option("--seed", seed, "Root seed; overrides the config");
    app.add_flag("--force", opt.force, "Re-run stages even when their outputs are current");
    app.add_option("--jobs", opt.jobs, "Worker threads for per-gather work")->check(CLI::PositiveNumber);
    app.add_flag("--emit-images", opt.emit_images, "Write PGM diagnostics under <run dir>/images");

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"synth", "Generate the synthetic survey"},
        {"train-detect", "Fit the equalization map and train the tile classifier"},
        {"fit-mask", "Rough masks from the likelihood map and log-boundary fit"},
        {"train-segment", "Train the per-trace segmentation network on the rough masks"},
        {"train-filter", "Train the conditional GAN filter"},
        {"apply", "Segment and filter the held-out gathers"},
        {"evaluate", "Score filtered gathers against the reference"},
        {"report", "Survey report (JSON, CSV, text)"},
        {"run-all", "Run every stage from synth to report"},
        {"experiment-generalization", "Score the trained chain on similar and different geologies"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        if (name == "evaluate") {
            sub->add_option("--results", results_dir, "Directory of filtered gathers named gNNNN.sgr");
            sub->add_option("--reference", reference_dir, "Directory of reference gathers named gNNNN.sgr");
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(kUsage, "usage", e.what());
    }
    const std::string command = app.get_subcommands().front()->get_name();
    if (!results_dir.empty()) opt.results_dir = results_dir;
    if (!reference_dir.empty()) opt.reference_dir = reference_dir;

    gp::PipelineConfig cfg;
    try {
        if (!config_path.empty()) cfg = gp::load_config(config_path);
    } catch (const std::exception& e) {
        return fail(kUsage, "config", e.what());
    }
    if (seed) cfg.seed = *seed;

    const fs::path run_dir = resolve_run_dir(cfg, manifest_path);
    const fs::path manifest = manifest_path.empty() ? run_dir / "manifest.json" : fs::path(manifest_path);

    try {
        gp::Runner runner(cfg, run_dir, manifest, opt, [](const gp::StageStatus& s) {
            json j = {{"stage", s.stage}, {"status", s.skipped ? "up-to-date" : "done"}};
            if (!s.skipped) j["seconds"] = s.seconds;
            std::cout << j.dump() << std::endl;
        });
        runner.run(command);
    } catch (const gp::StageError& e) {
        return classify(e.cause, e.stage);
    } catch (...) {
        return classify(std::current_exception(), command);
    }
    return kOk;
}
