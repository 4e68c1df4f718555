#pragma once

// Run orchestration: pipeline config, run manifest with hashed artifacts,
// derived per-stage seeds and the stage implementations behind the CLI.

#include <grl/detect.hpp>
#include <grl/filtergan.hpp>
#include <grl/metrics.hpp>
#include <grl/preproc.hpp>
#include <grl/segment.hpp>
#include <grl/synthgen.hpp>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#ifndef GRL_VERSION
#define GRL_VERSION "0.0.0"
#endif

namespace grl::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kToolVersion = GRL_VERSION;
inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kManifestSchemaVersion = 1;

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct MissingPrerequisite : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Failure inside a named stage; keeps the original exception for classification.
struct StageError : std::runtime_error {
    std::string stage;
    std::exception_ptr cause;
    StageError(std::string s, const std::string& msg, std::exception_ptr c)
        : std::runtime_error(msg), stage(std::move(s)), cause(std::move(c)) {}
};

// Hashing ----------------------------------------------------------------------------

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

inline std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw ArtifactError("cannot read " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline std::string sha256_file(const fs::path& p) { return sha256_hex(read_file(p)); }

// Config -----------------------------------------------------------------------------

struct ExperimentConfig {
    GeologyConfig similar = geology::A_variant();
    GeologyConfig different = geology::B();
    int n_gathers = 10;
};

struct PipelineConfig {
    GeologyConfig geology = geology::A();
    int n_gathers = 15;  // the first kTrainGathers train, the rest are held out
    std::uint64_t seed = 7;
    std::string data_dir;  // empty: fall back to --manifest's directory, then GRL_DATA_DIR
    DetectConfig detect;
    SegmentConfig segment;
    FilterConfig filter;
    MetricConfig metrics;
    ExperimentConfig experiment;
};

/// A stock name ("A", "A-variant", "B") or a full geology object.
inline GeologyConfig geology_from_json(const json& j) {
    GeologyConfig g = j.is_string() ? geology::by_name(j.get<std::string>()) : j.get<GeologyConfig>();
    validate(g);
    return g;
}

inline json to_json(const PipelineConfig& c) {
    json w = {{"band_samples", c.metrics.windows.band_samples},
              {"min_trace_gap", c.metrics.windows.min_trace_gap},
              {"amplitude_bins", c.metrics.amplitude_bins},
              {"f_max_hz", c.metrics.grid.f_max_hz},
              {"step_hz", c.metrics.grid.step_hz}};
    return json{{"schema_version", kConfigSchemaVersion},
                {"geology", c.geology},
                {"n_gathers", c.n_gathers},
                {"seed", c.seed},
                {"data_dir", c.data_dir},
                {"detect", c.detect},
                {"segment", c.segment},
                {"filter", c.filter},
                {"metrics", w},
                {"experiment", {{"similar", c.experiment.similar}, {"different", c.experiment.different}, {"n_gathers", c.experiment.n_gathers}}}};
}

inline PipelineConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    static const std::set<std::string> known = {"schema_version", "geology", "n_gathers", "seed", "data_dir", "detect",
                                                "segment",        "filter",  "metrics",   "experiment"};
    for (const auto& [k, v] : j.items())
        if (!known.contains(k)) throw ConfigError("config: unknown key '" + k + "'");
    PipelineConfig c;
    try {
        if (j.contains("schema_version") && j.at("schema_version").get<int>() != kConfigSchemaVersion)
            throw ConfigError("config: unsupported schema_version");
        if (j.contains("geology")) c.geology = geology_from_json(j.at("geology"));
        if (j.contains("n_gathers")) j.at("n_gathers").get_to(c.n_gathers);
        if (j.contains("seed")) j.at("seed").get_to(c.seed);
        if (j.contains("data_dir")) j.at("data_dir").get_to(c.data_dir);
        if (j.contains("detect")) c.detect = j.at("detect").get<DetectConfig>();
        if (j.contains("segment")) c.segment = j.at("segment").get<SegmentConfig>();
        if (j.contains("filter")) c.filter = j.at("filter").get<FilterConfig>();
        if (j.contains("metrics")) {
            const auto& m = j.at("metrics");
            if (m.contains("band_samples")) m.at("band_samples").get_to(c.metrics.windows.band_samples);
            if (m.contains("min_trace_gap")) m.at("min_trace_gap").get_to(c.metrics.windows.min_trace_gap);
            if (m.contains("amplitude_bins")) m.at("amplitude_bins").get_to(c.metrics.amplitude_bins);
            if (m.contains("f_max_hz")) m.at("f_max_hz").get_to(c.metrics.grid.f_max_hz);
            if (m.contains("step_hz")) m.at("step_hz").get_to(c.metrics.grid.step_hz);
        }
        if (j.contains("experiment")) {
            const auto& e = j.at("experiment");
            if (e.contains("similar")) c.experiment.similar = geology_from_json(e.at("similar"));
            if (e.contains("different")) c.experiment.different = geology_from_json(e.at("different"));
            if (e.contains("n_gathers")) e.at("n_gathers").get_to(c.experiment.n_gathers);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (c.n_gathers < static_cast<int>(kTrainGathers) + 1) throw ConfigError("config: n_gathers must be at least 6");
    if (c.experiment.n_gathers < 1) throw ConfigError("config: experiment.n_gathers must be positive");
    return c;
}

inline PipelineConfig load_config(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw ConfigError("cannot open config " + p.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError("config " + p.string() + ": " + e.what());
    }
    return config_from_json(j);
}

inline std::string config_hash(const PipelineConfig& c) { return sha256_hex(to_json(c).dump()); }

// Seeds --------------------------------------------------------------------------------

/// Counter per seeded stage; a stage seed is derive_seed(root, counter).
enum class SeedSlot : std::uint64_t {
    synth = 1,
    detect_tiles = 2,
    detect_train = 3,
    segment_set = 4,
    segment_train = 5,
    filter_pairs = 6,
    filter_train = 7,
    experiment_similar = 8,
    experiment_different = 9,
};

inline std::uint64_t stage_seed(std::uint64_t root, SeedSlot s) { return derive_seed(root, static_cast<std::uint64_t>(s)); }

// Small helpers ------------------------------------------------------------------------

inline std::string gather_name(std::uint64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "g%04llu", static_cast<unsigned long long>(id));
    return buf;
}

/// Runs fn(i) for i in [0, n) on `jobs` threads; rethrows the lowest-index failure.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline void write_text(const fs::path& p, const std::string& s) {
    fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + p.string() + " for writing");
    os << s;
    if (!os) throw std::runtime_error("write failed: " + p.string());
}

inline std::string loss_csv(const std::vector<double>& loss) {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,loss\n";
    for (std::size_t i = 0; i < loss.size(); ++i) os << i << ',' << loss[i] << '\n';
    return os.str();
}

/// Gather amplitudes already in [0, 1] (equalized) as a PGM, traces as rows.
inline void save_gather_pgm(const ShotGather& eq, const fs::path& p) {
    fs::create_directories(p.parent_path());
    save_pgm(eq.data, p.string());
}

inline void save_mask_pgm(const GroundRollMask& m, const fs::path& p) {
    Matrix img(m.n_traces(), m.n_samples());
    for (std::size_t i = 0; i < img.size(); ++i) img.flat()[i] = m.mask.flat()[i];
    fs::create_directories(p.parent_path());
    save_pgm(img, p.string());
}

// Models used at inference ----------------------------------------------------------------

struct InferenceModels {
    TransferMap map;
    TraceUNet segmenter;
    CganModel cgan;
};

struct GatherOutcome {
    GroundRollMask mask;
    ShotGather result;
};

/// Equalize, segment, filter: the per-gather inference chain.
inline GatherOutcome process_gather(const ShotGather& noisy, const InferenceModels& m, const PipelineConfig& cfg) {
    const auto eq = apply_equalization(noisy, m.map);
    GatherOutcome out;
    out.mask = segment_gather(eq, m.segmenter, cfg.segment);
    out.result = filter_pipeline(noisy, out.mask, m.cgan, m.map, cfg.filter.stride);
    return out;
}

// Runner --------------------------------------------------------------------------------

struct RunOptions {
    bool force = false;
    int jobs = 1;
    bool emit_images = false;
    std::optional<fs::path> results_dir;    // evaluate: filtered gathers to score
    std::optional<fs::path> reference_dir;  // evaluate: expert reference gathers
};

struct StageStatus {
    std::string stage;
    bool skipped = false;
    double seconds = 0.0;
};

inline const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> s = {"synth",  "train-detect", "fit-mask", "train-segment", "train-filter",
                                               "apply",  "evaluate",     "report",   "experiment-generalization"};
    return s;
}

class Runner {
public:
    using Reporter = std::function<void(const StageStatus&)>;

    Runner(PipelineConfig cfg, fs::path run_dir, fs::path manifest_path, RunOptions opt, Reporter rep = {})
        : cfg_(std::move(cfg)), root_(std::move(run_dir)), manifest_path_(std::move(manifest_path)), opt_(std::move(opt)),
          report_(std::move(rep)) {
        if (fs::exists(manifest_path_)) {
            try {
                manifest_ = json::parse(read_file(manifest_path_));
            } catch (const json::exception& e) {
                throw ArtifactError("manifest " + manifest_path_.string() + " is not valid JSON: " + e.what());
            }
            if (!manifest_.is_object() || manifest_.value("schema_version", 0) != kManifestSchemaVersion)
                throw ArtifactError("manifest " + manifest_path_.string() + " has an unsupported schema");
        } else {
            manifest_ = json{{"schema_version", kManifestSchemaVersion}, {"stages", json::object()}};
        }
        manifest_["tool_version"] = kToolVersion;
        manifest_["config_hash"] = config_hash(cfg_);
        manifest_["config"] = to_json(cfg_);
        json seeds = {{"root", cfg_.seed}};
        for (auto [name, slot] : std::initializer_list<std::pair<const char*, SeedSlot>>{
                 {"synth", SeedSlot::synth},
                 {"detect_tiles", SeedSlot::detect_tiles},
                 {"detect_train", SeedSlot::detect_train},
                 {"segment_set", SeedSlot::segment_set},
                 {"segment_train", SeedSlot::segment_train},
                 {"filter_pairs", SeedSlot::filter_pairs},
                 {"filter_train", SeedSlot::filter_train},
                 {"experiment_similar", SeedSlot::experiment_similar},
                 {"experiment_different", SeedSlot::experiment_different}})
            seeds[name] = stage_seed(cfg_.seed, slot);
        manifest_["seeds"] = seeds;
    }

    const json& manifest() const { return manifest_; }
    const fs::path& root() const { return root_; }

    void run(const std::string& stage) {
        if (stage == "run-all") {
            for (const auto& s : {"synth", "train-detect", "fit-mask", "train-segment", "train-filter", "apply", "evaluate", "report"})
                run(s);
            return;
        }
        const auto it = stages().find(stage);
        if (it == stages().end()) throw ConfigError("unknown stage '" + stage + "'");
        const Stage& st = it->second;
        for (const auto& d : st.deps) require(d);
        const auto key = stage_key(stage);
        StageStatus status{stage, false, 0.0};
        if (!opt_.force && up_to_date(stage, key)) {
            status.skipped = true;
            if (report_) report_(status);
            return;
        }
        Outputs out;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            (this->*st.body)(out);
        } catch (const ConfigError&) {
            throw;
        } catch (const MissingPrerequisite&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(stage, e.what(), std::current_exception());
        }
        status.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        json arts = json::object();
        for (const auto& [name, rel] : out.artifacts) arts[name] = {{"path", rel}, {"sha256", cached_hash(root_ / rel)}};
        manifest_["stages"][stage] = {{"key", key}, {"seconds", status.seconds}, {"artifacts", arts}, {"info", out.info}};
        save_manifest();
        if (report_) report_(status);
    }

    void save_manifest() const { write_text(manifest_path_, manifest_.dump(2) + "\n"); }

private:
    struct Outputs {
        std::map<std::string, std::string> artifacts;  // name -> path relative to the run directory
        json info = json::object();
    };
    struct Stage {
        std::vector<std::string> deps;
        void (Runner::*body)(Outputs&);
        std::function<json(const Runner&)> material;
    };

    static const std::map<std::string, Stage>& stages() {
        static const std::map<std::string, Stage> s = {
            {"synth", {{}, &Runner::synth, [](const Runner& r) {
                           return json{{"geology", r.cfg_.geology}, {"n_gathers", r.cfg_.n_gathers},
                                       {"seed", stage_seed(r.cfg_.seed, SeedSlot::synth)}};
                       }}},
            {"train-detect", {{"synth"}, &Runner::train_detect, [](const Runner& r) {
                                  return json{{"detect", r.cfg_.detect},
                                              {"seeds", {stage_seed(r.cfg_.seed, SeedSlot::detect_tiles),
                                                         stage_seed(r.cfg_.seed, SeedSlot::detect_train)}}};
                              }}},
            {"fit-mask", {{"synth", "train-detect"}, &Runner::fit_mask, [](const Runner& r) {
                              return json{{"detect", r.cfg_.detect}, {"images", r.opt_.emit_images}};
                          }}},
            {"train-segment", {{"synth", "train-detect", "fit-mask"}, &Runner::train_segment, [](const Runner& r) {
                                   return json{{"segment", r.cfg_.segment},
                                               {"seeds", {stage_seed(r.cfg_.seed, SeedSlot::segment_set),
                                                          stage_seed(r.cfg_.seed, SeedSlot::segment_train)}}};
                               }}},
            {"train-filter", {{"synth", "train-detect", "train-segment"}, &Runner::train_filter, [](const Runner& r) {
                                  return json{{"segment", r.cfg_.segment},
                                              {"filter", r.cfg_.filter},
                                              {"seeds", {stage_seed(r.cfg_.seed, SeedSlot::filter_pairs),
                                                         stage_seed(r.cfg_.seed, SeedSlot::filter_train)}}};
                              }}},
            {"apply", {{"synth", "train-detect", "train-segment", "train-filter"}, &Runner::apply, [](const Runner& r) {
                           return json{{"segment", r.cfg_.segment}, {"filter", r.cfg_.filter}, {"images", r.opt_.emit_images}};
                       }}},
            {"evaluate", {{"synth", "apply"}, &Runner::evaluate, [](const Runner& r) {
                              json m = to_json(r.cfg_)["metrics"];
                              // Externally supplied gathers: key on their contents.
                              json ext = json::object();
                              for (const auto& [tag, dir] : {std::pair{"results", r.opt_.results_dir}, std::pair{"reference", r.opt_.reference_dir}})
                                  if (dir)
                                      for (auto id : r.test_ids())
                                          ext[tag][gather_name(id)] = sha256_file(*dir / (gather_name(id) + ".sgr"));
                              return json{{"metrics", m}, {"external", ext}};
                          }}},
            {"report", {{"evaluate"}, &Runner::report, [](const Runner&) { return json::object(); }}},
            {"experiment-generalization",
             {{"train-detect", "train-segment", "train-filter", "evaluate"}, &Runner::experiment, [](const Runner& r) {
                  return json{{"experiment", to_json(r.cfg_)["experiment"]},
                              {"metrics", to_json(r.cfg_)["metrics"]},
                              {"segment", r.cfg_.segment},
                              {"filter", r.cfg_.filter},
                              {"seeds", {stage_seed(r.cfg_.seed, SeedSlot::experiment_similar),
                                         stage_seed(r.cfg_.seed, SeedSlot::experiment_different)}}};
              }}},
        };
        return s;
    }

    // Key = hash of this stage's material plus every dependency's artifact hashes.
    std::string stage_key(const std::string& stage) const {
        const Stage& st = stages().at(stage);
        json k = {{"stage", stage}, {"material", st.material(*this)}, {"deps", json::object()}};
        for (const auto& d : st.deps) {
            const auto& e = manifest_["stages"][d];
            k["deps"][d] = e.at("artifacts");
        }
        return sha256_hex(k.dump());
    }

    // Keyed on path, size and mtime so repeated prerequisite checks stay cheap.
    std::string cached_hash(const fs::path& p) const {
        const auto key = p.string() + '|' + std::to_string(fs::file_size(p)) + '|' +
                         std::to_string(fs::last_write_time(p).time_since_epoch().count());
        std::lock_guard lock(hash_mutex_);
        auto it = hash_cache_.find(key);
        if (it == hash_cache_.end()) it = hash_cache_.emplace(key, sha256_file(p)).first;
        return it->second;
    }

    bool artifacts_intact(const json& entry) const {
        for (const auto& [name, a] : entry.at("artifacts").items()) {
            const auto p = root_ / a.at("path").get<std::string>();
            if (!fs::exists(p) || cached_hash(p) != a.at("sha256").get<std::string>()) return false;
        }
        return true;
    }

    bool up_to_date(const std::string& stage, const std::string& key) const {
        const auto& st = manifest_["stages"];
        if (!st.contains(stage)) return false;
        const auto& e = st.at(stage);
        return e.value("key", "") == key && artifacts_intact(e);
    }

    /// A dependency must have run for the current config and inputs, with its artifacts intact.
    void require(const std::string& dep) const {
        const auto& st = manifest_["stages"];
        if (!st.contains(dep)) throw MissingPrerequisite("stage '" + dep + "' has not been run");
        for (const auto& d : stages().at(dep).deps) require(d);
        if (st.at(dep).value("key", "") != stage_key(dep))
            throw MissingPrerequisite("stage '" + dep + "' is out of date for this config; rerun it");
        for (const auto& [name, a] : st.at(dep).at("artifacts").items()) {
            const auto p = root_ / a.at("path").get<std::string>();
            if (!fs::exists(p)) throw MissingPrerequisite("artifact '" + name + "' of stage '" + dep + "' is missing: " + p.string());
            if (cached_hash(p) != a.at("sha256").get<std::string>())
                throw ArtifactError("artifact '" + name + "' of stage '" + dep + "' does not match its manifest hash");
        }
    }

    fs::path artifact(const std::string& stage, const std::string& name) const {
        const auto& st = manifest_["stages"];
        if (!st.contains(stage) || !st.at(stage).at("artifacts").contains(name))
            throw MissingPrerequisite("artifact '" + name + "' of stage '" + stage + "' is not in the manifest");
        return root_ / st.at(stage).at("artifacts").at(name).at("path").get<std::string>();
    }

    const json& info(const std::string& stage) const { return manifest_["stages"].at(stage).at("info"); }

    std::vector<std::uint64_t> train_ids() const { return info("synth").at("train_ids").get<std::vector<std::uint64_t>>(); }
    std::vector<std::uint64_t> test_ids() const {
        if (!manifest_["stages"].contains("synth")) throw MissingPrerequisite("stage 'synth' has not been run");
        return info("synth").at("test_ids").get<std::vector<std::uint64_t>>();
    }

    ShotGather noisy(std::uint64_t id) const { return load_gather(artifact("synth", "noisy/" + gather_name(id)).string()); }
    ShotGather clean(std::uint64_t id) const { return load_gather(artifact("synth", "clean/" + gather_name(id)).string()); }

    TransferMap transfer_map() const { return json::parse(read_file(artifact("train-detect", "transfer_map"))).get<TransferMap>(); }

    TileClassifier classifier() const {
        Rng rng(0);
        TileClassifier m(cfg_.detect.tile_size, cfg_.detect.instance_norm, rng);
        auto p = m.params();
        nn::load_params(p, artifact("train-detect", "classifier").string());
        return m;
    }

    TraceUNet segmenter() const {
        Rng rng(0);
        TraceUNet m(cfg_.segment.net_length, cfg_.segment.kernel, rng);
        auto p = m.params();
        nn::load_params(p, artifact("train-segment", "segmenter").string());
        return m;
    }

    InferenceModels inference_models() const {
        return {transfer_map(), segmenter(), load_model(artifact("train-filter", "cgan").string(), cfg_.filter.tile_size)};
    }

    // Stages ------------------------------------------------------------------

    void synth(Outputs& out) {
        const auto survey = make_survey(cfg_.geology, static_cast<std::size_t>(cfg_.n_gathers), stage_seed(cfg_.seed, SeedSlot::synth));
        for (const auto& s : survey.gathers) {
            const auto n = gather_name(s.noisy.gather_id);
            for (const auto& [kind, g] : {std::pair{"noisy", &s.noisy}, std::pair{"clean", &s.clean}}) {
                const std::string rel = std::string("synth/") + kind + "/" + n + ".sgr";
                fs::create_directories((root_ / rel).parent_path());
                save_gather(*g, (root_ / rel).string());
                out.artifacts[std::string(kind) + "/" + n] = rel;
            }
            const std::string rel = "synth/truth/" + n + ".sgm";
            fs::create_directories((root_ / rel).parent_path());
            save_mask(s.truth, (root_ / rel).string());
            out.artifacts["truth/" + n] = rel;
        }
        out.info = {{"train_ids", survey.train_ids}, {"test_ids", survey.test_ids}, {"geology", survey.config}};
    }

    void train_detect(Outputs& out) {
        std::vector<ShotGather> train;
        for (auto id : train_ids()) train.push_back(noisy(id));
        const auto map = fit_equalization(train);
        std::vector<TileSample> tiles;
        const auto tile_seed = stage_seed(cfg_.seed, SeedSlot::detect_tiles);
        for (const auto& g : train) {
            auto t = sample_heuristic_tiles(apply_equalization(g, map), cfg_.detect.tile_size, cfg_.detect.tiles_per_class,
                                            derive_seed(tile_seed, g.gather_id));
            std::move(t.begin(), t.end(), std::back_inserter(tiles));
        }
        TrainLog log;
        const auto model = train_tile_classifier(tiles, cfg_.detect, stage_seed(cfg_.seed, SeedSlot::detect_train), &log);
        write_text(root_ / "models/transfer_map.json", json(map).dump() + "\n");
        fs::create_directories(root_ / "models");
        nn::save_params(model.params(), (root_ / "models/classifier.nnw").string());
        write_text(root_ / "telemetry/detect_loss.csv", loss_csv(log.epoch_loss));
        out.artifacts = {{"transfer_map", "models/transfer_map.json"},
                         {"classifier", "models/classifier.nnw"},
                         {"telemetry", "telemetry/detect_loss.csv"}};
        out.info = {{"transfer_map", map}, {"n_tiles", tiles.size()}};
    }

    void fit_mask(Outputs& out) {
        const auto map = transfer_map();
        const auto model = classifier();
        const auto ids = train_ids();
        std::vector<LogBoundary> bounds(ids.size());
        parallel_for(ids.size(), opt_.jobs, [&](std::size_t i) {
            const auto eq = apply_equalization(noisy(ids[i]), map);
            const auto lm = likelihood_map(eq, model, static_cast<std::size_t>(cfg_.detect.stride));
            bounds[i] = fit_log_boundary(lm, eq, cfg_.detect.p_thresh, cfg_.detect.min_run_s);
            const auto rough = rough_mask_from_boundary(bounds[i], eq);
            fs::create_directories(root_ / "masks/rough");
            save_mask(rough, (root_ / "masks/rough" / (gather_name(ids[i]) + ".sgm")).string());
            if (opt_.emit_images) {
                fs::create_directories(root_ / "images");
                save_pgm(lm.p, (root_ / "images" / ("likelihood_" + gather_name(ids[i]) + ".pgm")).string());
                save_mask_pgm(rough, root_ / "images" / ("rough_mask_" + gather_name(ids[i]) + ".pgm"));
            }
        });
        json b = json::object();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            out.artifacts["rough/" + gather_name(ids[i])] = "masks/rough/" + gather_name(ids[i]) + ".sgm";
            b[gather_name(ids[i])] = bounds[i];
            if (opt_.emit_images) {
                out.artifacts["image/likelihood_" + gather_name(ids[i])] = "images/likelihood_" + gather_name(ids[i]) + ".pgm";
                out.artifacts["image/rough_mask_" + gather_name(ids[i])] = "images/rough_mask_" + gather_name(ids[i]) + ".pgm";
            }
        }
        out.info = {{"boundaries", b}};
    }

    void train_segment(Outputs& out) {
        const auto map = transfer_map();
        std::vector<ShotGather> eq;
        std::vector<GroundRollMask> rough;
        for (auto id : train_ids()) {
            eq.push_back(apply_equalization(noisy(id), map));
            rough.push_back(load_mask(artifact("fit-mask", "rough/" + gather_name(id)).string()));
        }
        const auto set = make_trace_training_set(eq, rough, cfg_.segment.traces_per_gather, stage_seed(cfg_.seed, SeedSlot::segment_set));
        SegmentTrainLog log;
        const auto model = train_trace_unet(set, cfg_.segment, stage_seed(cfg_.seed, SeedSlot::segment_train), &log);
        fs::create_directories(root_ / "models");
        nn::save_params(model.params(), (root_ / "models/segmenter.nnw").string());
        write_text(root_ / "telemetry/segment_loss.csv", loss_csv(log.epoch_loss));
        out.artifacts = {{"segmenter", "models/segmenter.nnw"}, {"telemetry", "telemetry/segment_loss.csv"}};
        out.info = {{"n_traces", set.size()}};
    }

    void train_filter(Outputs& out) {
        const auto map = transfer_map();
        const auto seg = segmenter();
        const auto ids = train_ids();
        std::vector<std::vector<PairedTile>> per(ids.size());
        const auto pair_seed = stage_seed(cfg_.seed, SeedSlot::filter_pairs);
        parallel_for(ids.size(), opt_.jobs, [&](std::size_t i) {
            const auto eqn = apply_equalization(noisy(ids[i]), map);
            const auto eqc = apply_equalization(clean(ids[i]), map);
            const auto mask = segment_gather(eqn, seg, cfg_.segment);
            per[i] = sample_paired_tiles(eqn, eqc, mask, cfg_.filter.tile_size, cfg_.filter.pairs_per_gather, derive_seed(pair_seed, ids[i]));
        });
        std::vector<PairedTile> pairs;
        for (auto& p : per) std::move(p.begin(), p.end(), std::back_inserter(pairs));
        CganTrainLog log;
        const auto model = train_cgan(pairs, cfg_.filter, stage_seed(cfg_.seed, SeedSlot::filter_train), &log);
        fs::create_directories(root_ / "models");
        save_model(model, (root_ / "models/cgan.nnw").string());
        std::ostringstream csv;
        write_telemetry_csv(log, csv);
        write_text(root_ / "telemetry/filter_gan.csv", csv.str());
        out.artifacts = {{"cgan", "models/cgan.nnw"}, {"telemetry", "telemetry/filter_gan.csv"}};
        out.info = {{"n_pairs", pairs.size()},
                    {"initial_l1", log.initial_l1},
                    {"final_l1", log.final_l1},
                    {"d_non_collapse_fraction", log.non_collapse_fraction()}};
    }

    void apply(Outputs& out) {
        const auto models = inference_models();
        const auto ids = test_ids();
        parallel_for(ids.size(), opt_.jobs, [&](std::size_t i) {
            const auto raw = noisy(ids[i]);
            const auto r = process_gather(raw, models, cfg_);
            const auto n = gather_name(ids[i]);
            fs::create_directories(root_ / "masks/predicted");
            fs::create_directories(root_ / "results");
            save_mask(r.mask, (root_ / "masks/predicted" / (n + ".sgm")).string());
            save_gather(r.result, (root_ / "results" / (n + ".sgr")).string());
            if (opt_.emit_images) {
                save_gather_pgm(apply_equalization(raw, models.map), root_ / "images" / ("noisy_" + n + ".pgm"));
                save_gather_pgm(apply_equalization(r.result, models.map), root_ / "images" / ("filtered_" + n + ".pgm"));
                save_mask_pgm(r.mask, root_ / "images" / ("mask_" + n + ".pgm"));
            }
        });
        for (auto id : ids) {
            const auto n = gather_name(id);
            out.artifacts["mask/" + n] = "masks/predicted/" + n + ".sgm";
            out.artifacts["result/" + n] = "results/" + n + ".sgr";
            if (opt_.emit_images)
                for (const char* kind : {"noisy_", "filtered_", "mask_"})
                    out.artifacts[std::string("image/") + kind + n] = std::string("images/") + kind + n + ".pgm";
        }
    }

    void evaluate(Outputs& out) {
        const auto ids = test_ids();
        std::vector<GatherScores> scores(ids.size());
        parallel_for(ids.size(), opt_.jobs, [&](std::size_t i) {
            const auto n = gather_name(ids[i]);
            const auto result = opt_.results_dir ? load_gather((*opt_.results_dir / (n + ".sgr")).string())
                                                 : load_gather(artifact("apply", "result/" + n).string());
            const auto expert = opt_.reference_dir ? load_gather((*opt_.reference_dir / (n + ".sgr")).string()) : clean(ids[i]);
            const auto mask = load_mask(artifact("apply", "mask/" + n).string());
            scores[i] = evaluate_gather(noisy(ids[i]), expert, result, mask, cfg_.metrics);
            scores[i].dataset = cfg_.geology.name;
        });
        write_text(root_ / "reports/scores.json", json{{"schema_version", kReportSchemaVersion}, {"scores", scores}}.dump(2) + "\n");
        out.artifacts = {{"scores", "reports/scores.json"}};
    }

    void report(Outputs& out) {
        const auto j = json::parse(read_file(artifact("evaluate", "scores")));
        const auto r = survey_report(cfg_.geology.name, j.at("scores").get<std::vector<GatherScores>>());
        write_text(root_ / "reports/report.json", to_json(r).dump(2) + "\n");
        std::ostringstream csv;
        write_csv_header(csv);
        write_csv_rows(csv, r);
        write_text(root_ / "reports/report.csv", csv.str());
        write_text(root_ / "reports/report.txt", summary_table({{cfg_.geology.name, r}}));
        out.artifacts = {{"report_json", "reports/report.json"}, {"report_csv", "reports/report.csv"}, {"report_txt", "reports/report.txt"}};
    }

    ScoreReport score_geology(const GeologyConfig& geo, SeedSlot slot, const InferenceModels& models) const {
        GeologyConfig g = geo;
        g.seed = stage_seed(cfg_.seed, slot);
        const auto n = static_cast<std::size_t>(cfg_.experiment.n_gathers);
        std::vector<GatherScores> scores(n);
        parallel_for(n, opt_.jobs, [&](std::size_t i) {
            const auto s = make_gather(g, i + 1);
            const auto r = process_gather(s.noisy, models, cfg_);
            scores[i] = evaluate_gather(s.noisy, s.clean, r.result, r.mask, cfg_.metrics);
        });
        return survey_report(geo.name, std::move(scores));
    }

    void experiment(Outputs& out) {
        const auto models = inference_models();
        const auto j = json::parse(read_file(artifact("evaluate", "scores")));
        std::vector<std::pair<std::string, ScoreReport>> rows;
        rows.emplace_back(cfg_.geology.name + " held-out", survey_report(cfg_.geology.name, j.at("scores").get<std::vector<GatherScores>>()));
        rows.emplace_back(cfg_.experiment.similar.name, score_geology(cfg_.experiment.similar, SeedSlot::experiment_similar, models));
        rows.emplace_back(cfg_.experiment.different.name, score_geology(cfg_.experiment.different, SeedSlot::experiment_different, models));

        json rj = {{"schema_version", kReportSchemaVersion}, {"trained_on", cfg_.geology.name}, {"rows", json::array()}};
        std::ostringstream csv;
        csv << "dataset,n_gathers,Q_p,Q_a,Q_c\n";
        for (const auto& [label, r] : rows) {
            auto rr = to_json(r);
            rr["label"] = label;
            rj["rows"].push_back(rr);
            csv << label << ',' << r.gathers.size() << ",\"" << format_mean_std(r.q_p) << "\",\"" << format_mean_std(r.q_a) << "\",\""
                << format_mean_std(r.q_c) << "\"\n";
        }
        write_text(root_ / "reports/generalization.json", rj.dump(2) + "\n");
        write_text(root_ / "reports/generalization.csv", csv.str());
        write_text(root_ / "reports/generalization.txt", summary_table(rows));
        out.artifacts = {{"json", "reports/generalization.json"}, {"csv", "reports/generalization.csv"}, {"txt", "reports/generalization.txt"}};
    }

    static std::string summary_table(const std::vector<std::pair<std::string, ScoreReport>>& rows) {
        std::ostringstream os;
        char buf[256];
        std::snprintf(buf, sizeof buf, "%-16s %4s  %-18s %-18s %-18s\n", "dataset", "n", "Q_p", "Q_a", "Q_c");
        os << buf;
        for (const auto& [label, r] : rows) {
            std::snprintf(buf, sizeof buf, "%-16s %4zu  %-18s %-18s %-18s\n", label.c_str(), r.gathers.size(), format_mean_std(r.q_p).c_str(),
                          format_mean_std(r.q_a).c_str(), format_mean_std(r.q_c).c_str());
            os << buf;
        }
        return os.str();
    }

    PipelineConfig cfg_;
    fs::path root_;
    fs::path manifest_path_;
    RunOptions opt_;
    Reporter report_;
    json manifest_;
    mutable std::mutex hash_mutex_;
    mutable std::map<std::string, std::string> hash_cache_;
};

}  // namespace grl::pipeline
