#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dragon/channels.hpp"
#include "dragon/errors.hpp"
#include "dragon/features.hpp"
#include "dragon/io/text.hpp"
#include "dragon/log.hpp"
#include "dragon/neural/checkpoint.hpp"
#include "dragon/neural/train.hpp"
#include "dragon/predictor.hpp"
#include "dragon/rem.hpp"
#include "dragon/scenario_io.hpp"
#include "dragon/synth.hpp"

namespace dragon::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr double kDefaultRemResolutionM = 10.0;
inline constexpr int kDefaultSearchTrials = 8;
inline constexpr int kDefaultSearchEpochs = 5;

inline std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw IoError("SHA-256 digest failed");
    std::ostringstream ss;
    for (unsigned i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return ss.str();
}

inline json train_config_json(const nn::TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size},
            {"beta1", c.beta1},                 {"beta2", c.beta2},               {"epsilon", c.epsilon},
            {"max_epochs", c.max_epochs},       {"patience", c.patience}};
}

/// Every built-in default; its digest is part of the version string.
inline json defaults_json() {
    const ChannelParams cp;
    return {{"synth", SynthParams{}},
            {"train", train_config_json(nn::TrainConfig{})},
            {"architecture", nn::ArchitectureConfig{}},
            {"channel",
             {{"los_mode", "geometric"},
              {"shadowing_beta", cp.shadowing_beta_db_per_wall},
              {"shadowing_gamma", cp.shadowing_gamma_db_per_m}}},
            {"rem", {{"resolution", kDefaultRemResolutionM}, {"rx_height", kDefaultReceiverHeightM}}},
            {"search", {{"trials", kDefaultSearchTrials}, {"search_epochs", kDefaultSearchEpochs}}}};
}

inline std::string version_string() {
    return std::string("dragon ") + kToolVersion + " (defaults " + sha256_hex(defaults_json().dump()).substr(0, 12) + ")";
}

/// 2: usage, validation and missing prerequisites; 3: runtime and numeric failures.
inline int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::numeric:
        case ErrorKind::training:
        case ErrorKind::degenerate: return 3;
        default: return 2;
    }
}

/// A command-line value that remembers whether it was given.
template <typename T>
struct Flag {
    T value{};
    CLI::Option* opt = nullptr;
    bool given() const { return opt && opt->count() > 0; }
};

/// Per-invocation state: resolved settings, registered inputs and outputs.
class Run {
public:
    Run(std::string command, std::ostream& out, std::ostream& err) : command_(std::move(command)), out(out), err(err) {}

    std::ostream& out;
    std::ostream& err;
    Flag<std::uint64_t> seed_flag;
    Flag<std::string> config_flag, out_flag;
    Flag<unsigned> jobs_flag;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
    fs::path out_dir;

    const std::string& command() const { return command_; }

    void attach(CLI::App* sc) {
        seed_flag.opt = sc->add_option("--seed", seed_flag.value, "Random seed (default 0)");
        config_flag.opt = sc->add_option("--config", config_flag.value, "JSON file with option defaults");
        out_flag.opt = sc->add_option("--out", out_flag.value, "Output directory (default: out)");
        jobs_flag.opt = sc->add_option("--jobs", jobs_flag.value, "Worker threads (default: all cores)")
                            ->check(CLI::PositiveNumber);
    }

    /// Loads the config file and resolves the shared options.
    void begin() {
        if (config_flag.given()) {
            config_path_ = config_flag.value;
            add_input(config_path_);
            config_ = dragon::detail::parse_json(io::read_file(config_path_), config_path_);
            if (!config_.is_object()) throw ValidationError(config_path_ + ": config must be a JSON object");
        }
        seed = get<std::uint64_t>("seed", seed_flag, 0);
        jobs = get<unsigned>("jobs", jobs_flag, std::max(1u, std::thread::hardware_concurrency()));
        if (jobs < 1) throw ValidationError("jobs must be >= 1");
        out_dir = get<std::string>("out", out_flag, "out");
    }

    /// Flag > config file > default; the choice is recorded for the log and manifest.
    template <typename T>
    T get(const std::string& key, const Flag<T>& flag, T fallback) {
        if (flag.given()) return record(key, flag.value, "flag");
        if (auto it = config_.find(key); it != config_.end()) {
            try {
                return record(key, it->template get<T>(), "config");
            } catch (const json::exception& e) {
                throw ValidationError(config_path_ + ": config key '" + key + "' has the wrong type (" + e.what() + ")");
            }
        }
        return record(key, std::move(fallback), "default");
    }

    /// Same precedence for a value without a default.
    std::string require(const std::string& key, const Flag<std::string>& flag) {
        const std::string v = get<std::string>(key, flag, "");
        if (v.empty()) throw ValidationError("missing required option --" + dashed(key) + " (or config key '" + key + "')");
        return v;
    }

    std::optional<std::string> optional_path(const std::string& key, const Flag<std::string>& flag) {
        const std::string v = get<std::string>(key, flag, "");
        if (v.empty()) return std::nullopt;
        return v;
    }

    const json& config() const { return config_; }

    void log_settings() const {
        err << "dragon " << command_ << ": " << version_string() << "\n";
        for (const auto& [k, v] : settings_.items())
            err << "  " << k << " = " << v.at("value").dump() << " (" << v.at("source").get<std::string>() << ")\n";
    }

    std::string read_input(const std::string& path) {
        add_input(path);
        return io::read_file(path);
    }
    void add_input(const std::string& path) { inputs_.push_back(path); }

    /// Writes `name` under the output directory, refusing to touch inputs.
    void write(const std::string& name, std::string_view content) {
        fs::create_directories(out_dir);
        const fs::path p = out_dir / name;
        for (const auto& in : inputs_) {
            std::error_code ec;
            if (fs::exists(in, ec) && fs::exists(p, ec) && fs::equivalent(in, p, ec))
                throw ValidationError("refusing to overwrite input file '" + in + "'; choose another --out");
        }
        io::write_file(p.string(), content);
        outputs_[p.string()] = sha256_hex(content);
    }

    fs::path path(const std::string& name) const { return out_dir / name; }

    void write_manifest(const std::string& status, const std::string& error = {}) {
        json m;
        m["command"] = command_;
        m["tool_version"] = version_string();
        m["config_file"] = config_path_.empty() ? json(nullptr) : json(config_path_);
        m["seed"] = seed;
        m["settings"] = settings_;
        m["inputs"] = json::object();
        for (const auto& in : inputs_) {
            try {
                m["inputs"][in] = sha256_hex(io::read_file(in));
            } catch (const IoError&) {
                m["inputs"][in] = nullptr;
            }
        }
        m["outputs"] = outputs_;
        m["status"] = status;
        if (!error.empty()) m["error"] = error;
        fs::create_directories(out_dir);
        io::write_file((out_dir / "manifest.json").string(), m.dump(2) + "\n");
    }

private:
    template <typename T>
    T record(const std::string& key, T v, const char* source) {
        settings_[key] = {{"value", v}, {"source", source}};
        return v;
    }
    static std::string dashed(std::string s) {
        std::replace(s.begin(), s.end(), '_', '-');
        return s;
    }

    std::string command_;
    std::string config_path_;
    json config_ = json::object();
    json settings_ = json::object();
    std::vector<std::string> inputs_;
    std::map<std::string, std::string> outputs_;
};

namespace detail {

inline std::string fmt2(double v) { return format_double(v, 2); }

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    for (auto part : io::split(s, ',')) {
        part = io::trim(part);
        if (!part.empty()) out.emplace_back(part);
    }
    return out;
}

struct ChannelFlags {
    Flag<std::string> los_mode;
    Flag<double> beta, gamma;
    void attach(CLI::App* sc) {
        los_mode.opt = sc->add_option("--los-mode", los_mode.value, "geometric | expected (UMa LOS decision)")
                           ->check(CLI::IsMember({"geometric", "expected"}));
        beta.opt = sc->add_option("--shadowing-beta", beta.value, "Obstacle shadowing dB per wall");
        gamma.opt = sc->add_option("--shadowing-gamma", gamma.value, "Obstacle shadowing dB per metre inside buildings");
    }
    ChannelParams resolve(Run& run) const {
        ChannelParams p;
        const std::string mode = run.get<std::string>("los_mode", los_mode, "geometric");
        if (mode == "expected")
            p.los_mode = LosMode::probabilistic_expected;
        else if (mode != "geometric")
            throw ValidationError("los_mode must be 'geometric' or 'expected', got '" + mode + "'");
        p.shadowing_beta_db_per_wall = run.get<double>("shadowing_beta", beta, p.shadowing_beta_db_per_wall);
        p.shadowing_gamma_db_per_m = run.get<double>("shadowing_gamma", gamma, p.shadowing_gamma_db_per_m);
        validate(p);
        return p;
    }
};

/// Warnings go to stderr; after the first 20 the rest are only counted.
class WarningCounter {
public:
    explicit WarningCounter(std::ostream& err)
        : err_(err), scope_([this](const std::string& m) {
              if (++count_ <= 20) err_ << "warning: " << m << "\n";
          }) {}
    ~WarningCounter() {
        if (count_ > 20) err_ << "warning: " << count_ - 20 << " further warnings suppressed\n";
    }

private:
    std::ostream& err_;
    std::size_t count_ = 0;
    log::ScopedWarningSink scope_;
};

struct LoadedMeasurements {
    std::vector<Measurement> rows;
    std::vector<std::size_t> source_rows;  // data-row index in the CSV
    std::vector<std::string> keys;         // "lat,lon,alt_m,cell_id" as written
};

inline LoadedMeasurements load_measurement_file(Run& run, const std::string& path, const Scenario& s) {
    run.add_input(path);
    LoadedMeasurements m;
    m.rows = load_measurements(path, s, &m.source_rows);
    const std::string text = io::read_file(path);
    const auto lines = io::lines(text);
    for (auto r : m.source_rows) {
        const auto line = lines.at(r + 1);
        m.keys.emplace_back(line.substr(0, line.rfind(',')));
    }
    return m;
}

inline std::unique_ptr<Predictor> make_predictor(const std::string& name, const std::optional<std::string>& checkpoint,
                                                 const ChannelParams& cp, Run& run) {
    if (name == "dragon") {
        if (!checkpoint)
            throw MissingPrerequisiteError("predictor 'dragon' needs --checkpoint (run 'dragon train' first)");
        run.add_input(*checkpoint);
        return std::make_unique<DragonPredictor>(nn::load_checkpoint(*checkpoint), cp);
    }
    return std::make_unique<AnalyticalPredictor>(model_kind_from(name), cp);
}

/// Predictions aligned with `ms`, computed per cell so the predictor sees batches.
inline std::vector<double> predict_measurements(const Scenario& s, const Predictor& p, std::span<const Measurement> ms,
                                                unsigned jobs) {
    std::map<std::string, std::vector<std::size_t>> by_cell;
    for (std::size_t i = 0; i < ms.size(); ++i) by_cell[ms[i].cell_id].push_back(i);
    std::vector<double> out(ms.size());
    for (const auto& [id, idx] : by_cell) {
        std::vector<LocalPoint> pts;
        for (auto i : idx) pts.push_back(ms[i].position);
        const auto v = p.predict(s, s.cell(id), pts, jobs);
        for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = v[k];
    }
    return out;
}

inline std::string stem(const std::string& path) { return fs::path(path).stem().string(); }

}  // namespace detail

// ---- commands ----

inline void cmd_ingest(Run& run, const Flag<std::string>& scenario_f, const Flag<std::string>& terrain_f,
                       const Flag<std::string>& heights_f) {
    const std::string scenario = run.require("scenario", scenario_f);
    const std::string terrain = run.require("terrain", terrain_f);
    const auto heights = run.optional_path("heights", heights_f);
    run.log_settings();
    run.add_input(scenario);
    run.add_input(terrain);
    if (heights) run.add_input(*heights);
    const Scenario s = load_scenario(scenario, terrain, heights);
    std::map<HeightSource, int> sources;
    for (const auto& b : s.buildings()) ++sources[b.height_source];
    run.write("bundle.json", save_bundle(s));
    run.out << "ingested " << s.buildings().size() << " buildings (" << sources[HeightSource::annotated] << " annotated, "
            << sources[HeightSource::calibrated] << " calibrated, " << sources[HeightSource::fallback]
            << " fallback) and " << s.cells().size() << " cells into " << run.path("bundle.json").string() << "\n";
}

inline void cmd_fit_eirp(Run& run, const Flag<std::string>& bundle_f, const Flag<std::string>& meas_f,
                         const detail::ChannelFlags& ch) {
    const std::string bundle = run.require("bundle", bundle_f);
    const std::string meas = run.require("measurements", meas_f);
    const ChannelParams cp = ch.resolve(run);
    run.log_settings();
    const Scenario s = load_bundle_text(run.read_input(bundle), bundle);
    const auto ms = detail::load_measurement_file(run, meas, s);
    Scenario fitted = s;
    std::string csv = "cell_id,eirp_dbm,n_measurements\n";
    for (const auto& c : s.cells()) {
        const auto n = std::count_if(ms.rows.begin(), ms.rows.end(), [&](const Measurement& m) { return m.cell_id == c.id; });
        if (n == 0) {
            log::warn("cell '" + c.id + "' has no measurements; EIRP left " + (c.eirp_dbm ? "unchanged" : "unset"));
            csv += c.id + ",," + "0\n";
            continue;
        }
        const double e = fit_eirp(ms.rows, s, c, cp);
        fitted = fitted.with_cell_eirp(c.id, e);
        run.out << c.id << " EIRP " << detail::fmt2(e) << " dBm from " << n << " measurements\n";
        csv += c.id + "," + format_double(e, 6) + "," + std::to_string(n) + "\n";
    }
    run.write("bundle.json", save_bundle(fitted));
    run.write("eirp.csv", csv);
}

struct SynthFlags {
    Flag<int> buildings, cells, measurements;
    Flag<double> sigma, width, height;
};

inline void cmd_synth(Run& run, const SynthFlags& f) {
    SynthParams p;
    json resolved = p;
    auto pick = [&](const std::string& key, auto flag) {
        using T = decltype(flag.value);
        resolved[key] = run.get<T>(key, flag, resolved[key].template get<T>());
    };
    pick("n_buildings", f.buildings);
    pick("n_cells", f.cells);
    pick("n_measurements", f.measurements);
    pick("sigma_db", f.sigma);
    pick("width_m", f.width);
    pick("height_m", f.height);
    for (auto& [key, value] : resolved.items()) {
        if (key == "seed" || run.config().find(key) == run.config().end()) continue;
        if (key == "n_buildings" || key == "n_cells" || key == "n_measurements" || key == "sigma_db" || key == "width_m" ||
            key == "height_m")
            continue;
        value = run.get<json>(key, Flag<json>{}, value);
    }
    resolved["seed"] = run.seed;
    try {
        update_from_json(p, resolved);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("synth parameters: ") + e.what());
    }
    run.log_settings();
    const SynthOutput o = synthesize(p);
    run.write("scenario.json", o.scenario_json);
    run.write("terrain.asc", o.terrain_asc);
    run.write("measurements.csv", o.measurements_csv);
    run.write("truth.csv", o.truth_csv);
    run.write("truth.json", o.truth_json);
    run.out << "synthesized " << p.n_buildings << " buildings, " << p.n_cells << " cells, " << p.n_measurements
            << " measurements (sigma " << detail::fmt2(p.sigma_db) << " dB) into " << run.out_dir.string() << "\n";
}

inline void cmd_extract(Run& run, const Flag<std::string>& bundle_f, const Flag<std::string>& meas_f,
                        const detail::ChannelFlags& ch) {
    const std::string bundle = run.require("bundle", bundle_f);
    const std::string meas = run.require("measurements", meas_f);
    const ChannelParams cp = ch.resolve(run);
    run.log_settings();
    const Scenario s = load_bundle_text(run.read_input(bundle), bundle);
    const auto ms = detail::load_measurement_file(run, meas, s);
    const auto samples = extract_samples(s, ms.rows, cp, run.jobs, ms.source_rows);
    run.write("dataset.jsonl", write_dataset_cache(samples));
    run.out << "extracted " << samples.size() << " samples (" << ms.rows.size() - samples.size() << " rejected) into "
            << run.path("dataset.jsonl").string() << "\n";
}

struct TrainFlags {
    Flag<std::string> dataset;
    Flag<double> learning_rate, weight_decay;
    Flag<int> batch_size, epochs, patience;
};

inline nn::TrainConfig resolve_train_config(Run& run, const TrainFlags& f) {
    nn::TrainConfig c;
    c.learning_rate = run.get<double>("learning_rate", f.learning_rate, c.learning_rate);
    c.weight_decay = run.get<double>("weight_decay", f.weight_decay, c.weight_decay);
    c.batch_size = run.get<int>("batch_size", f.batch_size, c.batch_size);
    c.max_epochs = run.get<int>("max_epochs", f.epochs, c.max_epochs);
    c.patience = run.get<int>("patience", f.patience, c.patience);
    c.seed = run.seed;
    nn::validate(c);
    return c;
}

inline nn::ArchitectureConfig resolve_architecture(Run& run) {
    // a partial object in the config overrides only the keys it names
    json a = json(nn::ArchitectureConfig{});
    const json given = run.get<json>("architecture", Flag<json>{}, json::object());
    if (!given.is_object()) throw ValidationError("architecture must be a JSON object");
    try {
        a.merge_patch(given);
        auto arch = a.get<nn::ArchitectureConfig>();
        nn::validate(arch);
        return arch;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("architecture: ") + e.what());
    }
}

inline json split_json(const DatasetSplit& sp, std::span<const Sample> samples) {
    auto rows = [&](const std::vector<std::size_t>& idx) {
        std::vector<std::size_t> r;
        for (auto i : idx) r.push_back(samples[i].source_row);
        return r;
    };
    return {{"seed", sp.seed},          {"n", samples.size()},          {"train", sp.train},
            {"val", sp.val},            {"test", sp.test},              {"train_rows", rows(sp.train)},
            {"val_rows", rows(sp.val)}, {"test_rows", rows(sp.test)}};
}

inline std::vector<Sample> load_dataset(Run& run, const std::string& path) {
    auto samples = read_dataset_cache(run.read_input(path), path);
    for (const auto& s : samples)
        if (!s.target_delta_db) throw MissingPrerequisiteError(path + ": samples carry no targets; extract from measurements");
    return samples;
}

inline void cmd_train(Run& run, const TrainFlags& f) {
    const std::string dataset = run.require("dataset", f.dataset);
    const nn::TrainConfig cfg = resolve_train_config(run, f);
    const nn::ArchitectureConfig arch = resolve_architecture(run);
    run.log_settings();
    const auto samples = load_dataset(run, dataset);
    const DatasetSplit sp = split_dataset(samples, run.seed);
    run.write("split.json", split_json(sp, samples).dump() + "\n");
    const auto tr = gather<std::size_t>(samples, sp.train);
    const auto va = gather<std::size_t>(samples, sp.val);
    std::string history = "epoch,train_loss_db2,val_loss_db2\n";
    const auto res = nn::train(tr, va, arch, cfg, [&](int e, double t, double v) {
        run.out << "epoch " << e << "  train " << format_double(t, 4) << "  val " << format_double(v, 4) << " dB^2\n";
        run.out.flush();
        history += std::to_string(e) + "," + format_double(t, 6) + "," + format_double(v, 6) + "\n";
    });
    run.write("checkpoint.json", nn::checkpoint_to_json(res.checkpoint));
    run.write("history.csv", history);
    const auto& meta = res.checkpoint.train_meta;
    const double best = meta.best_epoch >= 1 ? meta.val_loss.at(static_cast<std::size_t>(meta.best_epoch - 1)) : NAN;
    run.out << "best epoch " << meta.best_epoch << " of " << meta.epochs_run << ", validation RMSE "
            << detail::fmt2(std::sqrt(best)) << " dB\n";
}

inline void cmd_predict(Run& run, const Flag<std::string>& bundle_f, const Flag<std::string>& meas_f,
                        const Flag<std::string>& model_f, const Flag<std::string>& ckpt_f, const detail::ChannelFlags& ch) {
    const std::string bundle = run.require("bundle", bundle_f);
    const std::string meas = run.require("measurements", meas_f);
    const auto ckpt = run.optional_path("checkpoint", ckpt_f);
    const std::string model = run.get<std::string>("model", model_f, ckpt ? "dragon" : "uma-b");
    const ChannelParams cp = ch.resolve(run);
    run.log_settings();
    const Scenario s = load_bundle_text(run.read_input(bundle), bundle);
    const auto pred = detail::make_predictor(model, ckpt, cp, run);
    const auto ms = detail::load_measurement_file(run, meas, s);
    const auto v = detail::predict_measurements(s, *pred, ms.rows, run.jobs);
    std::string csv = "lat,lon,alt_m,cell_id,rsrp_dbm\n";
    for (std::size_t i = 0; i < v.size(); ++i) csv += ms.keys[i] + "," + format_double(v[i], 3) + "\n";
    run.write("predictions.csv", csv);
    run.out << "predicted " << v.size() << " positions with " << pred->name() << " into "
            << run.path("predictions.csv").string() << "\n";
}

struct RemFlags {
    Flag<std::string> bundle, model, checkpoint, cells;
    Flag<double> resolution, rx_height;
    Flag<bool> outdoor_only;
};

inline void cmd_rem(Run& run, const RemFlags& f, const detail::ChannelFlags& ch) {
    const std::string bundle = run.require("bundle", f.bundle);
    const auto ckpt = run.optional_path("checkpoint", f.checkpoint);
    const std::string model = run.get<std::string>("model", f.model, ckpt ? "dragon" : "uma-b");
    const double res = run.get<double>("resolution", f.resolution, kDefaultRemResolutionM);
    const double rx_h = run.get<double>("rx_height", f.rx_height, kDefaultReceiverHeightM);
    const bool outdoor = run.get<bool>("outdoor_only", f.outdoor_only, false);
    const std::string cells_s = run.get<std::string>("cells", f.cells, "");
    const ChannelParams cp = ch.resolve(run);
    run.log_settings();
    const Scenario s = load_bundle_text(run.read_input(bundle), bundle);
    std::vector<std::string> ids = detail::split_list(cells_s);
    if (ids.empty())
        for (const auto& c : s.cells()) ids.push_back(c.id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    for (const auto& id : ids) dragon::detail::require_eirp(s.cell(id));
    const auto pred = detail::make_predictor(model, ckpt, cp, run);
    const REMGrid g = generate_rem(s, *pred, ids, res, rx_h, outdoor, run.jobs);
    run.write("rem.csv", rem_csv(g, s));
    for (const auto& [id, layer] : g.layers) run.write("heatmap_" + id + ".pgm", heatmap_pgm(g, layer));
    std::map<std::string, std::vector<std::string>> groups;
    for (const auto& id : ids) groups[s.cell(id).mno].push_back(id);
    run.write("best_server.csv", best_server_csv(g, best_server(g, groups)));
    run.out << "REM " << g.rows << " x " << g.cols << " at " << detail::fmt2(res) << " m with " << pred->name() << " for "
            << ids.size() << " cells into " << run.out_dir.string() << "\n";
}

struct EvalFlags {
    Flag<std::string> bundle, measurements, models, checkpoint, predictions, split, subset;
};

inline void cmd_evaluate(Run& run, const EvalFlags& f, const detail::ChannelFlags& ch) {
    const std::string bundle = run.require("bundle", f.bundle);
    const std::string meas = run.require("measurements", f.measurements);
    const auto ckpt = run.optional_path("checkpoint", f.checkpoint);
    const auto files = detail::split_list(run.get<std::string>("predictions", f.predictions, ""));
    const auto models = detail::split_list(run.get<std::string>("models", f.models, files.empty() ? "uma-b" : ""));
    const auto split = run.optional_path("split", f.split);
    const std::string subset = run.get<std::string>("subset", f.subset, split ? "test" : "all");
    const ChannelParams cp = ch.resolve(run);
    run.log_settings();
    if (models.empty() && files.empty()) throw ValidationError("nothing to evaluate: give --models or --predictions");
    if (subset != "all" && subset != "train" && subset != "val" && subset != "test")
        throw ValidationError("subset must be all, train, val or test");
    if (subset != "all" && !split) throw MissingPrerequisiteError("--subset " + subset + " needs --split (from 'dragon train')");

    const Scenario s = load_bundle_text(run.read_input(bundle), bundle);
    auto all = detail::load_measurement_file(run, meas, s);
    detail::LoadedMeasurements ms;
    if (split) {
        const json sj = dragon::detail::parse_json(run.read_input(*split), *split);
        std::set<std::size_t> keep;
        if (subset != "all") {
            const auto it = sj.find(subset + "_rows");
            if (it == sj.end()) throw ParseError(*split + ": missing '" + subset + "_rows'");
            for (const auto& r : *it) keep.insert(r.get<std::size_t>());
        }
        for (std::size_t i = 0; i < all.rows.size(); ++i)
            if (subset == "all" || keep.count(all.source_rows[i])) {
                ms.rows.push_back(all.rows[i]);
                ms.source_rows.push_back(all.source_rows[i]);
                ms.keys.push_back(all.keys[i]);
            }
    } else {
        ms = std::move(all);
    }
    if (ms.rows.empty()) throw InsufficientDataError("no measurements in subset '" + subset + "'");

    std::vector<std::pair<std::string, std::vector<double>>> preds;
    std::vector<bool> usable(ms.rows.size(), true);
    for (const auto& name : models) {
        if (name == "dragon") {
            const auto p = detail::make_predictor(name, ckpt, cp, run);
            const auto& dp = static_cast<const DragonPredictor&>(*p);
            std::vector<std::size_t> local(ms.rows.size());
            for (std::size_t i = 0; i < local.size(); ++i) local[i] = i;
            const auto samples = extract_samples(s, ms.rows, cp, run.jobs, local);
            const auto v = dp.predict_samples(s, samples);
            std::vector<double> full(ms.rows.size(), NAN);
            std::vector<bool> seen(ms.rows.size(), false);
            for (std::size_t k = 0; k < samples.size(); ++k) {
                full[samples[k].source_row] = v[k];
                seen[samples[k].source_row] = true;
            }
            for (std::size_t i = 0; i < seen.size(); ++i) usable[i] = usable[i] && seen[i];
            preds.emplace_back(name, std::move(full));
        } else {
            const auto p = detail::make_predictor(name, ckpt, cp, run);
            preds.emplace_back(name, detail::predict_measurements(s, *p, ms.rows, run.jobs));
        }
    }
    for (const auto& file : files) {
        run.add_input(file);
        const std::string text = io::read_file(file);
        const auto lines = io::lines(text);
        if (lines.empty() || io::trim(lines[0]) != "lat,lon,alt_m,cell_id,rsrp_dbm")
            throw ParseError(file + ":1: expected header 'lat,lon,alt_m,cell_id,rsrp_dbm'");
        std::multimap<std::string, double> by_key;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            const auto line = io::trim(lines[i]);
            if (line.empty()) continue;
            const auto cut = line.rfind(',');
            const auto v = io::parse_double(line.substr(cut + 1));
            if (cut == std::string_view::npos || !v) throw ParseError(file + ":" + std::to_string(i + 1) + ": bad row");
            by_key.emplace(std::string(line.substr(0, cut)), *v);
        }
        std::vector<double> v(ms.rows.size());
        for (std::size_t i = 0; i < ms.rows.size(); ++i) {
            const auto it = by_key.find(ms.keys[i]);
            if (it == by_key.end())
                throw ConsistencyError(file + ": no prediction for measurement row " + std::to_string(ms.source_rows[i] + 2));
            v[i] = it->second;
            by_key.erase(it);
        }
        std::string name = detail::stem(file);
        for (const auto& [n, _] : preds)
            if (n == name) name += "_" + std::to_string(preds.size());
        preds.emplace_back(name, std::move(v));
    }

    const auto dropped = std::count(usable.begin(), usable.end(), false);
    if (dropped > 0) log::warn(std::to_string(dropped) + " measurements rejected by feature extraction are excluded");
    std::vector<double> measured;
    for (std::size_t i = 0; i < ms.rows.size(); ++i)
        if (usable[i]) measured.push_back(ms.rows[i].rsrp_dbm);

    json report;
    report["subset"] = subset;
    report["n"] = measured.size();
    report["models"] = json::object();
    std::ostringstream table;
    table << std::left << std::setw(16) << "model" << std::right << std::setw(8) << "n" << std::setw(10) << "RMSE_dB"
          << std::setw(10) << "MAE_dB" << std::setw(10) << "bias_dB" << "\n";
    for (const auto& [name, v] : preds) {
        std::vector<double> p;
        for (std::size_t i = 0; i < v.size(); ++i)
            if (usable[i]) p.push_back(v[i]);
        const EvalReport r = evaluate(p, measured);
        table << std::left << std::setw(16) << name << std::right << std::setw(8) << r.n << std::setw(10)
              << detail::fmt2(r.rmse_db) << std::setw(10) << detail::fmt2(r.mae_db) << std::setw(10)
              << detail::fmt2(r.bias_db) << "\n";
        report["models"][name] = {{"rmse_db", r.rmse_db}, {"mae_db", r.mae_db}, {"bias_db", r.bias_db}, {"n", r.n}};
        run.write("ecdf_" + name + ".csv", ecdf_csv(r));
    }
    run.write("evaluation.txt", table.str());
    run.write("evaluation.json", report.dump(2) + "\n");
    run.out << table.str();
}

struct SearchFlags {
    Flag<std::string> dataset;
    Flag<int> trials, epochs, patience;
};

/// Seeded random search over learning rate and layer widths, scored on the validation split.
inline void cmd_search(Run& run, const SearchFlags& f) {
    const std::string dataset = run.require("dataset", f.dataset);
    const int trials = run.get<int>("trials", f.trials, kDefaultSearchTrials);
    const int epochs = run.get<int>("search_epochs", f.epochs, kDefaultSearchEpochs);
    const int patience = run.get<int>("patience", f.patience, nn::TrainConfig{}.patience);
    const nn::ArchitectureConfig base = resolve_architecture(run);
    run.log_settings();
    if (trials < 1) throw ValidationError("trials must be >= 1");
    const auto samples = load_dataset(run, dataset);
    const DatasetSplit sp = split_dataset(samples, run.seed);
    const auto tr = gather<std::size_t>(samples, sp.train);
    const auto va = gather<std::size_t>(samples, sp.val);

    Rng rng(run.seed ^ 0x5ea7c4ULL);
    json results = json::array();
    std::optional<nn::ModelCheckpoint> best;
    double best_loss = INFINITY;
    for (int t = 0; t < trials; ++t) {
        nn::TrainConfig cfg;
        cfg.learning_rate = std::pow(10.0, rng.uniform(-4.0, -2.0));
        cfg.max_epochs = epochs;
        cfg.patience = patience;
        cfg.seed = run.seed + static_cast<std::uint64_t>(t);
        nn::ArchitectureConfig arch = base;
        const double scale = std::array{0.5, 1.0, 2.0}[rng.below(3)];
        for (auto& w : arch.feature_nn) w = std::max(4, static_cast<int>(std::lround(w * scale)));
        for (auto& w : arch.prediction_nn) w = std::array{8, 16, 32}[rng.below(3)];
        arch.cnn_flatten_out = std::array{16, 32, 64}[rng.below(3)];
        const auto res = nn::train(tr, va, arch, cfg);
        const auto& meta = res.checkpoint.train_meta;
        const double loss = meta.val_loss.at(static_cast<std::size_t>(meta.best_epoch - 1));
        run.out << "trial " << t + 1 << "/" << trials << "  lr " << std::setprecision(3) << cfg.learning_rate
                << "  feature_nn x" << scale << "  pred " << arch.prediction_nn.front() << "  flatten "
                << arch.cnn_flatten_out << "  val RMSE " << detail::fmt2(std::sqrt(loss)) << " dB\n";
        run.out.flush();
        results.push_back({{"trial", t + 1},
                           {"learning_rate", cfg.learning_rate},
                           {"architecture", arch},
                           {"best_epoch", meta.best_epoch},
                           {"val_loss_db2", loss}});
        if (loss < best_loss) {
            best_loss = loss;
            best = res.checkpoint;
        }
    }
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < results.size(); ++i)
        if (results[i]["val_loss_db2"].get<double>() == best_loss) {
            best_i = i;
            break;
        }
    run.write("search.json", json{{"trials", results}, {"best", results[best_i]}}.dump(2) + "\n");
    run.write("checkpoint.json", nn::checkpoint_to_json(*best));
    run.out << "best trial " << best_i + 1 << " with validation RMSE " << detail::fmt2(std::sqrt(best_loss)) << " dB\n";
}

/// Parses and runs one command line; returns the process exit code.
inline int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Radio environment maps from geodata and drive-test measurements", "dragon"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(1);
    app.fallthrough(false);

    std::vector<std::unique_ptr<Run>> runs;
    auto sub = [&](const std::string& name, const std::string& help) {
        auto* sc = app.add_subcommand(name, help);
        runs.push_back(std::make_unique<Run>(name, out, err));
        runs.back()->attach(sc);
        return std::pair{sc, runs.back().get()};
    };
    auto path_opt = [](CLI::App* sc, const std::string& name, Flag<std::string>& f, const std::string& help) {
        f.opt = sc->add_option(name, f.value, help);
    };
    std::function<void()> action;

    Flag<std::string> i_scen, i_terr, i_heights;
    auto [ingest, r_ingest] = sub("ingest", "Validate a scenario and terrain into a bundle");
    path_opt(ingest, "--scenario", i_scen, "Scenario JSON (bbox, buildings, cells)");
    path_opt(ingest, "--terrain", i_terr, "Terrain ESRI ASCII grid");
    path_opt(ingest, "--heights", i_heights, "Optional height raster for unannotated buildings");
    ingest->callback([&, r = r_ingest] { action = [&, r] { cmd_ingest(*r, i_scen, i_terr, i_heights); }; });

    Flag<std::string> fe_bundle, fe_meas;
    detail::ChannelFlags fe_ch;
    auto [fit, r_fit] = sub("fit-eirp", "Fit each cell's EIRP from measurements");
    path_opt(fit, "--bundle", fe_bundle, "Scenario bundle from ingest");
    path_opt(fit, "--measurements", fe_meas, "Measurement CSV (lat,lon,alt_m,cell_id,rsrp_dbm)");
    fe_ch.attach(fit);
    fit->callback([&, r = r_fit] { action = [&, r] { cmd_fit_eirp(*r, fe_bundle, fe_meas, fe_ch); }; });

    SynthFlags sf;
    auto [synth, r_synth] = sub("synth", "Generate a synthetic city with measurements and ground truth");
    sf.buildings.opt = synth->add_option("--buildings", sf.buildings.value, "Number of buildings");
    sf.cells.opt = synth->add_option("--cells", sf.cells.value, "Number of cells");
    sf.measurements.opt = synth->add_option("--measurements", sf.measurements.value, "Number of measurements");
    sf.sigma.opt = synth->add_option("--sigma", sf.sigma.value, "Measurement noise standard deviation (dB)");
    sf.width.opt = synth->add_option("--width", sf.width.value, "Area width (m)");
    sf.height.opt = synth->add_option("--height", sf.height.value, "Area height (m)");
    synth->footer("Every synth parameter can also be set in --config by its field name, e.g. footprint_min_m.");
    synth->callback([&, r = r_synth] { action = [&, r] { cmd_synth(*r, sf); }; });

    Flag<std::string> ex_bundle, ex_meas;
    detail::ChannelFlags ex_ch;
    auto [extract, r_extract] = sub("extract", "Extract features, images and targets per measurement");
    path_opt(extract, "--bundle", ex_bundle, "Bundle with fitted EIRPs");
    path_opt(extract, "--measurements", ex_meas, "Measurement CSV");
    ex_ch.attach(extract);
    extract->callback([&, r = r_extract] { action = [&, r] { cmd_extract(*r, ex_bundle, ex_meas, ex_ch); }; });

    TrainFlags tf;
    auto [train, r_train] = sub("train", "Train the correction network on an extracted dataset");
    path_opt(train, "--dataset", tf.dataset, "dataset.jsonl from extract");
    tf.learning_rate.opt = train->add_option("--learning-rate", tf.learning_rate.value, "Adam learning rate");
    tf.weight_decay.opt = train->add_option("--weight-decay", tf.weight_decay.value, "L2 weight decay");
    tf.batch_size.opt = train->add_option("--batch-size", tf.batch_size.value, "Mini-batch size");
    tf.epochs.opt = train->add_option("--max-epochs", tf.epochs.value, "Epoch budget");
    tf.patience.opt = train->add_option("--patience", tf.patience.value, "Early-stopping patience (<= 0 disables)");
    train->footer("The architecture can be overridden with an 'architecture' object in --config.");
    train->callback([&, r = r_train] { action = [&, r] { cmd_train(*r, tf); }; });

    Flag<std::string> p_bundle, p_meas, p_model, p_ckpt;
    detail::ChannelFlags p_ch;
    auto [predict, r_predict] = sub("predict", "Predict RSRP at measurement positions");
    path_opt(predict, "--bundle", p_bundle, "Bundle with fitted EIRPs");
    path_opt(predict, "--measurements", p_meas, "CSV whose positions are predicted (rsrp column ignored)");
    path_opt(predict, "--model", p_model, "friis | two-ray | nakagami | uma-b | winner-c2 | obstacle | dragon");
    path_opt(predict, "--checkpoint", p_ckpt, "Checkpoint for the dragon model");
    p_ch.attach(predict);
    predict->callback([&, r = r_predict] { action = [&, r] { cmd_predict(*r, p_bundle, p_meas, p_model, p_ckpt, p_ch); }; });

    RemFlags rf;
    detail::ChannelFlags rem_ch;
    auto [rem, r_rem] = sub("rem", "Generate radio environment map layers and the best-server map");
    path_opt(rem, "--bundle", rf.bundle, "Bundle with fitted EIRPs");
    path_opt(rem, "--model", rf.model, "Predictor name (default dragon with --checkpoint, else uma-b)");
    path_opt(rem, "--checkpoint", rf.checkpoint, "Checkpoint for the dragon model");
    path_opt(rem, "--cells", rf.cells, "Comma-separated cell ids (default: all)");
    rf.resolution.opt = rem->add_option("--resolution", rf.resolution.value, "Grid resolution (m, default 10)");
    rf.rx_height.opt = rem->add_option("--rx-height", rf.rx_height.value, "Receiver height above ground (m, default 1.5)");
    rf.outdoor_only.opt = rem->add_flag("--outdoor-only", rf.outdoor_only.value, "Mark grid cells inside buildings as nan");
    rem_ch.attach(rem);
    rem->callback([&, r = r_rem] { action = [&, r] { cmd_rem(*r, rf, rem_ch); }; });

    EvalFlags ef;
    detail::ChannelFlags ev_ch;
    auto [evaluate_sc, r_eval] = sub("evaluate", "Compare predictors against measured RSRP");
    path_opt(evaluate_sc, "--bundle", ef.bundle, "Bundle with fitted EIRPs");
    path_opt(evaluate_sc, "--measurements", ef.measurements, "Measurement CSV");
    path_opt(evaluate_sc, "--models", ef.models,
             "Comma list of friis, two-ray, nakagami, uma-b, winner-c2, obstacle, dragon (default uma-b)");
    path_opt(evaluate_sc, "--checkpoint", ef.checkpoint, "Checkpoint for the dragon model");
    path_opt(evaluate_sc, "--predictions", ef.predictions, "Comma list of prediction CSVs to score as well");
    path_opt(evaluate_sc, "--split", ef.split, "split.json from train");
    path_opt(evaluate_sc, "--subset", ef.subset, "all | train | val | test (default test with --split)");
    ev_ch.attach(evaluate_sc);
    evaluate_sc->callback([&, r = r_eval] { action = [&, r] { cmd_evaluate(*r, ef, ev_ch); }; });

    SearchFlags shf;
    auto [search, r_search] = sub("search", "Random search over learning rate and layer widths");
    path_opt(search, "--dataset", shf.dataset, "dataset.jsonl from extract");
    shf.trials.opt = search->add_option("--trials", shf.trials.value, "Number of trials (default 8)");
    shf.epochs.opt = search->add_option("--search-epochs", shf.epochs.value, "Epochs per trial (default 5)");
    shf.patience.opt = search->add_option("--patience", shf.patience.value, "Early-stopping patience");
    search->callback([&, r = r_search] { action = [&, r] { cmd_search(*r, shf); }; });

    std::vector<std::string> args(argv.rbegin(), argv.rend());
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    Run* active = nullptr;
    for (auto& r : runs)
        if (app.got_subcommand(r->command())) active = r.get();
    try {
        detail::WarningCounter warnings(err);
        active->begin();
        action();
        active->write_manifest("ok");
        return 0;
    } catch (const Error& e) {
        err << "dragon " << active->command() << ": " << e.what() << "\n";
        if (!active->out_dir.empty()) try {
                active->write_manifest("failed", e.what());
            } catch (const std::exception&) {
            }
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        err << "dragon " << active->command() << ": " << e.what() << "\n";
        return 3;
    }
}

inline int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace dragon::cli
