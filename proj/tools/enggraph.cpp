// enggraph command-line entry point.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "enggraph/aerograph.hpp"
#include "enggraph/error.hpp"
#include "enggraph/insight.hpp"
#include "enggraph/io.hpp"
#include "enggraph/models.hpp"
#include "enggraph/modesynth.hpp"
#include "enggraph/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace enggraph;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct Options {
    std::string command;
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    int workers = 1;
};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json load_config(const Options& o) {
    if (o.config.empty()) return json::object();
    if (!fs::exists(o.config)) throw ConfigError("config file not found: " + o.config);
    try {
        json j = json::parse(io::read_text(o.config));
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

std::string input_path(const json& cfg, const char* key) {
    if (!cfg.contains(key) || !cfg.at(key).is_string()) throw ConfigError(std::string("config needs a '") + key + "' path");
    const std::string p = cfg.at(key).get<std::string>();
    if (!fs::exists(p)) throw ConfigError(std::string(key) + " path does not exist: " + p);
    return p;
}

std::string hash_input(const fs::path& p) {
    return fs::is_directory(p) ? io::hash_tree(p) : io::sha256_hex(io::read_text(p));
}

// Output directory staged next to the target and swapped in on success.
class RunDir {
public:
    explicit RunDir(const std::string& out) : final_(out) {
        if (out.empty()) throw ConfigError("--out is required");
        stage_ = final_;
        stage_ += ".partial";
        fs::remove_all(stage_);
        fs::create_directories(stage_);
    }
    ~RunDir() {
        if (!committed_) {
            std::error_code ec;
            fs::remove_all(stage_, ec);
        }
    }
    const fs::path& path() const { return stage_; }
    void write(const std::string& name, const std::string& contents) const { io::write_atomic(stage_ / name, contents); }

    void commit(const json& resolved, const std::map<std::string, std::string>& inputs) {
        json in = json::object();
        std::string acc;
        for (const auto& [k, p] : inputs) {
            const std::string h = hash_input(p);
            in[k] = {{"path", p}, {"sha256", h}};
            acc += k + '\0' + h + '\n';
        }
        write("config.json", dump(resolved));
        write("inputs.json", dump({{"inputs", in}, {"manifest_sha256", io::sha256_hex(acc)}}));
        fs::remove_all(final_);
        if (final_.has_parent_path()) fs::create_directories(final_.parent_path());
        fs::rename(stage_, final_);
        committed_ = true;
    }

private:
    fs::path final_, stage_;
    bool committed_ = false;
};

void reject_extra(const json& cfg, std::initializer_list<const char*> keys, const std::string& what) {
    io::check_keys(cfg, keys, what);
}

json graph_json(const EngineeringGraph& g) {
    return json{{"node_type", g.node_type}, {"src", g.src},          {"dst", g.dst},
                {"edge_type", g.edge_type}, {"x", g.x.storage()},    {"r", g.r.storage()},
                {"node_features", g.x.cols()}, {"edge_features", g.r.cols()}};
}

json label_json(const std::optional<ModeLabel>& l) {
    if (!l) return nullptr;
    return json{{"level1", level1_names()[l->level1]}, {"level2", level2_names()[l->level2]}};
}

// ---------------------------------------------------------------------------

int synth_modes(const Options& o) {
    json cfg = load_config(o);
    ModeDatasetConfig c = cfg.empty() ? default_mode_config() : mode_config_from_json(cfg);
    if (o.seed) c.seed = *o.seed;
    spdlog::info("synthesizing mode dataset (seed {})", c.seed);
    const ModeDataset ds = build_mode_dataset(c);
    RunDir run(o.out);
    write_mode_dataset(ds, run.path());
    run.commit(to_json(c), {});
    spdlog::info("{} samples written to {}", ds.samples.size(), o.out);
    return kOk;
}

int synth_aero(const Options& o) {
    json cfg = load_config(o);
    AeroDatasetConfig c = cfg.empty() ? AeroDatasetConfig{} : aero_config_from_json(cfg);
    if (o.seed) c.seed = *o.seed;
    spdlog::info("synthesizing aero dataset: {} per family, {} nodes", c.per_family, c.nodes);
    const AeroDataset ds = build_aero_dataset(c, o.workers);
    RunDir run(o.out);
    write_aero_dataset(ds, run.path());
    run.commit(to_json(c), {});
    spdlog::info("{} samples written to {}", ds.samples.size(), o.out);
    return kOk;
}

bool is_aero_dataset(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.json")) throw ConfigError("not a dataset directory: " + dir.string());
    const json m = json::parse(io::read_text(dir / "manifest.json"));
    return m.value("format", "").rfind("enggraph-aero", 0) == 0;
}

int build_graphs(const Options& o) {
    json cfg = load_config(o);
    reject_extra(cfg, {"dataset", "export"}, "build-graphs config");
    const std::string data = input_path(cfg, "dataset");
    RunDir run(o.out);
    json out = json::array();
    if (is_aero_dataset(data)) {
        const AeroDataset ds = read_aero_dataset(data);
        std::vector<std::string> ids = cfg.value("export", std::vector<std::string>{});
        std::vector<json> rows(ds.samples.size());
        for (std::size_t i = 0; i < ds.samples.size(); ++i) {
            const auto& s = ds.samples[i];
            const AeroGraphContext ctx = build_aero_context(s);
            rows[i] = {{"id", s.id},
                       {"split", split_name(ds.split[i])},
                       {"nodes", ctx.graph.node_count()},
                       {"edges", ctx.graph.edge_count()},
                       {"correspondence", s.correspondence}};
            if (std::find(ids.begin(), ids.end(), s.id) != ids.end()) rows[i]["graph"] = graph_json(ctx.graph);
        }
        for (auto& r : rows) out.push_back(std::move(r));
    } else {
        const ModeDataset ds = read_mode_dataset(data);
        const auto graphs = aggregate_dataset(ds);
        for (std::size_t i = 0; i < graphs.size(); ++i) {
            const auto& g = graphs[i];
            out.push_back({{"vehicle", g.vehicle_id},
                           {"mode", g.mode_id},
                           {"split", split_name(ds.split[i])},
                           {"label", label_json(g.label)},
                           {"scalars", g.scalars},
                           {"graph", graph_json(g.graph)}});
        }
        run.write("stats.json", dump(to_json(ds.stats)));
    }
    run.write("graphs.json", dump(out));
    run.commit(cfg, {{"dataset", data}});
    spdlog::info("{} graphs written to {}", out.size(), o.out);
    return kOk;
}

struct TrainSpec {
    std::string dataset;
    Baseline baseline = Baseline::Full;
    json model, loss, train;
};

TrainSpec train_spec(const json& cfg) {
    reject_extra(cfg, {"dataset", "baseline", "model", "loss", "train"}, "training config");
    TrainSpec t;
    t.dataset = input_path(cfg, "dataset");
    t.baseline = baseline_from_name(cfg.value("baseline", std::string("full")));
    t.model = cfg.value("model", json::object());
    t.loss = cfg.value("loss", json::object());
    t.train = cfg.value("train", json::object());
    return t;
}

int train_modes(const Options& o) {
    const json cfg = load_config(o);
    const TrainSpec t = train_spec(cfg);
    if (t.baseline == Baseline::MeshGraphNet) {
        spdlog::error("meshgraphnet baseline is not available");
        return kUsage;
    }
    ClassifierConfig mc = t.model.empty() ? ClassifierConfig{} : classifier_config_from_json(t.model);
    LossConfig lc = t.loss.empty() ? LossConfig{} : loss_config_from_json(t.loss);
    TrainConfig tc = train_config_from_json(t.train);
    if (o.seed) tc.seed = mc.seed = *o.seed;
    tc.workers = o.workers;
    const ModeDataset ds = read_mode_dataset(t.dataset);
    spdlog::info("training mode classifier ({})", baseline_name(t.baseline));
    auto ex = run_mode_experiment(ds, t.baseline, mc, lc, tc);

    RunDir run(o.out);
    save_classifier(ex.model, run.path() / "checkpoint",
                    {{"stats", to_json(ex.stats)}, {"baseline", baseline_name(t.baseline)}});
    json metrics{{"kind", "modes"},
                 {"baseline", baseline_name(t.baseline)},
                 {"test", to_json(ex.test)},
                 {"best_epoch", ex.train.best_epoch},
                 {"best_val_combined", ex.train.best_metric}};
    if (ex.target_test.count) metrics["target_test"] = to_json(ex.target_test);
    run.write("metrics.json", dump(metrics));
    run.write("curve.json", dump(to_json(ex.train)));
    run.write("confusion.csv", confusion_csv(ex.test));
    json resolved = cfg;
    resolved["model"] = to_json(mc);
    resolved["loss"] = to_json(lc);
    json tj = to_json(tc);
    tj.erase("workers");
    resolved["train"] = tj;
    run.commit(resolved, {{"dataset", t.dataset}});
    spdlog::info("test combined {:.4f} (L1 {:.4f}, L2 {:.4f})", ex.test.combined, ex.test.level1_accuracy,
                 ex.test.level2_accuracy);
    return kOk;
}

int train_aero(const Options& o) {
    const json cfg = load_config(o);
    const TrainSpec t = train_spec(cfg);
    if (t.baseline == Baseline::MeshGraphNet) {
        spdlog::error("meshgraphnet baseline is not available");
        return kUsage;
    }
    AeroNetConfig mc = t.model.empty() ? AeroNetConfig{} : aero_net_config_from_json(t.model);
    LossConfig lc = t.loss.empty() ? LossConfig{} : loss_config_from_json(t.loss);
    TrainConfig tc = train_config_from_json(t.train);
    if (o.seed) tc.seed = mc.seed = *o.seed;
    tc.workers = o.workers;
    const AeroDataset ds = read_aero_dataset(t.dataset);
    spdlog::info("training aero surrogate ({})", baseline_name(t.baseline));
    auto ex = run_aero_experiment(ds, t.baseline, mc, lc, tc);

    RunDir run(o.out);
    save_aero_net(ex.model, run.path() / "checkpoint", {{"c_ref", ds.c_ref}, {"baseline", baseline_name(t.baseline)}});
    json metrics{{"kind", "aero"},
                 {"baseline", baseline_name(t.baseline)},
                 {"test", to_json(ex.test)},
                 {"best_epoch", ex.train.best_epoch},
                 {"best_val_mean_r2", ex.train.best_metric}};
    run.write("metrics.json", dump(metrics));
    run.write("curve.json", dump(to_json(ex.train)));
    json resolved = cfg;
    resolved["model"] = to_json(mc);
    resolved["loss"] = to_json(lc);
    json tj = to_json(tc);
    tj.erase("workers");
    resolved["train"] = tj;
    run.commit(resolved, {{"dataset", t.dataset}});
    spdlog::info("test R2 pressure {:.4f}, wss {:.4f}", ex.test.r2_pressure, ex.test.r2_wss);
    return kOk;
}

std::string checkpoint_model(const fs::path& dir) {
    return read_checkpoint_architecture(dir).value("model", "");
}

FeatureStats checkpoint_stats(const fs::path& dir) {
    return feature_stats_from_json(read_checkpoint_architecture(dir).at("extra").at("stats"));
}

std::vector<StandardizedSample> standardized(const ModeDataset& ds, Split which, const FeatureStats& stats,
                                             bool labeled_only, std::vector<std::string>* ids = nullptr) {
    const auto graphs = aggregate_dataset(ds);
    std::vector<StandardizedSample> out;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        if (ds.split[i] != which || (labeled_only && !graphs[i].label)) continue;
        out.push_back(standardize(graphs[i], stats));
        if (ids) ids->push_back(graphs[i].vehicle_id + "/" + std::to_string(graphs[i].mode_id));
    }
    return out;
}

int eval(const Options& o) {
    const json cfg = load_config(o);
    reject_extra(cfg, {"checkpoint", "dataset", "split"}, "eval config");
    const std::string ck = input_path(cfg, "checkpoint"), data = input_path(cfg, "dataset");
    const Split which = split_from_name(cfg.value("split", std::string("test")));
    RunDir run(o.out);
    if (checkpoint_model(ck) == "mode-classifier") {
        ModeClassifier m = load_classifier(ck);
        const auto samples = standardized(read_mode_dataset(data), which, checkpoint_stats(ck), true);
        const ClassMetrics r = evaluate_classifier(m, samples);
        run.write("metrics.json", dump({{"kind", "modes"}, {"split", split_name(which)}, {"metrics", to_json(r)}}));
        run.write("confusion.csv", confusion_csv(r));
    } else {
        AeroGraphNetLite m = load_aero_net(ck);
        const AeroDataset ds = read_aero_dataset(data);
        const FieldMetrics r = evaluate_aero(m, ds, split_indices(ds.split, which), o.workers);
        run.write("metrics.json", dump({{"kind", "aero"}, {"split", split_name(which)}, {"metrics", to_json(r)}}));
    }
    run.commit(cfg, {{"checkpoint", ck}, {"dataset", data}});
    return kOk;
}

int explain(const Options& o) {
    const json cfg = load_config(o);
    reject_extra(cfg, {"checkpoint", "dataset", "sample", "target", "node"}, "explain config");
    const std::string ck = input_path(cfg, "checkpoint"), data = input_path(cfg, "dataset");
    const std::size_t index = cfg.value("sample", std::size_t{0});
    RunDir run(o.out);
    AttributionMap a;
    json meta;
    if (checkpoint_model(ck) == "mode-classifier") {
        ModeClassifier m = load_classifier(ck);
        const ModeDataset ds = read_mode_dataset(data);
        const auto graphs = aggregate_dataset(ds);
        if (index >= graphs.size()) throw ConfigError("sample index out of range");
        a = attribute(m, standardize(graphs[index], checkpoint_stats(ck)), cfg.value("target", std::string("predicted")));
        meta = {{"vehicle", graphs[index].vehicle_id}, {"mode", graphs[index].mode_id}, {"label", label_json(graphs[index].label)}};
    } else {
        AeroGraphNetLite m = load_aero_net(ck);
        const AeroDataset ds = read_aero_dataset(data);
        if (index >= ds.samples.size()) throw ConfigError("sample index out of range");
        std::optional<std::size_t> node;
        if (cfg.contains("node")) node = cfg.at("node").get<std::size_t>();
        a = attribute(m, ds.samples[index], cfg.value("target", std::string("pressure")), node);
        meta = {{"id", ds.samples[index].id}};
    }
    json j = to_json(a);
    j["sample"] = meta;
    run.write("attribution.json", dump(j));
    run.write("attribution.csv", attribution_csv(a));
    run.commit(cfg, {{"checkpoint", ck}, {"dataset", data}});
    return kOk;
}

int suggest_data(const Options& o) {
    const json cfg = load_config(o);
    reject_extra(cfg, {"checkpoint", "dataset", "split", "passes", "top_k"}, "suggest-data config");
    const std::string ck = input_path(cfg, "checkpoint"), data = input_path(cfg, "dataset");
    McConfig mc;
    mc.passes = cfg.value("passes", mc.passes);
    mc.top_k = cfg.value("top_k", std::size_t{10});
    mc.seed = o.seed.value_or(1);
    mc.workers = o.workers;
    RunDir run(o.out);
    std::vector<RankedCandidate> ranking;
    if (checkpoint_model(ck) == "mode-classifier") {
        ModeClassifier m = load_classifier(ck);
        const Split which = split_from_name(cfg.value("split", std::string("unlabeled")));
        std::vector<std::string> ids;
        const auto pool = standardized(read_mode_dataset(data), which, checkpoint_stats(ck), false, &ids);
        ranking = rank_data_candidates(m, pool, ids, mc);
    } else {
        AeroGraphNetLite m = load_aero_net(ck);
        const Split which = split_from_name(cfg.value("split", std::string("test")));
        const AeroDataset ds = read_aero_dataset(data);
        std::vector<AeroGraphSample> pool;
        for (std::size_t i : split_indices(ds.split, which)) pool.push_back(ds.samples[i]);
        ranking = rank_data_candidates(m, pool, mc);
    }
    run.write("ranking.json", dump(to_json(ranking, mc)));
    json resolved = cfg;
    resolved["passes"] = mc.passes;
    resolved["top_k"] = mc.top_k;
    resolved["seed"] = mc.seed;
    run.commit(resolved, {{"checkpoint", ck}, {"dataset", data}});
    return kOk;
}

std::string pct(double v) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(1);
    os << 100.0 * v;
    return os.str();
}

std::string fix4(double v) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << v;
    return os.str();
}

std::string pad(std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
}

int report(const Options& o) {
    const json cfg = load_config(o);
    reject_extra(cfg, {"runs"}, "report config");
    if (!cfg.contains("runs") || !cfg.at("runs").is_object() || cfg.at("runs").empty())
        throw ConfigError("report config needs a non-empty 'runs' object of label -> run directory");
    std::map<std::string, std::string> inputs;
    json modes = json::array(), aero = json::array();
    std::ostringstream txt;
    std::ostringstream mrows, arows;
    for (const auto& [label, path] : cfg.at("runs").items()) {
        const std::string dir = path.get<std::string>();
        if (!fs::exists(fs::path(dir) / "metrics.json")) throw ConfigError("no metrics.json in run " + dir);
        inputs["run:" + label] = (fs::path(dir) / "metrics.json").string();
        const json m = json::parse(io::read_text(fs::path(dir) / "metrics.json"));
        if (m.value("kind", "") == "modes") {
            const json& t = m.contains("target_test") ? m.at("target_test") : m.at("test");
            const double l1 = t.at("level1_accuracy"), l2 = t.at("level2_accuracy");
            const double comb = combined_score(l1, l2);
            modes.push_back({{"setting", label},
                             {"baseline", m.at("baseline")},
                             {"level1_accuracy", l1},
                             {"level2_accuracy", l2},
                             {"combined", comb},
                             {"consistency", t.at("consistency")},
                             {"count", t.at("count")}});
            mrows << pad(label, 28) << pad(pct(l1), 10) << pad(pct(l2), 10) << pct(comb) << "\n";
        } else {
            const json& t = m.at("test");
            const double p = t.at("r2_pressure"), w = t.at("r2_wss");
            aero.push_back({{"setting", label},
                            {"baseline", m.at("baseline")},
                            {"r2_pressure", p},
                            {"r2_wss", w},
                            {"mean_r2", 0.5 * (p + w)},
                            {"mae_pressure_pa", t.at("mae_pressure_pa")}});
            arows << pad(label, 28) << pad(fix4(p), 10) << pad(fix4(w), 10) << fix4(0.5 * (p + w)) << "\n";
        }
    }
    if (!modes.empty()) {
        txt << "Held-out target-vehicle test performance (%); combined = 0.4 L1 + 0.6 L2\n";
        txt << pad("Setting", 28) << pad("L1", 10) << pad("L2", 10) << "Combined\n" << mrows.str() << "\n";
    }
    if (!aero.empty()) {
        txt << "Surface field test R^2 (pooled over nodes and samples)\n";
        txt << pad("Setting", 28) << pad("Pressure", 10) << pad("WSS", 10) << "Mean\n" << arows.str() << "\n";
    }
    json comparisons = json::array();
    auto compare = [&](const json& rows, const char* base, const char* alt, const char* key, const char* what) {
        for (const auto& a : rows) {
            if (a.at("baseline") != base) continue;
            for (const auto& b : rows) {
                if (b.at("baseline") != alt) continue;
                const double d = a.at(key).get<double>() - b.at(key).get<double>();
                comparisons.push_back({{"comparison", what}, {"metric", key}, {"a", a.at("setting")},
                                       {"b", b.at("setting")}, {"delta", d}});
                txt << what << ": " << a.at("setting").get<std::string>() << " - " << b.at("setting").get<std::string>()
                    << " " << key << " = " << fix4(d) << "\n";
            }
        }
    };
    compare(modes, "full", "single-vehicle", "combined", "multi-vehicle vs single-vehicle");
    compare(aero, "full", "no-physics", "mean_r2", "physics vs no-physics");
    if (!comparisons.empty()) txt << "\n";
    txt << "meshgraphnet: not run\n";
    RunDir run(o.out);
    run.write("report.txt", txt.str());
    run.write("report.json", dump({{"classification", modes},
                                     {"fields", aero},
                                     {"comparisons", comparisons},
                                     {"not_run", {"meshgraphnet"}}}));
    run.commit(cfg, inputs);
    std::cout << txt.str();
    return kOk;
}

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("enggraph");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    const char* env = std::getenv("ENGGRAPH_LOG");
    const std::string level = env ? env : "info";
    if (level == "error") spdlog::set_level(spdlog::level::err);
    else if (level == "info") spdlog::set_level(spdlog::level::info);
    else if (level == "debug") spdlog::set_level(spdlog::level::debug);
    else throw ConfigError("ENGGRAPH_LOG must be error, info or debug");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"enggraph: physics-aware engineering graphs, mode classification and surface-field surrogates"};
    app.require_subcommand(1);
    Options o;
    const unsigned hw = std::thread::hardware_concurrency();
    o.workers = hw ? static_cast<int>(hw) : 1;
    std::uint64_t seed = 0;
    const std::map<std::string, int (*)(const Options&)> commands{
        {"synth-modes", synth_modes}, {"synth-aero", synth_aero},     {"build-graphs", build_graphs},
        {"train-modes", train_modes}, {"train-aero", train_aero},     {"eval", eval},
        {"explain", explain},         {"suggest-data", suggest_data}, {"report", report}};
    std::map<std::string, CLI::App*> subs;
    for (const auto& [name, fn] : commands) {
        CLI::App* s = app.add_subcommand(name);
        s->add_option("--config", o.config, "JSON config file");
        s->add_option("--seed", seed, "random seed");
        s->add_option("--out", o.out, "run directory")->required();
        s->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
        subs[name] = s;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }
    for (const auto& [name, s] : subs) {
        if (!s->parsed()) continue;
        o.command = name;
        if (s->count("--seed")) o.seed = seed;
    }
    try {
        setup_logging();
        spdlog::debug("command {} with {} workers", o.command, o.workers);
        return commands.at(o.command)(o);
    } catch (const ConfigError& e) {
        std::cerr << "enggraph: " << e.what() << "\n";
        return kUsage;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "enggraph: config: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "enggraph: " << e.what() << "\n";
        return kRuntime;
    }
}
