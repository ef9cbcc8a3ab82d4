// Command-line front end: synth, train, search, eval, cost, space.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "vitnas/config.hpp"
#include "vitnas/dataset.hpp"
#include "vitnas/error.hpp"
#include "vitnas/metrics.hpp"
#include "vitnas/search.hpp"
#include "vitnas/serialize.hpp"
#include "vitnas/space.hpp"
#include "vitnas/supernet.hpp"
#include "vitnas/trainer.hpp"

#ifndef VITNAS_VERSION
#define VITNAS_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace vitnas;

namespace {

using Real = float;

std::string g_argv;

fs::path output_dir(const std::string& flag, const RunConfig* cfg) {
    if (!flag.empty()) {
        return flag;
    }
    if (const char* env = std::getenv("VITNAS_OUTPUT_DIR"); env && *env) {
        return env;
    }
    return cfg ? fs::path(cfg->output_dir) : fs::path("runs");
}

fs::path prepare_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
    }
    return dir;
}

void write_manifest(const fs::path& dir, const std::string& command, const Json& config, std::uint64_t seed,
                    const Json& extra = Json::object()) {
    Json m;
    m["command"] = command;
    m["argv"] = g_argv;
    m["version"] = VITNAS_VERSION;
    m["seed"] = seed;
    m["config"] = config;
    m["extra"] = extra;
    write_json_file(dir / ("manifest_" + command + ".json"), m);
}

Dataset load_data(const std::string& path, const char* what) {
    if (path.empty()) {
        throw ConfigError(std::string("config: data.") + what + " is not set");
    }
    return read_dataset(path);
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
    std::string out;
    SynthOptions opts;
};

int cmd_synth(const SynthArgs& a) {
    const Dataset d = synthesize(a.opts);
    write_dataset(a.out, d);
    std::cout << "wrote " << d.size() << " samples (" << d.height << "x" << d.width << "x" << d.channels << ", "
              << d.num_classes << " classes) to " << a.out << "\n";
    return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string sharing;
    std::string resume;
    std::string out_dir;
    int stop_after = 0;
};

int cmd_train(const TrainArgs& a) {
    RunConfig cfg = load_run_config(a.config);
    if (!a.sharing.empty()) {
        cfg.sharing = parse_store_kind(a.sharing);
        if (cfg.sharing == StoreKind::standalone) {
            throw ConfigError("--sharing must be entangled or disjoint");
        }
    }
    const fs::path dir = prepare_dir(output_dir(a.out_dir, &cfg));
    const Dataset train = load_data(cfg.data.train, "train");
    const Dataset val = cfg.data.val.empty() ? Dataset{} : read_dataset(cfg.data.val);
    const NetGeometry geom = train.geometry(cfg.data.patch);

    std::unique_ptr<ParamStore<Real>> store;
    std::optional<TrainState> state;
    if (!a.resume.empty()) {
        auto loaded = load_checkpoint<Real>(a.resume);
        if (spec_hash(loaded.store->spec()) != spec_hash(cfg.space)) {
            throw ConfigError("checkpoint spec hash " + spec_hash(loaded.store->spec()) +
                              " does not match config spec hash " + spec_hash(cfg.space));
        }
        if (loaded.store->kind() != cfg.sharing) {
            throw ConfigError("checkpoint store is " + std::string(to_string(loaded.store->kind())) +
                              ", config asks for " + std::string(to_string(cfg.sharing)));
        }
        if (!(loaded.store->geometry() == geom)) {
            throw DataError("checkpoint geometry does not match the training data");
        }
        if (!loaded.state) {
            throw DataError("checkpoint '" + a.resume + "' has no train state to resume from");
        }
        store = std::move(loaded.store);
        state = loaded.state;
    } else {
        store = make_store<Real>(cfg.sharing, cfg.space, geom, cfg.init_seed);
        store->set_gelu_form(cfg.gelu);
    }

    Trainer<Real> trainer(*store, train, val.size() ? &val : nullptr, cfg.train);
    const fs::path log_path = dir / "train_log.jsonl";
    const fs::path epoch_path = dir / "epochs.jsonl";
    if (state) {
        trainer.restore(*state);
        truncate_lines(log_path, state->iteration);
        truncate_lines(epoch_path, static_cast<std::size_t>(state->epoch));
    }
    JsonlWriter iter_log(log_path, state.has_value());
    JsonlWriter epoch_log(epoch_path, state.has_value());
    trainer.on_iteration([&](const IterRecord& r) { iter_log.write(to_json(r)); });
    trainer.on_epoch([&](const EpochRecord& r) {
        epoch_log.write(to_json(r));
        std::cout << "epoch " << r.epoch << " mean loss " << r.mean_loss;
        for (const auto& p : r.probes) {
            std::cout << " " << p.name << "=" << p.accuracy;
        }
        std::cout << "\n";
    });
    write_manifest(dir, "train", to_json(cfg), cfg.train.seed,
                   {{"sharing", std::string(to_string(cfg.sharing))}, {"resume", a.resume}});

    const Json extra = {{"train_seed", cfg.train.seed}, {"sharing", std::string(to_string(cfg.sharing))}};
    int ran = 0;
    while (!trainer.done()) {
        trainer.run_epoch();
        ++ran;
        const int e = trainer.state().epoch;
        if (cfg.train.checkpoint_every > 0 && e % cfg.train.checkpoint_every == 0 && !trainer.done()) {
            save_checkpoint(dir / ("checkpoint_epoch" + std::to_string(e) + ".ckpt"), *store, trainer.state(), extra);
        }
        if (a.stop_after > 0 && ran >= a.stop_after && !trainer.done()) {
            save_checkpoint(dir / "checkpoint.ckpt", *store, trainer.state(), extra);
            std::cout << "stopped after " << ran << " epochs at iteration " << trainer.state().iteration << "\n";
            return 0;
        }
    }
    save_checkpoint(dir / "checkpoint.ckpt", *store, trainer.state(), extra);
    std::cout << "checkpoint: " << (dir / "checkpoint.ckpt").string() << "\n";
    return 0;
}

// ---- search ---------------------------------------------------------------

struct SearchArgs {
    std::string config;
    std::string checkpoint;
    std::string baseline;
    std::string out_dir;
};

int cmd_search(const SearchArgs& a) {
    const RunConfig cfg = load_run_config(a.config);
    const fs::path dir = prepare_dir(output_dir(a.out_dir, &cfg));
    auto loaded = load_checkpoint<Real>(a.checkpoint);
    const ParamStore<Real>& store = *loaded.store;
    if (spec_hash(store.spec()) != spec_hash(cfg.space)) {
        throw ConfigError("checkpoint spec hash " + spec_hash(store.spec()) + " does not match config spec hash " +
                          spec_hash(cfg.space));
    }
    const Dataset val = load_data(cfg.data.val, "val");
    if (!(val.geometry(cfg.data.patch) == store.geometry())) {
        throw DataError("validation data geometry does not match the checkpoint");
    }
    const FitnessFn fitness = supernet_fitness(store, val, cfg.search.eval_samples, cfg.search.eval_batch);
    const bool random = a.baseline == "random";
    if (!a.baseline.empty() && !random) {
        throw ConfigError("--baseline must be 'random'");
    }
    const std::string tag = random ? "random" : "evolve";
    const SearchResult r = random ? random_search(store.spec(), store.geometry(), cfg.search, cfg.search.budget(), fitness)
                                  : evolve(store.spec(), store.geometry(), cfg.search, fitness);

    JsonlWriter ledger(dir / ("candidates_" + tag + ".jsonl"));
    int gen = -1;
    std::size_t rank = 0;
    for (const auto& c : r.history) {
        rank = c.generation == gen ? rank + 1 : 0;
        gen = c.generation;
        ledger.write(to_json(c, store.geometry(), rank));
    }
    JsonlWriter gens(dir / ("generations_" + tag + ".jsonl"));
    for (const auto& g : r.generations) {
        gens.write(to_json(g));
    }
    const Candidate& best = r.best();
    write_arch_descriptor(dir / ("best_arch_" + tag + ".json"), best.arch, store.spec(), store.geometry(),
                          {{"fitness", best.fitness}, {"method", tag}, {"seed", cfg.search.seed}});
    write_manifest(dir, "search_" + tag, to_json(cfg), cfg.search.seed,
                   {{"checkpoint", a.checkpoint}, {"evaluations", r.evaluations}});
    std::cout << tag << ": " << r.history.size() << " candidates, " << r.evaluations << " evaluations, best "
              << arch_key(best.arch) << " fitness " << best.fitness << " params " << best.params << "\n";
    return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
    std::string config;
    std::string checkpoint;
    std::string arch;
    std::string mode = "inherited";
    std::string out_dir;
    int epochs = -1;
};

std::uint64_t store_digest(const ParamStore<Real>& store) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto* p : store.params()) {
        const auto d = p->value.data();
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(d.data()), d.size_bytes()), h);
        if (p->has_state()) {
            h = fnv1a64(std::string_view(reinterpret_cast<const char*>(p->m.data()), p->m.size() * sizeof(Real)), h);
        }
    }
    return h;
}

void dump_predictions(const fs::path& path, const std::string& mode, const Dataset& val,
                      const std::vector<int>& preds) {
    JsonlWriter w(path);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        w.write({{"mode", mode}, {"index", i}, {"label", val.labels[i]}, {"prediction", preds[i]}});
    }
}

int cmd_eval(const EvalArgs& a) {
    const RunConfig cfg = load_run_config(a.config);
    const fs::path dir = prepare_dir(output_dir(a.out_dir, &cfg));
    const ArchConfig arch = read_arch_descriptor(a.arch);
    const bool all = a.mode == "all";
    if (!all && a.mode != "inherited" && a.mode != "finetune" && a.mode != "scratch") {
        throw ConfigError("--mode must be inherited, finetune, scratch or all");
    }
    const Dataset val = load_data(cfg.data.val, "val");
    std::unique_ptr<ParamStore<Real>> store;
    if (all || a.mode != "scratch") {
        store = load_checkpoint<Real>(a.checkpoint).store;
        if (spec_hash(store->spec()) != spec_hash(cfg.space)) {
            throw ConfigError("checkpoint spec hash " + spec_hash(store->spec()) + " does not match config spec hash " +
                              spec_hash(cfg.space));
        }
    }
    try {
        cfg.space.check(arch);
    } catch (const ConfigError& e) {
        throw DataError(std::string("invalid arch descriptor: ") + e.what());
    }
    const NetGeometry geom = val.geometry(cfg.data.patch);

    Json report;
    report["arch"] = arch_key(arch);
    report["params"] = count_params(arch, geom);
    report["macs"] = count_flops(arch, geom);
    report["val_samples"] = val.size();
    Json rows = Json::array();

    if (all || a.mode == "inherited") {
        const std::uint64_t before = store_digest(*store);
        std::vector<int> preds;
        const Accuracy acc = evaluate_accuracy(*store, arch, val, cfg.train.eval_batch, 0, &preds);
        const bool unchanged = store_digest(*store) == before;
        dump_predictions(dir / "predictions_inherited.jsonl", "inherited", val, preds);
        rows.push_back({{"mode", "inherited"}, {"accuracy", acc.value()}, {"correct", acc.correct},
                        {"optimizer_steps", 0}, {"store_unchanged", unchanged}, {"uses_checkpoint_weights", true}});
    }
    if (all || a.mode == "finetune") {
        const Dataset train = load_data(cfg.data.train, "train");
        const int epochs = a.epochs >= 0 ? a.epochs : cfg.finetune_epochs;
        auto ft = finetune(*store, arch, train, val, cfg.train, epochs);
        std::vector<int> preds;
        const Accuracy acc = evaluate_accuracy(*ft.net, arch, val, cfg.train.eval_batch, 0, &preds);
        dump_predictions(dir / "predictions_finetune.jsonl", "finetune", val, preds);
        rows.push_back({{"mode", "finetune"}, {"epochs", epochs}, {"accuracy", acc.value()}, {"correct", acc.correct},
                        {"accuracy_before", ft.before}, {"uses_checkpoint_weights", true}});
    }
    if (all || a.mode == "scratch") {
        const Dataset train = load_data(cfg.data.train, "train");
        auto sr = train_standalone<Real>(cfg.space, geom, arch, train, val, cfg.train);
        sr.net->set_gelu_form(cfg.gelu);
        std::vector<int> preds;
        const Accuracy acc = evaluate_accuracy(*sr.net, arch, val, cfg.train.eval_batch, 0, &preds);
        dump_predictions(dir / "predictions_scratch.jsonl", "scratch", val, preds);
        rows.push_back({{"mode", "scratch"}, {"epochs", cfg.train.epochs}, {"accuracy", acc.value()},
                        {"correct", acc.correct}, {"uses_checkpoint_weights", false}});
    }
    report["modes"] = rows;
    write_json_file(dir / "eval_report.json", report);
    write_manifest(dir, "eval", to_json(cfg), cfg.train.seed, {{"checkpoint", a.checkpoint}, {"arch", a.arch}});

    std::cout << "arch " << arch_key(arch) << "  params " << count_params(arch, geom) << "\n";
    std::cout << "mode        accuracy\n";
    for (const auto& r : rows) {
        char line[64];
        std::snprintf(line, sizeof line, "%-10s  %.4f", r["mode"].get<std::string>().c_str(),
                      r["accuracy"].get<double>());
        std::cout << line << (r["uses_checkpoint_weights"].get<bool>() ? "" : "  (checkpoint weights not used)")
                  << "\n";
    }
    return 0;
}

// ---- cost / space ---------------------------------------------------------

SpaceSpec spec_arg(const std::string& s) {
    if (fs::exists(s)) {
        const Json j = read_json_file(s);
        return spec_from_json(j.is_object() && j.contains("space") ? j["space"] : j);
    }
    return preset(s);
}

struct CostArgs {
    std::string target;
    bool is_arch = false;
    NetGeometry geom;
};

int cmd_cost(const CostArgs& a) {
    a.geom.validate();
    std::cout << "# FLOPs are multiply-accumulates (1 MAC = 1 FLOP); softmax, LayerNorm, GELU and adds excluded\n";
    if (a.is_arch) {
        const ArchConfig arch = read_arch_descriptor(a.target);
        const ModelCost c = model_cost(arch, a.geom);
        std::cout << "arch " << arch_key(arch) << "\nparams " << c.params << "\nmacs " << c.macs << "\n";
        return 0;
    }
    const SpaceSpec spec = spec_arg(a.target);
    const ModelCost lo = model_cost(spec.smallest(), a.geom);
    const ModelCost hi = model_cost(spec.largest(), a.geom);
    std::cout << "spec " << canonical_string(spec) << "\n";
    std::cout << "smallest " << arch_key(spec.smallest()) << " params " << lo.params << " macs " << lo.macs << "\n";
    std::cout << "largest  " << arch_key(spec.largest()) << " params " << hi.params << " macs " << hi.macs << "\n";
    return 0;
}

template <class V>
std::string set_string(const std::vector<V>& v) {
    std::ostringstream os;
    os << '{';
    for (std::size_t i = 0; i < v.size(); ++i) {
        os << (i ? "," : "");
        if constexpr (std::is_floating_point_v<V>) {
            os << format_ratio(v[i]);
        } else {
            os << v[i];
        }
    }
    os << '}';
    return os.str();
}

struct SpaceArgs {
    std::string target;
    bool unlock = false;
    int lock = 0;
};

int cmd_space(const SpaceArgs& a) {
    SpaceSpec spec = spec_arg(a.target);
    if (a.unlock) {
        spec.head_dim_lock.reset();
    } else if (a.lock > 0) {
        spec.head_dim_lock = a.lock;
    }
    spec.validate();
    std::cout << "embed_dim  " << set_string(spec.embed_choices()) << "\n";
    std::cout << "mlp_ratio  " << set_string(spec.ratio_choices()) << "\n";
    std::cout << "num_heads  " << set_string(spec.heads_choices()) << "\n";
    std::cout << "depth      " << set_string(spec.depth_choices()) << "\n";
    if (spec.head_dim_lock) {
        std::vector<int> q;
        for (int h : spec.heads_choices()) q.push_back(*spec.head_dim_lock * h);
        std::cout << "qkv_dim    " << set_string(q) << " (locked: " << *spec.head_dim_lock << " x heads)\n";
    } else {
        std::cout << "qkv_dim    " << set_string(spec.qkv_choices()) << " (independent gene)\n";
    }
    std::cout << "layer_genes " << spec.layer_genes().size() << "\n";
    std::cout << "cardinality " << cardinality(spec).str() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    for (int i = 0; i < argc; ++i) {
        g_argv += (i ? " " : "") + std::string(argv[i]);
    }
    CLI::App app{"Supernet training and evolutionary architecture search for vision transformers"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Write a synthetic AFDS1 dataset");
    s->add_option("--out", synth.out, "Output path")->required();
    s->add_option("--classes", synth.opts.classes, "Number of classes")->capture_default_str();
    s->add_option("--samples", synth.opts.samples, "Number of samples")->capture_default_str();
    s->add_option("--size", synth.opts.size, "Image side in pixels")->capture_default_str();
    s->add_option("--channels", synth.opts.channels, "Channels")->capture_default_str();
    s->add_option("--seed", synth.opts.seed, "Generator seed")->capture_default_str();
    s->add_option("--noise", synth.opts.noise, "Pixel noise std (u8 units)")->capture_default_str();

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train a supernet");
    t->add_option("--config", train.config, "Run configuration (JSON)")->required();
    t->add_option("--sharing", train.sharing, "entangled | disjoint (overrides config)");
    t->add_option("--resume", train.resume, "Checkpoint to resume from");
    t->add_option("--out-dir", train.out_dir, "Output directory");
    t->add_option("--stop-after", train.stop_after, "Stop after this many epochs, saving a resumable checkpoint");

    SearchArgs search;
    auto* se = app.add_subcommand("search", "Evolutionary search over a trained supernet");
    se->add_option("--config", search.config, "Run configuration (JSON)")->required();
    se->add_option("--checkpoint", search.checkpoint, "Supernet checkpoint")->required();
    se->add_option("--baseline", search.baseline, "'random' runs matched-budget random search");
    se->add_option("--out-dir", search.out_dir, "Output directory");

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "Evaluate an architecture: inherited, finetune, scratch or all");
    e->add_option("--config", eval.config, "Run configuration (JSON)")->required();
    e->add_option("--checkpoint", eval.checkpoint, "Supernet checkpoint");
    e->add_option("--arch", eval.arch, "Arch descriptor file or arch key")->required();
    e->add_option("--mode", eval.mode, "inherited | finetune | scratch | all")->capture_default_str();
    e->add_option("--epochs", eval.epochs, "Finetune epochs (default: config train.finetune_epochs)");
    e->add_option("--out-dir", eval.out_dir, "Output directory");

    CostArgs cost;
    auto* c = app.add_subcommand("cost", "Parameter and MAC counts for a spec or an architecture");
    c->add_option("target", cost.target, "Preset name, spec/config JSON, or (with --arch) arch descriptor/key")
        ->required();
    c->add_flag("--arch", cost.is_arch, "Treat target as an architecture");
    c->add_option("--image", cost.geom.height, "Image side")->capture_default_str();
    c->add_option("--patch", cost.geom.patch, "Patch side")->capture_default_str();
    c->add_option("--classes", cost.geom.num_classes, "Classes")->capture_default_str();
    c->add_option("--channels", cost.geom.channels, "Channels")->capture_default_str();

    SpaceArgs space;
    auto* sp = app.add_subcommand("space", "Choice sets and exact cardinality of a search space");
    sp->add_option("target", space.target, "Preset name or spec/config JSON")->required();
    sp->add_flag("--unlock", space.unlock, "Treat qkv_dim as an independent gene");
    sp->add_option("--lock", space.lock, "Override head_dim_lock");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : static_cast<int>(ExitCode::config_error);
    }
    cost.geom.width = cost.geom.height;

    try {
        if (*s) return cmd_synth(synth);
        if (*t) return cmd_train(train);
        if (*se) return cmd_search(search);
        if (*e) return cmd_eval(eval);
        if (*c) return cmd_cost(cost);
        if (*sp) return cmd_space(space);
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return static_cast<int>(ExitCode::config_error);
    } catch (const DataError& err) {
        std::cerr << "data error: " << err.what() << "\n";
        return static_cast<int>(ExitCode::data_error);
    } catch (const NumericalError& err) {
        std::cerr << "numerical abort: " << err.what() << "\n";
        return static_cast<int>(ExitCode::numerical_abort);
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 0;
}
