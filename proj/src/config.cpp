#include "vitnas/config.hpp"

#include "vitnas/error.hpp"

namespace vitnas {

namespace {

void check_keys(const Json& j, std::initializer_list<std::string_view> keys, const std::string& where) {
    if (!j.is_object()) {
        throw ConfigError(where + ": expected an object");
    }
    for (const auto& [k, v] : j.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
            throw ConfigError(where + ": unknown key '" + k + "'");
        }
    }
}

template <class V>
void read(const Json& j, const char* key, V& out, const std::string& where) {
    if (!j.contains(key)) {
        return;
    }
    try {
        out = j.at(key).get<V>();
    } catch (const Json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type " + std::string(j.at(key).type_name()));
    }
}

std::string resolve(const std::string& p, const std::filesystem::path& base) {
    if (p.empty() || base.empty() || std::filesystem::path(p).is_absolute()) {
        return p;
    }
    return (base / p).lexically_normal().string();
}

}  // namespace

RunConfig run_config_from_json(const Json& j, const std::filesystem::path& base_dir) {
    check_keys(j, {"space", "data", "train", "search", "output"}, "config");
    RunConfig c;
    if (j.contains("space")) {
        c.space = spec_from_json(j["space"]);
    }
    if (j.contains("data")) {
        const Json& d = j["data"];
        check_keys(d, {"train", "val", "patch"}, "data");
        read(d, "train", c.data.train, "data");
        read(d, "val", c.data.val, "data");
        read(d, "patch", c.data.patch, "data");
        c.data.train = resolve(c.data.train, base_dir);
        c.data.val = resolve(c.data.val, base_dir);
        if (c.data.patch < 1) {
            throw ConfigError("data.patch must be positive");
        }
    }
    if (j.contains("train")) {
        const Json& t = j["train"];
        check_keys(t,
                   {"epochs", "batch_size", "base_lr", "warmup_epochs", "weight_decay", "label_smoothing", "beta1",
                    "beta2", "adam_eps", "seed", "checkpoint_every", "probe_random", "probe_samples", "eval_batch",
                    "sharing", "gelu", "init_seed", "finetune_epochs"},
                   "train");
        auto& tc = c.train;
        read(t, "epochs", tc.epochs, "train");
        read(t, "batch_size", tc.batch_size, "train");
        read(t, "base_lr", tc.base_lr, "train");
        read(t, "warmup_epochs", tc.warmup_epochs, "train");
        read(t, "weight_decay", tc.weight_decay, "train");
        read(t, "label_smoothing", tc.label_smoothing, "train");
        read(t, "beta1", tc.beta1, "train");
        read(t, "beta2", tc.beta2, "train");
        read(t, "adam_eps", tc.adam_eps, "train");
        read(t, "seed", tc.seed, "train");
        read(t, "checkpoint_every", tc.checkpoint_every, "train");
        read(t, "probe_random", tc.probe_random, "train");
        read(t, "probe_samples", tc.probe_samples, "train");
        read(t, "eval_batch", tc.eval_batch, "train");
        std::string s;
        read(t, "sharing", s, "train");
        if (!s.empty()) {
            c.sharing = parse_store_kind(s);
            if (c.sharing == StoreKind::standalone) {
                throw ConfigError("train.sharing must be entangled or disjoint");
            }
        }
        s.clear();
        read(t, "gelu", s, "train");
        if (!s.empty()) {
            c.gelu = parse_gelu_form(s);
        }
        read(t, "init_seed", c.init_seed, "train");
        read(t, "finetune_epochs", c.finetune_epochs, "train");
        if (c.finetune_epochs < 0) {
            throw ConfigError("train.finetune_epochs must be >= 0");
        }
    }
    c.train.validate();
    if (j.contains("search")) {
        const Json& s = j["search"];
        check_keys(s,
                   {"population_size", "generations", "num_parents", "p_depth", "p_gene", "min_params", "max_params",
                    "eval_samples", "eval_batch", "seed", "rejection_cap"},
                   "search");
        auto& sc = c.search;
        read(s, "population_size", sc.population_size, "search");
        read(s, "generations", sc.generations, "search");
        read(s, "num_parents", sc.num_parents, "search");
        read(s, "p_depth", sc.p_depth, "search");
        read(s, "p_gene", sc.p_gene, "search");
        read(s, "min_params", sc.min_params, "search");
        read(s, "max_params", sc.max_params, "search");
        read(s, "eval_samples", sc.eval_samples, "search");
        read(s, "eval_batch", sc.eval_batch, "search");
        read(s, "seed", sc.seed, "search");
        read(s, "rejection_cap", sc.rejection_cap, "search");
    }
    c.search.validate();
    if (j.contains("output")) {
        check_keys(j["output"], {"dir"}, "output");
        read(j["output"], "dir", c.output_dir, "output");
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    Json j;
    try {
        j = read_json_file(path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    return run_config_from_json(j, path.parent_path());
}

Json to_json(const RunConfig& c) {
    const auto& t = c.train;
    const auto& s = c.search;
    Json j;
    j["space"] = to_json(c.space);
    j["data"] = {{"train", c.data.train}, {"val", c.data.val}, {"patch", c.data.patch}};
    j["train"] = {{"epochs", t.epochs},
                  {"batch_size", t.batch_size},
                  {"base_lr", t.base_lr},
                  {"warmup_epochs", t.warmup_epochs},
                  {"weight_decay", t.weight_decay},
                  {"label_smoothing", t.label_smoothing},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"adam_eps", t.adam_eps},
                  {"seed", t.seed},
                  {"checkpoint_every", t.checkpoint_every},
                  {"probe_random", t.probe_random},
                  {"probe_samples", t.probe_samples},
                  {"eval_batch", t.eval_batch},
                  {"sharing", std::string(to_string(c.sharing))},
                  {"gelu", std::string(to_string(c.gelu))},
                  {"init_seed", c.init_seed},
                  {"finetune_epochs", c.finetune_epochs}};
    j["search"] = {{"population_size", s.population_size},
                   {"generations", s.generations},
                   {"num_parents", s.num_parents},
                   {"p_depth", s.p_depth},
                   {"p_gene", s.p_gene},
                   {"min_params", s.min_params},
                   {"max_params", s.max_params},
                   {"eval_samples", s.eval_samples},
                   {"eval_batch", s.eval_batch},
                   {"seed", s.seed},
                   {"rejection_cap", s.rejection_cap}};
    j["output"] = {{"dir", c.output_dir}};
    return j;
}

}  // namespace vitnas
