#include "vitnas/serialize.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include "vitnas/error.hpp"
#include "vitnas/metrics.hpp"

namespace vitnas {

namespace {

constexpr std::string_view kCkptMagic = "VITNAS-CKPT";
constexpr int kCkptVersion = 1;

static_assert(sizeof(float) == 4);

void append_f32(std::string& out, float f) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(f);
    if constexpr (std::endian::native == std::endian::big) {
        u = __builtin_bswap32(u);
    }
    char b[4];
    std::memcpy(b, &u, 4);
    out.append(b, 4);
}

float read_f32(const char* p) {
    std::uint32_t u;
    std::memcpy(&u, p, 4);
    if constexpr (std::endian::native == std::endian::big) {
        u = __builtin_bswap32(u);
    }
    return std::bit_cast<float>(u);
}

template <class T>
std::string precision_name() {
    return sizeof(T) == 4 ? "float32" : "float64";
}

const Json& require(const Json& j, std::string_view key, std::string_view where) {
    if (!j.is_object() || !j.contains(key)) {
        throw DataError(std::string(where) + ": missing field '" + std::string(key) + "'");
    }
    return j.at(std::string(key));
}

void reject_unknown(const Json& j, std::initializer_list<std::string_view> keys, std::string_view where) {
    if (!j.is_object()) {
        throw ConfigError(std::string(where) + ": expected an object");
    }
    for (const auto& [k, v] : j.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
            throw ConfigError(std::string(where) + ": unknown key '" + k + "'");
        }
    }
}

}  // namespace

// ---- JSON conversions -----------------------------------------------------

Json to_json(const RangeTriple& r) { return Json::array({r.low, r.high, r.step}); }

RangeTriple range_from_json(const Json& j, std::string_view what) {
    RangeTriple r;
    if (j.is_array() && j.size() == 3 && j[0].is_number() && j[1].is_number() && j[2].is_number()) {
        r = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
    } else if (j.is_number()) {
        r = {j.get<double>(), j.get<double>(), 1.0};
    } else {
        throw ConfigError(std::string(what) + ": expected [low, high, step] or a single number");
    }
    r.validate(what);
    return r;
}

Json to_json(const SpaceSpec& s) {
    Json j;
    j["embed_dim"] = to_json(s.embed_dim);
    j["qkv_dim"] = to_json(s.qkv_dim);
    j["mlp_ratio"] = to_json(s.mlp_ratio);
    j["num_heads"] = to_json(s.num_heads);
    j["depth"] = to_json(s.depth);
    j["head_dim_lock"] = s.head_dim_lock ? Json(*s.head_dim_lock) : Json(nullptr);
    return j;
}

SpaceSpec spec_from_json(const Json& j) {
    if (j.is_string()) {
        return preset(j.get<std::string>());
    }
    reject_unknown(j, {"preset", "embed_dim", "qkv_dim", "mlp_ratio", "num_heads", "depth", "head_dim_lock"}, "space");
    SpaceSpec s;
    if (j.contains("preset")) {
        if (!j["preset"].is_string()) {
            throw ConfigError("space.preset: expected a string");
        }
        s = preset(j["preset"].get<std::string>());
    } else {
        for (const char* k : {"embed_dim", "qkv_dim", "mlp_ratio", "num_heads", "depth"}) {
            if (!j.contains(k)) {
                throw ConfigError(std::string("space: missing '") + k + "' (or give a preset)");
            }
        }
        s.head_dim_lock.reset();
    }
    if (j.contains("embed_dim")) s.embed_dim = range_from_json(j["embed_dim"], "space.embed_dim");
    if (j.contains("qkv_dim")) s.qkv_dim = range_from_json(j["qkv_dim"], "space.qkv_dim");
    if (j.contains("mlp_ratio")) s.mlp_ratio = range_from_json(j["mlp_ratio"], "space.mlp_ratio");
    if (j.contains("num_heads")) s.num_heads = range_from_json(j["num_heads"], "space.num_heads");
    if (j.contains("depth")) s.depth = range_from_json(j["depth"], "space.depth");
    if (j.contains("head_dim_lock")) {
        const Json& l = j["head_dim_lock"];
        if (l.is_null()) {
            s.head_dim_lock.reset();
        } else if (l.is_number_integer()) {
            s.head_dim_lock = l.get<int>();
        } else {
            throw ConfigError("space.head_dim_lock: expected an integer or null");
        }
    }
    s.validate();
    return s;
}

Json to_json(const ArchConfig& a) {
    Json layers = Json::array();
    for (const auto& g : a.layers) {
        layers.push_back({{"num_heads", g.num_heads}, {"qkv_dim", g.qkv_dim}, {"mlp_ratio", g.mlp_ratio}});
    }
    return {{"embed_dim", a.embed_dim}, {"depth", a.depth}, {"layers", layers}};
}

ArchConfig arch_from_json(const Json& j) {
    if (j.is_string()) {
        return parse_arch_key(j.get<std::string>());
    }
    try {
        reject_unknown(j, {"embed_dim", "depth", "layers"}, "arch");
        ArchConfig a;
        a.embed_dim = require(j, "embed_dim", "arch").get<int>();
        a.depth = require(j, "depth", "arch").get<int>();
        for (const auto& l : require(j, "layers", "arch")) {
            reject_unknown(l, {"num_heads", "qkv_dim", "mlp_ratio"}, "arch layer");
            a.layers.push_back({require(l, "num_heads", "arch layer").get<int>(),
                                require(l, "qkv_dim", "arch layer").get<int>(),
                                require(l, "mlp_ratio", "arch layer").get<double>()});
        }
        if (static_cast<std::size_t>(a.depth) != a.layers.size()) {
            throw DataError("arch: depth " + std::to_string(a.depth) + " but " + std::to_string(a.layers.size()) +
                            " layer genes");
        }
        return a;
    } catch (const Json::exception& e) {
        throw DataError(std::string("arch: ") + e.what());
    } catch (const ConfigError& e) {
        throw DataError(e.what());
    }
}

Json to_json(const NetGeometry& g) {
    return {{"height", g.height}, {"width", g.width}, {"channels", g.channels}, {"patch", g.patch},
            {"num_classes", g.num_classes}};
}

NetGeometry geometry_from_json(const Json& j) {
    NetGeometry g;
    g.height = require(j, "height", "geometry").get<int>();
    g.width = require(j, "width", "geometry").get<int>();
    g.channels = require(j, "channels", "geometry").get<int>();
    g.patch = require(j, "patch", "geometry").get<int>();
    g.num_classes = require(j, "num_classes", "geometry").get<int>();
    g.validate();
    return g;
}

Json to_json(const TrainState& s) {
    return {{"epoch", s.epoch}, {"iteration", s.iteration}, {"arch_rng", s.arch_rng}, {"data_rng", s.data_rng}};
}

TrainState train_state_from_json(const Json& j) {
    TrainState s;
    s.epoch = require(j, "epoch", "train_state").get<int>();
    s.iteration = require(j, "iteration", "train_state").get<std::uint64_t>();
    s.arch_rng = require(j, "arch_rng", "train_state").get<std::string>();
    s.data_rng = require(j, "data_rng", "train_state").get<std::string>();
    return s;
}

Json to_json(const IterRecord& r) {
    return {{"iteration", r.iteration}, {"epoch", r.epoch}, {"arch", r.arch}, {"loss", r.loss}, {"lr", r.lr}};
}

Json to_json(const EpochRecord& r) {
    Json probes = Json::array();
    for (const auto& p : r.probes) {
        probes.push_back({{"name", p.name}, {"arch", p.arch}, {"accuracy", p.accuracy}});
    }
    return {{"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"probes", probes}};
}

Json to_json(const Candidate& c, const NetGeometry& geom, std::size_t rank) {
    return {{"generation", c.generation},
            {"rank", rank},
            {"arch", arch_key(c.arch)},
            {"params", c.params},
            {"macs", count_flops(c.arch, geom)},
            {"fitness", c.fitness},
            {"provenance", std::string(to_string(c.provenance))}};
}

Json to_json(const GenerationStats& s) {
    return {{"generation", s.generation}, {"best", s.best}, {"median", s.median}, {"best_so_far", s.best_so_far}};
}

// ---- checkpoints ----------------------------------------------------------

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store,
                     const std::optional<TrainState>& state, const Json& extra) {
    Json manifest = Json::array();
    std::string payload;
    auto blob = [&](const std::string& name, const Shape& shape, const char* kind, auto&& values) {
        const std::size_t offset = payload.size();
        for (const auto& v : values) {
            append_f32(payload, static_cast<float>(v));
        }
        manifest.push_back({{"name", name}, {"kind", kind}, {"shape", shape}, {"offset", offset},
                            {"bytes", payload.size() - offset}});
    };
    for (const Param<T>* p : store.params()) {
        blob(p->name, p->value.shape(), "value", p->value.data());
        if (p->has_state()) {
            blob(p->name, p->value.shape(), "adam_m", p->m);
            blob(p->name, p->value.shape(), "adam_v", p->v);
            blob(p->name, p->value.shape(), "adam_steps", p->steps);
        }
    }
    Json h;
    h["format"] = kCkptVersion;
    h["store"] = std::string(to_string(store.kind()));
    h["precision"] = precision_name<T>();
    h["disk_dtype"] = "f32le";
    h["gelu"] = std::string(to_string(store.gelu_form()));
    h["ln_eps"] = store.ln_eps();
    h["spec"] = to_json(store.spec());
    h["spec_hash"] = spec_hash(store.spec());
    h["geometry"] = to_json(store.geometry());
    h["init_seed"] = store.init_seed();
    if (const auto* sn = dynamic_cast<const StandaloneNet<T>*>(&store)) {
        h["arch"] = to_json(sn->arch());
    }
    h["train_state"] = state ? to_json(*state) : Json(nullptr);
    h["epoch"] = state ? state->epoch : 0;
    h["extra"] = extra;
    h["payload_bytes"] = payload.size();
    h["tensors"] = manifest;
    const std::string header = h.dump();

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) {
            throw DataError("cannot open '" + tmp.string() + "' for writing");
        }
        os << kCkptMagic << ' ' << kCkptVersion << ' ' << header.size() << '\n' << header;
        os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!os.flush()) {
            throw DataError("write to '" + tmp.string() + "' failed");
        }
    }
    std::filesystem::rename(tmp, path);
}

namespace {

struct RawCheckpoint {
    Json header;
    std::string payload;
};

RawCheckpoint read_raw(const std::filesystem::path& path, bool with_payload) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError("cannot open checkpoint '" + path.string() + "'");
    }
    const std::string where = "checkpoint '" + path.string() + "': ";
    std::string line;
    if (!std::getline(is, line)) {
        throw DataError(where + "empty file");
    }
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    std::size_t header_len = 0;
    if (!(ls >> magic >> version >> header_len) || magic != kCkptMagic) {
        throw DataError(where + "bad magic line (expected '" + std::string(kCkptMagic) + " <version> <header bytes>')");
    }
    if (version != kCkptVersion) {
        throw DataError(where + "unsupported format version " + std::to_string(version));
    }
    std::string header(header_len, '\0');
    if (!is.read(header.data(), static_cast<std::streamsize>(header_len))) {
        throw DataError(where + "truncated header (expected " + std::to_string(header_len) + " bytes)");
    }
    RawCheckpoint raw;
    try {
        raw.header = Json::parse(header);
    } catch (const Json::exception& e) {
        throw DataError(where + "header is not valid JSON: " + e.what());
    }
    if (with_payload) {
        raw.payload.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
        const auto expected = require(raw.header, "payload_bytes", "checkpoint header").get<std::size_t>();
        if (raw.payload.size() != expected) {
            throw DataError(where + "payload is " + std::to_string(raw.payload.size()) + " bytes, header declares " +
                            std::to_string(expected));
        }
    }
    return raw;
}

}  // namespace

Json read_checkpoint_header(const std::filesystem::path& path) { return read_raw(path, false).header; }

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
    RawCheckpoint raw = read_raw(path, true);
    const std::string where = "checkpoint '" + path.string() + "': ";
    const Json& h = raw.header;
    LoadedCheckpoint<T> out;
    try {
        const SpaceSpec spec = spec_from_json(require(h, "spec", "checkpoint header"));
        const NetGeometry geom = geometry_from_json(require(h, "geometry", "checkpoint header"));
        const StoreKind kind = parse_store_kind(require(h, "store", "checkpoint header").get<std::string>());
        const auto seed = require(h, "init_seed", "checkpoint header").get<std::uint64_t>();
        const std::string stored_hash = require(h, "spec_hash", "checkpoint header").get<std::string>();
        if (stored_hash != spec_hash(spec)) {
            throw DataError("spec hash " + stored_hash + " does not match its spec (" + spec_hash(spec) + ")");
        }
        ArchConfig arch;
        if (kind == StoreKind::standalone) {
            arch = arch_from_json(require(h, "arch", "checkpoint header"));
        }
        out.store = make_store<T>(kind, spec, geom, seed, kind == StoreKind::standalone ? &arch : nullptr);
        out.store->set_gelu_form(parse_gelu_form(require(h, "gelu", "checkpoint header").get<std::string>()));
        if (h.contains("train_state") && !h["train_state"].is_null()) {
            out.state = train_state_from_json(h["train_state"]);
        }
    } catch (const ConfigError& e) {
        throw DataError(where + e.what());
    } catch (const Json::exception& e) {
        throw DataError(where + e.what());
    }

    const Json& tensors = require(h, "tensors", "checkpoint header");
    std::size_t expect_offset = 0;
    for (const Json& t : tensors) {
        const auto name = require(t, "name", "tensor entry").get<std::string>();
        const auto kind = require(t, "kind", "tensor entry").get<std::string>();
        const auto shape = require(t, "shape", "tensor entry").get<Shape>();
        const auto offset = require(t, "offset", "tensor entry").get<std::size_t>();
        const auto bytes = require(t, "bytes", "tensor entry").get<std::size_t>();
        if (offset != expect_offset) {
            throw DataError(where + "tensor '" + name + "' (" + kind + ") at offset " + std::to_string(offset) +
                            ", expected " + std::to_string(expect_offset));
        }
        Param<T>* p = out.store->find(name);
        if (!p) {
            throw DataError(where + "unknown tensor '" + name + "'");
        }
        if (shape != p->value.shape()) {
            throw DataError(where + "tensor '" + name + "' has shape " + shape_string(shape) + ", store expects " +
                            shape_string(p->value.shape()));
        }
        const std::size_t n = p->value.numel();
        if (bytes != 4 * n || offset + bytes > raw.payload.size()) {
            throw DataError(where + "tensor '" + name + "' (" + kind + ") has inconsistent byte count " +
                            std::to_string(bytes));
        }
        const char* src = raw.payload.data() + offset;
        if (kind == "value") {
            auto d = p->value.data();
            for (std::size_t i = 0; i < n; ++i) d[i] = static_cast<T>(read_f32(src + 4 * i));
        } else if (kind == "adam_m" || kind == "adam_v" || kind == "adam_steps") {
            p->ensure_state();
            if (kind == "adam_steps") {
                for (std::size_t i = 0; i < n; ++i) p->steps[i] = static_cast<std::uint32_t>(read_f32(src + 4 * i));
            } else {
                auto& dst = kind == "adam_m" ? p->m : p->v;
                for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(read_f32(src + 4 * i));
            }
        } else {
            throw DataError(where + "tensor '" + name + "' has unknown kind '" + kind + "'");
        }
        expect_offset += bytes;
    }
    if (expect_offset != raw.payload.size()) {
        throw DataError(where + "manifest covers " + std::to_string(expect_offset) + " of " +
                        std::to_string(raw.payload.size()) + " payload bytes");
    }
    out.header = std::move(raw.header);
    return out;
}

template void save_checkpoint(const std::filesystem::path&, const ParamStore<float>&, const std::optional<TrainState>&,
                              const Json&);
template void save_checkpoint(const std::filesystem::path&, const ParamStore<double>&,
                              const std::optional<TrainState>&, const Json&);
template LoadedCheckpoint<float> load_checkpoint(const std::filesystem::path&);
template LoadedCheckpoint<double> load_checkpoint(const std::filesystem::path&);

// ---- descriptors and line files -------------------------------------------

void write_arch_descriptor(const std::filesystem::path& path, const ArchConfig& arch, const SpaceSpec& spec,
                           const NetGeometry& geom, const Json& extra) {
    Json j;
    j["arch"] = to_json(arch);
    j["key"] = arch_key(arch);
    j["spec"] = to_json(spec);
    j["spec_hash"] = spec_hash(spec);
    j["params"] = count_params(arch, geom);
    j["macs"] = count_flops(arch, geom);
    j["extra"] = extra;
    write_json_file(path, j);
}

ArchConfig read_arch_descriptor(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        // Not a file: treat the argument as an arch key.
        try {
            return parse_arch_key(path.string());
        } catch (const std::exception& e) {
            throw DataError("'" + path.string() + "' is neither a descriptor file nor a valid arch key: " + e.what());
        }
    }
    const Json j = read_json_file(path);
    if (j.is_object() && j.contains("arch")) {
        return arch_from_json(j["arch"]);
    }
    return arch_from_json(j);
}

JsonlWriter::JsonlWriter(const std::filesystem::path& path, bool append)
    : path_(path), os_(path, append ? std::ios::app : std::ios::trunc) {
    if (!os_) {
        throw DataError("cannot open '" + path.string() + "' for writing");
    }
}

void JsonlWriter::write(const Json& record) {
    os_ << record.dump() << '\n';
    os_.flush();
    if (!os_) {
        throw DataError("write to '" + path_.string() + "' failed");
    }
}

std::size_t count_lines(const std::filesystem::path& path) {
    std::ifstream is(path);
    std::size_t n = 0;
    std::string line;
    while (std::getline(is, line)) {
        ++n;
    }
    return n;
}

void truncate_lines(const std::filesystem::path& path, std::size_t n) {
    std::ifstream is(path);
    std::string kept, line;
    for (std::size_t i = 0; i < n && std::getline(is, line); ++i) {
        kept += line;
        kept += '\n';
    }
    is.close();
    std::ofstream os(path, std::ios::trunc);
    os << kept;
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw DataError("cannot open '" + path.string() + "' for writing");
    }
    os << j.dump(2) << '\n';
    if (!os.flush()) {
        throw DataError("write to '" + path.string() + "' failed");
    }
}

Json read_json_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw DataError("cannot open '" + path.string() + "'");
    }
    try {
        return Json::parse(is);
    } catch (const Json::exception& e) {
        throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

}  // namespace vitnas
