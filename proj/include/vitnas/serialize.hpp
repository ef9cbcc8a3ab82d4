#pragma once

// On-disk formats other than the dataset file.
//
// Checkpoint layout:
//   line 1:  "VITNAS-CKPT 1 <header_bytes>\n"
//   header:  <header_bytes> of JSON (tensor manifest, spec, geometry, GELU
//            form, store kind, in-memory precision, optional train state)
//   payload: little-endian f32 blobs in manifest order, offsets relative to
//            the payload start, contiguous with no gaps.
// Each parameter contributes a "value" blob and, once it has optimizer state,
// "adam_m", "adam_v" and "adam_steps" blobs (step counts stored as exact f32).

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "vitnas/search.hpp"
#include "vitnas/space.hpp"
#include "vitnas/supernet.hpp"
#include "vitnas/trainer.hpp"

namespace vitnas {

using Json = nlohmann::ordered_json;

Json to_json(const RangeTriple& r);
RangeTriple range_from_json(const Json& j, std::string_view what);
Json to_json(const SpaceSpec& spec);
SpaceSpec spec_from_json(const Json& j);
Json to_json(const ArchConfig& arch);
ArchConfig arch_from_json(const Json& j);
Json to_json(const NetGeometry& g);
NetGeometry geometry_from_json(const Json& j);
Json to_json(const TrainState& s);
TrainState train_state_from_json(const Json& j);

Json to_json(const IterRecord& r);
Json to_json(const EpochRecord& r);
/// One ledger line; rank is the position within the candidate's generation.
Json to_json(const Candidate& c, const NetGeometry& geom, std::size_t rank);
Json to_json(const GenerationStats& s);

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store,
                     const std::optional<TrainState>& state = std::nullopt, const Json& extra = Json::object());

template <class T>
struct LoadedCheckpoint {
    std::unique_ptr<ParamStore<T>> store;
    std::optional<TrainState> state;
    Json header;
};

/// Rebuilds the store described by the header and fills values and optimizer state.
/// Throws DataError with the offending field on any inconsistency.
template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path);

/// Reads only the JSON header.
Json read_checkpoint_header(const std::filesystem::path& path);

/// Architecture descriptor file: the arch plus the spec it belongs to.
void write_arch_descriptor(const std::filesystem::path& path, const ArchConfig& arch, const SpaceSpec& spec,
                           const NetGeometry& geom, const Json& extra = Json::object());
/// Accepts a descriptor file, a bare arch JSON object, or an arch key string.
ArchConfig read_arch_descriptor(const std::filesystem::path& path);

/// Line-delimited JSON writer; every record is flushed as one line.
class JsonlWriter {
public:
    JsonlWriter() = default;
    explicit JsonlWriter(const std::filesystem::path& path, bool append = false);
    void write(const Json& record);
    bool is_open() const { return os_.is_open(); }

private:
    std::filesystem::path path_;
    std::ofstream os_;
};

/// Keeps only the first n lines of a text file (used when resuming a log).
void truncate_lines(const std::filesystem::path& path, std::size_t n);

std::size_t count_lines(const std::filesystem::path& path);

void write_json_file(const std::filesystem::path& path, const Json& j);
Json read_json_file(const std::filesystem::path& path);

}  // namespace vitnas
