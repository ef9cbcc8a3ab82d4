#pragma once

#include <filesystem>
#include <string>

#include "vitnas/search.hpp"
#include "vitnas/serialize.hpp"
#include "vitnas/space.hpp"
#include "vitnas/supernet.hpp"
#include "vitnas/trainer.hpp"

namespace vitnas {

struct DataConfig {
    std::string train;  // AFDS1 path
    std::string val;    // AFDS1 path
    int patch = 8;
};

/// A complete run description. Every section and key is optional; absent keys
/// keep the defaults of the corresponding struct. Unknown keys are rejected.
///
///   { "space":  "tiny" | { "preset": ..., "embed_dim": [lo, hi, step], "qkv_dim": ...,
///                          "mlp_ratio": ..., "num_heads": ..., "depth": ..., "head_dim_lock": 64 | null },
///     "data":   { "train": path, "val": path, "patch": 8 },
///     "train":  { TrainConfig fields, "sharing": "entangled" | "disjoint", "gelu": "tanh" | "erf",
///                 "init_seed": 0, "finetune_epochs": 5 },
///     "search": { SearchConfig fields },
///     "output": { "dir": "runs" } }
struct RunConfig {
    SpaceSpec space = preset("tiny");
    DataConfig data;
    TrainConfig train;
    StoreKind sharing = StoreKind::entangled;
    GeluForm gelu = GeluForm::tanh;
    std::uint64_t init_seed = 0;
    int finetune_epochs = 5;
    SearchConfig search;
    std::string output_dir = "runs";
};

/// Relative data paths resolve against base_dir.
RunConfig run_config_from_json(const Json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
Json to_json(const RunConfig& cfg);

}  // namespace vitnas
