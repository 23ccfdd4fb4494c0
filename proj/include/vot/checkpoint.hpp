#pragma once

#include <string>

#include "vot/config.hpp"
#include "vot/params.hpp"

namespace vot {

struct RunMeta {
    std::uint64_t seed = 0;
    int epochs = 0;
    std::string dataset_id;

    nlohmann::json to_json() const;
    static RunMeta from_json(const nlohmann::json& j);
};

struct Checkpoint {
    VOTConfig config;
    RunMeta meta;
    ParameterStore<float> params;
};

// Layout: "VOTC" | u16 version | u32 manifest length | manifest JSON
// (config, run metadata, tensor table with byte offsets) | raw little-endian
// f32 data. Byte-identical for identical inputs.
void save_checkpoint(const std::string& path, const VOTConfig& config,
                     const ParameterStore<float>& params, const RunMeta& meta);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over the parameter data bytes in name order.
std::string params_hash(const ParameterStore<float>& params);

}  // namespace vot
