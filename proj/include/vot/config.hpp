#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "vot/errors.hpp"

namespace vot {

enum class SpatialVariant { MaxViT, MaxViT2, SwinT };

std::string variant_name(SpatialVariant v);
SpatialVariant variant_from_name(const std::string& name);

struct StageSpec {
    int depth = 2;
    int channels = 32;
};

// Output grid contract: 12 x 16 cells.
inline constexpr int kGridRows = 12;
inline constexpr int kGridCols = 16;

// Model description. The spatial encoder runs per frame; MaxViT blocks are
// conv + block-attention + grid-attention (MaxViT-2 swaps the grid attention
// for a second block attention); SwinT alternates regular and shifted window
// attention. A causal transformer runs over the per-frame embeddings.
struct VOTConfig {
    SpatialVariant variant = SpatialVariant::MaxViT;
    int input_frames = 10;  // T_in after downsampling
    int input_res = 64;
    int stem_channels = 32;
    std::vector<StageSpec> stages = {{2, 32}, {2, 64}};
    int window = 4;       // block attention window p
    int grid = 4;         // grid attention size g
    int swin_window = 4;  // W_s; shifted layers roll by W_s/2
    int spatial_head_dim = 8;
    int mbconv_expansion = 4;
    int mlp_ratio = 4;
    int temporal_layers = 2;
    int temporal_heads = 4;
    int temporal_dim = 64;
    bool attn_bias = false;              // learned per-window additive score bias
    bool aux_prefix_supervision = false; // supervise every temporal position

    // Spatial extent of the feature map inside stage s.
    int stage_res(int s) const { return input_res >> (s + 2); }
    int last_channels() const { return stages.back().channels; }

    void validate() const;
    nlohmann::json to_json() const;
    static VOTConfig from_json(const nlohmann::json& j);
    std::string hash() const;

    static VOTConfig desk(SpatialVariant v);
    static VOTConfig full_scale(SpatialVariant v);
};

std::uint64_t fnv1a64(const void* data, size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string fnv1a64_hex(const std::string& s);

}  // namespace vot
