#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "vot/sim.hpp"
#include "vot/tensor.hpp"

namespace vot {

struct DatasetManifest {
    std::string subdataset;
    int train_count = 0;
    int test_count = 0;
    std::uint64_t base_seed = 0;
    std::string physics_preset_hash;
    int top_h = 0, top_w = 0, bottom_h = 0, bottom_w = 0;
    int fps = 5, frames = 50;
    double fill_value = 255.0;

    nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j);
    static DatasetManifest load(const std::string& dataset_dir);
    void save(const std::string& dataset_dir) const;
};

std::string clip_basename(int index);  // "clip_000042"

std::uint64_t clip_seed(std::uint64_t base_seed, bool test_split, int index);

// Writes n_train + n_test clips with disjoint seed streams to
// <out_root>/<entry>/{train,test}/ plus a manifest. Refuses to overwrite a
// non-empty directory unless force is set.
void generate_subdataset(const CatalogEntry& entry, int n_train, int n_test,
                         std::uint64_t base_seed, const std::string& out_root, bool force,
                         const PhysicsPreset& preset, const CameraConfig& camera);

// A split loaded into memory, preprocessed for one model geometry.
struct LoadedClip {
    Tensor<float> input;   // [T_in, res, res, 3]
    Tensor<float> target;  // [12, 16] rasterized truth
};

struct LoadedDataset {
    std::string dir;
    std::string split;
    DatasetManifest manifest;
    std::vector<LoadedClip> clips;
};

LoadedDataset load_dataset_split(const std::string& dataset_dir, const std::string& split,
                                 int t_in, int res, float fill, int limit = 0);

// Dataset tree validation: manifest counts, file completeness, header
// sanity, trajectory bounds, grid divisibility. Collects every violation.
struct ValidationReport {
    std::vector<std::string> violations;
    int datasets_checked = 0;
    bool clean() const { return violations.empty(); }
};

ValidationReport validate_dataset(const std::string& root);

}  // namespace vot
