#include "vot/dataset.hpp"

#include <filesystem>
#include <fstream>

#include "vot/clipfile.hpp"
#include "vot/model.hpp"
#include "vot/tracker.hpp"

namespace fs = std::filesystem;

namespace vot {

nlohmann::json DatasetManifest::to_json() const {
    nlohmann::json j;
    j["subdataset"] = subdataset;
    j["counts"] = {{"train", train_count}, {"test", test_count}};
    j["base_seed"] = base_seed;
    j["physics_preset_hash"] = physics_preset_hash;
    j["resolutions"] = {{"top", {top_h, top_w}}, {"bottom", {bottom_h, bottom_w}}};
    j["fps"] = fps;
    j["frames"] = frames;
    j["fill_value"] = fill_value;
    j["seed_scheme"] = "base_seed xor split xor index";
    return j;
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.subdataset = j.at("subdataset").get<std::string>();
    m.train_count = j.at("counts").at("train").get<int>();
    m.test_count = j.at("counts").at("test").get<int>();
    m.base_seed = j.at("base_seed").get<std::uint64_t>();
    m.physics_preset_hash = j.at("physics_preset_hash").get<std::string>();
    m.top_h = j.at("resolutions").at("top")[0].get<int>();
    m.top_w = j.at("resolutions").at("top")[1].get<int>();
    m.bottom_h = j.at("resolutions").at("bottom")[0].get<int>();
    m.bottom_w = j.at("resolutions").at("bottom")[1].get<int>();
    m.fps = j.at("fps").get<int>();
    m.frames = j.at("frames").get<int>();
    m.fill_value = j.at("fill_value").get<double>();
    return m;
}

DatasetManifest DatasetManifest::load(const std::string& dataset_dir) {
    const std::string path = dataset_dir + "/manifest";
    std::ifstream f(path);
    if (!f) throw IoError("cannot open dataset manifest: " + path);
    nlohmann::json j;
    f >> j;
    return from_json(j);
}

void DatasetManifest::save(const std::string& dataset_dir) const {
    const std::string path = dataset_dir + "/manifest";
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write dataset manifest: " + path);
    f << to_json().dump(2) << "\n";
}

std::string clip_basename(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "clip_%06d", index);
    return buf;
}

namespace {
constexpr std::uint64_t kTrainSplit = 0x747261696e5f3030ULL;
constexpr std::uint64_t kTestSplit = 0x746573745f303030ULL;
}  // namespace

std::uint64_t clip_seed(std::uint64_t base_seed, bool test_split, int index) {
    return base_seed ^ (test_split ? kTestSplit : kTrainSplit) ^ static_cast<std::uint64_t>(index);
}

void generate_subdataset(const CatalogEntry& entry, int n_train, int n_test,
                         std::uint64_t base_seed, const std::string& out_root, bool force,
                         const PhysicsPreset& preset, const CameraConfig& camera) {
    if (n_train <= 0 || n_test <= 0)
        throw ConfigError("generate_subdataset: clip counts must be positive");
    const fs::path dir = fs::path(out_root) / entry.name;
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw IoError("output directory " + dir.string() +
                      " exists and is not empty (use --force to overwrite)");
    fs::create_directories(dir / "train");
    fs::create_directories(dir / "test");

    SceneConfig scene = make_scene(entry, preset, camera);
    auto write_split = [&](const std::string& split, int count, bool test_split) {
        for (int i = 0; i < count; ++i) {
            ClipRecord clip = generate_clip(scene, clip_seed(base_seed, test_split, i));
            const fs::path base = dir / split / clip_basename(i);
            write_clip(clip.top, kRoleTop, base.string() + "_top.cgpv");
            write_clip(clip.bottom, kRoleBottom, base.string() + "_bottom.cgpv");
            write_traj_csv(clip.truth, base.string() + "_traj.csv");
        }
    };
    write_split("train", n_train, false);
    write_split("test", n_test, true);

    DatasetManifest m;
    m.subdataset = entry.name;
    m.train_count = n_train;
    m.test_count = n_test;
    m.base_seed = base_seed;
    m.physics_preset_hash = preset.hash();
    m.top_h = camera.top_h;
    m.top_w = camera.top_w;
    m.bottom_h = camera.bottom_h;
    m.bottom_w = camera.bottom_w;
    m.fps = camera.fps;
    m.frames = camera.frames;
    m.save(dir.string());
}

LoadedDataset load_dataset_split(const std::string& dataset_dir, const std::string& split,
                                 int t_in, int res, float fill, int limit) {
    LoadedDataset ds;
    ds.dir = dataset_dir;
    ds.split = split;
    ds.manifest = DatasetManifest::load(dataset_dir);
    int count = split == "train" ? ds.manifest.train_count : ds.manifest.test_count;
    if (limit > 0 && limit < count) count = limit;
    ds.clips.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        const std::string base = dataset_dir + "/" + split + "/" + clip_basename(i);
        Tensor<std::uint8_t> top = read_clip(base + "_top.cgpv");
        TrajectoryLabel truth = read_traj_csv(base + "_traj.csv");
        LoadedClip c;
        c.input = preprocess_clip<float>(top, t_in, res);
        c.target = rasterize(truth, ds.manifest.bottom_h, ds.manifest.bottom_w, fill);
        ds.clips.push_back(std::move(c));
    }
    if (ds.clips.empty()) throw ConfigError("dataset split is empty: " + dataset_dir + "/" + split);
    return ds;
}

namespace {

void validate_one(const fs::path& dir, ValidationReport& report) {
    auto fail = [&](const std::string& what) { report.violations.push_back(dir.string() + ": " + what); };
    DatasetManifest m;
    try {
        m = DatasetManifest::load(dir.string());
    } catch (const std::exception& e) {
        fail(std::string("unreadable manifest: ") + e.what());
        return;
    }
    report.datasets_checked += 1;
    if (m.bottom_h % 12 != 0 || m.bottom_w % 16 != 0)
        fail("bottom resolution " + std::to_string(m.bottom_h) + "x" + std::to_string(m.bottom_w) +
             " not divisible by the 12x16 grid");
    try {
        catalog_entry(m.subdataset);
    } catch (const std::exception&) {
        fail("manifest names unknown catalog entry '" + m.subdataset + "'");
    }

    for (const auto& [split, count] :
         {std::pair<std::string, int>{"train", m.train_count}, {"test", m.test_count}}) {
        int on_disk = 0;
        if (fs::exists(dir / split))
            for (const auto& e : fs::directory_iterator(dir / split))
                if (e.path().extension() == ".csv") on_disk += 1;
        if (on_disk != count)
            fail(split + ": manifest counts " + std::to_string(count) + " clips, found " +
                 std::to_string(on_disk) + " trajectory files");
        for (int i = 0; i < count; ++i) {
            const fs::path base = dir / split / clip_basename(i);
            for (const char* suffix : {"_top.cgpv", "_bottom.cgpv", "_traj.csv"})
                if (!fs::exists(base.string() + suffix))
                    fail("missing file " + base.filename().string() + suffix);
            try {
                std::uint8_t role = 0xff;
                if (fs::exists(base.string() + "_top.cgpv")) {
                    Tensor<std::uint8_t> top = read_clip(base.string() + "_top.cgpv", &role);
                    if (role != kRoleTop) fail(base.filename().string() + "_top.cgpv: role byte is not top");
                    if (top.size(0) != m.frames || top.size(1) != m.top_h || top.size(2) != m.top_w)
                        fail(base.filename().string() + "_top.cgpv: dimensions disagree with manifest");
                }
                if (fs::exists(base.string() + "_bottom.cgpv")) {
                    Tensor<std::uint8_t> bottom = read_clip(base.string() + "_bottom.cgpv", &role);
                    if (role != kRoleBottom)
                        fail(base.filename().string() + "_bottom.cgpv: role byte is not bottom");
                    if (bottom.size(0) != m.frames || bottom.size(1) != m.bottom_h ||
                        bottom.size(2) != m.bottom_w)
                        fail(base.filename().string() + "_bottom.cgpv: dimensions disagree with manifest");
                }
                if (fs::exists(base.string() + "_traj.csv")) {
                    TrajectoryLabel label = read_traj_csv(base.string() + "_traj.csv");
                    if (static_cast<int>(label.size()) != m.frames)
                        fail(base.filename().string() + "_traj.csv: expected " +
                             std::to_string(m.frames) + " points, found " +
                             std::to_string(label.size()));
                    check_label(label, m.frames, m.bottom_h, m.bottom_w);
                }
            } catch (const std::exception& e) {
                fail(base.filename().string() + ": " + e.what());
            }
        }
    }
}

}  // namespace

ValidationReport validate_dataset(const std::string& root) {
    ValidationReport report;
    if (!fs::exists(root)) {
        report.violations.push_back(root + ": path does not exist");
        return report;
    }
    if (fs::exists(fs::path(root) / "manifest")) {
        validate_one(root, report);
        return report;
    }
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && fs::exists(e.path() / "manifest")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) validate_one(d, report);
    if (report.datasets_checked == 0)
        report.violations.push_back(root + ": no dataset manifests found");
    return report;
}

}  // namespace vot
