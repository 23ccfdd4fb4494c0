#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "vot/experiments.hpp"
#include "vot/metrics.hpp"

using namespace vot;
namespace fs = std::filesystem;

namespace {

// small camera keeping the 12x16 divisibility
CameraConfig tiny_camera() {
    CameraConfig c;
    c.top_h = 32;
    c.top_w = 32;
    c.bottom_h = 24;
    c.bottom_w = 32;
    return c;
}

VOTConfig tiny_model() {
    VOTConfig c;
    c.variant = SpatialVariant::MaxViT;
    c.input_frames = 3;
    c.input_res = 16;
    c.stem_channels = 8;
    c.stages = {{1, 8}, {1, 16}};
    c.window = c.grid = c.swin_window = 2;
    c.spatial_head_dim = 4;
    c.mbconv_expansion = 2;
    c.mlp_ratio = 2;
    c.temporal_layers = 1;
    c.temporal_heads = 2;
    c.temporal_dim = 16;
    return c;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// module-scope dataset shared across training tests
const TempDir& shared_data() {
    static TempDir dir("vot_harness_data");
    static bool made = false;
    if (!made) {
        generate_subdataset(catalog_entry("ball_single"), 8, 4, 1234, dir.path.string(), true,
                            PhysicsPreset{}, tiny_camera());
        generate_subdataset(catalog_entry("ball_double"), 8, 4, 1235, dir.path.string(), true,
                            PhysicsPreset{}, tiny_camera());
        made = true;
    }
    return dir;
}

}  // namespace

TEST_CASE("prediction_error exact cases and brute-force oracle") {
    Tensor<float> r = Tensor<float>::zeros({12, 16});
    Tensor<float> p = Tensor<float>::zeros({12, 16});
    CHECK(prediction_error(r, p) == 0.0);

    p.at({3, 5}) = 255.0f;
    CHECK(prediction_error(r, p) == doctest::Approx(255.0 * 255.0 / 192.0).epsilon(1e-12));
    // symmetry
    CHECK(prediction_error(r, p) == prediction_error(p, r));

    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<float> a({12, 16}), b({12, 16});
        for (int i = 0; i < 192; ++i) {
            a[i] = static_cast<float>(rng.uniform(0, 300));
            b[i] = static_cast<float>(rng.uniform(0, 300));
        }
        // independent naive double-loop
        double acc = 0;
        for (int i = 0; i < 12; ++i)
            for (int j = 0; j < 16; ++j) {
                const double d = double(a[i * 16 + j]) - double(b[i * 16 + j]);
                acc += d * d;
            }
        CHECK(std::abs(prediction_error(a, b) - acc / 192.0) < 1e-9);
    }

    CHECK_THROWS_AS(prediction_error(Tensor<float>::zeros({3, 3}), p), ShapeError);
}

TEST_CASE("generation gap reproduces the published example and is antisymmetric") {
    CHECK(generation_gap(646.0, 512.0) == 134.0);
    CHECK(generation_gap(100.0, 100.0) == 0.0);
    CHECK(generation_gap(90.0, 100.0) == -10.0);  // transfer beating scratch is permitted
    CHECK(generation_gap(3.0, 7.0) == -generation_gap(7.0, 3.0));
}

TEST_CASE("training with lr=0 leaves parameters unchanged") {
    const auto& dir = shared_data();
    LoadedDataset ds =
        load_dataset_split((dir.path / "ball_single").string(), "train", 3, 16, 255.0f);
    TrainOptions opt;
    opt.model = tiny_model();
    opt.epochs = 2;
    opt.batch = 4;
    opt.adam.lr = 0.0;
    opt.seed = 5;
    TrainResult r = train(opt, ds);
    ParameterStore<float> fresh;
    VotModel(opt.model).init_params(fresh, opt.seed);
    for (const auto& [name, entry] : fresh) CHECK(r.params.at(name).value.same(entry.value));
}

TEST_CASE("training is bit-deterministic per seed") {
    const auto& dir = shared_data();
    LoadedDataset ds =
        load_dataset_split((dir.path / "ball_single").string(), "train", 3, 16, 255.0f);
    auto run = [&] {
        TrainOptions opt;
        opt.model = tiny_model();
        opt.epochs = 2;
        opt.batch = 4;
        opt.adam.lr = 1e-3;
        opt.seed = 42;
        return train(opt, ds);
    };
    TrainResult a = run(), b = run();
    CHECK(a.epoch_loss == b.epoch_loss);
    CHECK(params_hash(a.params) == params_hash(b.params));
    // and training actually changed something
    ParameterStore<float> fresh;
    VotModel(tiny_model()).init_params(fresh, 42);
    CHECK(params_hash(a.params) != params_hash(fresh));
}

TEST_CASE("training loss decreases on a small overfit run") {
    const auto& dir = shared_data();
    LoadedDataset ds =
        load_dataset_split((dir.path / "ball_single").string(), "train", 3, 16, 255.0f);
    TrainOptions opt;
    opt.model = tiny_model();
    opt.epochs = 30;
    opt.batch = 4;
    opt.adam.lr = 3e-2;
    opt.seed = 9;
    TrainResult r = train(opt, ds);
    MESSAGE("loss first=", r.epoch_loss.front(), " last=", r.epoch_loss.back());
    CHECK(r.epoch_loss.back() < 0.5 * r.epoch_loss.front());
}

TEST_CASE("empty dataset and undersized batch are rejected") {
    const auto& dir = shared_data();
    LoadedDataset ds =
        load_dataset_split((dir.path / "ball_single").string(), "train", 3, 16, 255.0f);
    TrainOptions opt;
    opt.model = tiny_model();
    opt.batch = 100;
    CHECK_THROWS_AS(train(opt, ds), ConfigError);
}

TEST_CASE("evaluate never mutates parameters and handles the zero model") {
    const auto& dir = shared_data();
    LoadedDataset test =
        load_dataset_split((dir.path / "ball_single").string(), "test", 3, 16, 255.0f);
    VOTConfig cfg = tiny_model();
    ParameterStore<float> params;
    VotModel(cfg).init_params(params, 3);
    const std::string before = params_hash(params);
    const double pe1 = evaluate(cfg, params, test);
    const double pe2 = evaluate(cfg, params, test);
    CHECK(pe1 == pe2);
    CHECK(params_hash(params) == before);

    // zero head -> prediction 0 -> PE equals mean over clips of mean(R^2)
    auto& w = params.at("head.weight").value;
    auto& b = params.at("head.bias").value;
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = 0;
    for (std::int64_t i = 0; i < b.numel(); ++i) b[i] = 0;
    double expect = 0;
    for (const LoadedClip& c : test.clips) {
        double acc = 0;
        for (int i = 0; i < 192; ++i) acc += double(c.target[i]) * double(c.target[i]);
        expect += acc / 192.0;
    }
    expect /= static_cast<double>(test.clips.size());
    CHECK(evaluate(cfg, params, test) == doctest::Approx(expect).epsilon(1e-9));

    // incompatible checkpoint: config mismatch is named
    VOTConfig other = tiny_model();
    other.temporal_dim = 32;
    other.temporal_heads = 4;
    CHECK_THROWS_AS(evaluate(other, params, test), ConfigError);
}

TEST_CASE("zero-shot matrix: cardinality, diagonal, missing baseline") {
    const auto& dir = shared_data();
    VOTConfig cfg = tiny_model();
    auto scratch = [&](const std::string& name, std::uint64_t seed) {
        LoadedDataset ds = load_dataset_split((dir.path / name).string(), "train", 3, 16, 255.0f);
        TrainOptions opt;
        opt.model = cfg;
        opt.epochs = 2;
        opt.batch = 4;
        opt.adam.lr = 1e-3;
        opt.seed = seed;
        TrainResult r = train(opt, ds);
        Checkpoint ck;
        ck.config = cfg;
        ck.meta = RunMeta{seed, opt.epochs, name};
        for (const auto& [n2, e] : r.params) ck.params.add(n2, e.value);
        return ck;
    };
    Checkpoint a = scratch("ball_single", 1);
    Checkpoint b = scratch("ball_double", 2);

    std::vector<std::string> dirs = {(dir.path / "ball_single").string(),
                                     (dir.path / "ball_double").string()};
    auto rows = zero_shot_matrix({a, b}, dirs);
    CHECK(rows.size() == 4);  // 2 ckpts x 2 eval sets
    int diagonal = 0;
    for (const ReportRow& r : rows) {
        REQUIRE(r.gp.has_value());
        if (r.train_set == r.eval_set) {
            CHECK(*r.gp == 0.0);
            diagonal += 1;
        }
    }
    CHECK(diagonal == 2);

    CHECK_THROWS_WITH_AS(zero_shot_matrix({a}, dirs), doctest::Contains("ball_double"),
                         ConfigError);
}

TEST_CASE("finetune curve: size 0 equals zero-shot exactly, oversize rejected") {
    const auto& dir = shared_data();
    VOTConfig cfg = tiny_model();
    Checkpoint ck;
    ck.config = cfg;
    ck.meta = RunMeta{7, 0, "ball_single"};
    {
        ParameterStore<float> p;
        VotModel(cfg).init_params(p, 7);
        for (const auto& [n2, e] : p) ck.params.add(n2, e.value);
    }
    FinetuneOptions opt;
    opt.epochs = 1;
    opt.batch = 2;
    opt.adam.lr = 1e-3;
    opt.seed = 3;
    auto curve = finetune_curve(ck, (dir.path / "ball_double").string(), {0, 4}, opt);
    REQUIRE(curve.size() == 2);
    CHECK(curve[0].size == 0);
    CHECK(curve[1].size == 4);

    ParameterStore<float> params;
    for (const auto& [n2, e] : ck.params) params.add(n2, e.value);
    LoadedDataset test =
        load_dataset_split((dir.path / "ball_double").string(), "test", 3, 16, 255.0f);
    CHECK(curve[0].pe == evaluate(cfg, params, test));

    CHECK_THROWS_AS(finetune_curve(ck, (dir.path / "ball_double").string(), {999}, opt),
                    ConfigError);
}

TEST_CASE("report csv round trip and table rendering") {
    std::vector<ReportRow> rows = {
        {"maxvit", "ball_single", "ball_single", 413.25, 0.0, 11, "abc123"},
        {"maxvit", "ball_single", "ball_double", 646.125, 134.0, 11, "abc123"},
        {"swint", "ball_double", "ball_double", 512.0, std::nullopt, 12, "def456"},
    };
    const std::string path = "/tmp/vot_report_test.csv";
    write_report_csv(rows, path);
    auto back = read_report_csv(path);
    REQUIRE(back.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].model == rows[i].model);
        CHECK(back[i].eval_set == rows[i].eval_set);
        CHECK(back[i].pe == doctest::Approx(rows[i].pe).epsilon(1e-9));
        CHECK(back[i].gp.has_value() == rows[i].gp.has_value());
    }
    // byte-identical rewrite
    write_report_csv(back, path + "2");
    std::ifstream f1(path), f2(path + "2");
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::remove(path.c_str());
    std::remove((path + "2").c_str());

    std::string table = render_report_table(rows);
    CHECK(table.find("646.125/134") != std::string::npos);
    CHECK(table.find("512/--") != std::string::npos);
}

TEST_CASE("seeded shuffles are nested-friendly and deterministic") {
    auto a = seeded_shuffle(10, 5);
    auto b = seeded_shuffle(10, 5);
    CHECK(a == b);
    CHECK(seeded_shuffle(10, 6) != a);
}
