#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "vot/sim.hpp"
#include "vot/tracker.hpp"

using namespace vot;

namespace {

Frame blank(int h, int w, Rgb c) {
    Frame f(Shape{h, w, 3});
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) {
        f[i * 3] = c.r;
        f[i * 3 + 1] = c.g;
        f[i * 3 + 2] = c.b;
    }
    return f;
}

void disc(Frame& f, double cx, double cy, double r, Rgb c) {
    for (int row = 0; row < f.size(0); ++row)
        for (int col = 0; col < f.size(1); ++col) {
            const double dx = row + 0.5 - cx, dy = col + 0.5 - cy;
            if (dx * dx + dy * dy <= r * r) {
                f[(static_cast<std::int64_t>(row) * f.size(1) + col) * 3] = c.r;
                f[(static_cast<std::int64_t>(row) * f.size(1) + col) * 3 + 1] = c.g;
                f[(static_cast<std::int64_t>(row) * f.size(1) + col) * 3 + 2] = c.b;
            }
        }
}

std::set<int> nonzero_cells(const Tensor<float>& grid) {
    std::set<int> cells;
    for (int i = 0; i < grid.numel(); ++i)
        if (grid[i] != 0.0f) cells.insert(i);
    return cells;
}

const Rgb kRed{220, 50, 45};
const Rgb kGray{70, 72, 75};

}  // namespace

TEST_CASE("detect_centroid finds a synthetic disc") {
    Frame f = blank(48, 64, kGray);
    disc(f, 24, 32, 4.0, kRed);
    auto c = detect_centroid(f, ColorKey{kRed, 40});
    REQUIRE(c.has_value());
    CHECK(std::abs((*c)[0] - 24) <= 1.0);
    CHECK(std::abs((*c)[1] - 32) <= 1.0);
}

TEST_CASE("detect_centroid returns absent without the key color") {
    Frame f = blank(32, 32, kGray);
    CHECK(!detect_centroid(f, ColorKey{kRed, 40}).has_value());
    CHECK_THROWS_AS(detect_centroid(f, ColorKey{kRed, 200}), ConfigError);
}

TEST_CASE("detect_centroid picks the largest connected component") {
    Frame f = blank(48, 64, kGray);
    disc(f, 30, 20, 4.0, kRed);  // ~50 px
    disc(f, 10, 50, 1.8, kRed);  // ~10 px
    auto c = detect_centroid(f, ColorKey{kRed, 40});
    REQUIRE(c.has_value());
    CHECK(std::abs((*c)[0] - 30) <= 1.0);
    CHECK(std::abs((*c)[1] - 20) <= 1.0);
}

TEST_CASE("track_clip stays within 1 px of simulator truth on desk clips") {
    SceneConfig scene = make_scene(catalog_entry("ball_triple"), PhysicsPreset{}, CameraConfig{});
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ClipRecord clip = generate_clip(scene, 600 + seed);
        TrajectoryLabel tracked = track_clip(clip.bottom, ColorKey{scene.target.color, 40});
        REQUIRE(tracked.size() == clip.truth.size());
        for (size_t i = 0; i < tracked.size(); ++i) {
            CHECK(std::abs(tracked[i].x - clip.truth[i].x) <= 1);
            CHECK(std::abs(tracked[i].y - clip.truth[i].y) <= 1);
        }
    }
}

TEST_CASE("track_clip: stationary target gives a constant trajectory") {
    Frame f = blank(48, 64, kGray);
    disc(f, 20, 40, 4.0, kRed);
    Tensor<std::uint8_t> video(Shape{5, 48, 64, 3});
    for (int t = 0; t < 5; ++t)
        std::copy(f.data(), f.data() + f.numel(), video.data() + t * f.numel());
    TrajectoryLabel label = track_clip(video, ColorKey{kRed, 40});
    for (int t = 0; t < 5; ++t) {
        CHECK(label[t].i == t);
        CHECK(label[t].x == label[0].x);
        CHECK(label[t].y == label[0].y);
    }
}

TEST_CASE("track_clip carries the previous position through a dropout") {
    Frame with = blank(48, 64, kGray);
    disc(with, 20, 40, 4.0, kRed);
    Frame with2 = blank(48, 64, kGray);
    disc(with2, 26, 44, 4.0, kRed);
    Frame without = blank(48, 64, kGray);
    Tensor<std::uint8_t> video(Shape{3, 48, 64, 3});
    std::copy(with.data(), with.data() + with.numel(), video.data());
    std::copy(without.data(), without.data() + without.numel(), video.data() + with.numel());
    std::copy(with2.data(), with2.data() + with2.numel(), video.data() + 2 * with.numel());
    TrajectoryLabel label = track_clip(video, ColorKey{kRed, 40});
    CHECK(label[1].x == label[0].x);
    CHECK(label[1].y == label[0].y);
    CHECK(label[2].x != label[0].x);

    // leading miss back-fills from the first detection
    Tensor<std::uint8_t> video2(Shape{2, 48, 64, 3});
    std::copy(without.data(), without.data() + without.numel(), video2.data());
    std::copy(with.data(), with.data() + with.numel(), video2.data() + with.numel());
    TrajectoryLabel label2 = track_clip(video2, ColorKey{kRed, 40});
    CHECK(label2[0].x == label2[1].x);

    Tensor<std::uint8_t> video3(Shape{2, 48, 64, 3});
    std::copy(without.data(), without.data() + without.numel(), video3.data());
    std::copy(without.data(), without.data() + without.numel(), video3.data() + with.numel());
    CHECK_THROWS_AS(track_clip(video3, ColorKey{kRed, 40}), TrackingError);
}

TEST_CASE("rasterize cell arithmetic at the native resolution") {
    TrajectoryLabel corner = {{0, 0, 0}};
    Tensor<float> g = rasterize(corner, 480, 640);
    CHECK(g.shape() == Shape{12, 16});
    CHECK(g[0] == 255.0f);
    CHECK(nonzero_cells(g).size() == 1);

    // 480/12 == 640/16 == 40 px cells; the far corner lands in (11,15)
    TrajectoryLabel far = {{0, 479, 639}};
    g = rasterize(far, 480, 640);
    CHECK(g.at({11, 15}) == 255.0f);
    CHECK(nonzero_cells(g).size() == 1);

    // inclusive edge (x == H, y == W) clamps into the last cell
    TrajectoryLabel edge = {{0, 480, 640}};
    g = rasterize(edge, 480, 640);
    CHECK(g.at({11, 15}) == 255.0f);

    // stationary trajectory -> exactly one nonzero cell
    TrajectoryLabel stay = {{0, 100, 100}, {1, 100, 100}, {2, 100, 100}};
    CHECK(nonzero_cells(rasterize(stay, 480, 640)).size() == 1);

    CHECK_THROWS_AS(rasterize({{0, 481, 0}}, 480, 640), FormatError);
    CHECK_THROWS_AS(rasterize({{0, 0, 0}}, 50, 64), ConfigError);

    // configurable fill value
    CHECK(rasterize(corner, 480, 640, 1.0f)[0] == 1.0f);
}

TEST_CASE("rasterize is permutation-invariant and idempotent under duplicates") {
    TrajectoryLabel a = {{0, 10, 20}, {1, 100, 200}, {2, 300, 500}};
    TrajectoryLabel b = {{0, 300, 500}, {1, 10, 20}, {2, 100, 200}, {3, 100, 200}};
    CHECK(rasterize(a, 480, 640).same(rasterize(b, 480, 640)));
}

TEST_CASE("monotone occupancy: prefix cells are a subset of the full set") {
    SceneConfig scene = make_scene(catalog_entry("ball_single"), PhysicsPreset{}, CameraConfig{});
    ClipRecord clip = generate_clip(scene, 999);
    auto full = nonzero_cells(rasterize(clip.truth, 48, 64));
    for (size_t t = 1; t <= clip.truth.size(); ++t) {
        TrajectoryLabel prefix(clip.truth.begin(), clip.truth.begin() + static_cast<long>(t));
        for (int cell : nonzero_cells(rasterize(prefix, 48, 64))) CHECK(full.count(cell) == 1);
    }
}

TEST_CASE("oracle equivalence on native-resolution clips") {
    // native bottom resolution, modest top view (tracking only uses bottom)
    CameraConfig cam;
    cam.bottom_h = 480;
    cam.bottom_w = 640;
    SceneConfig scene = make_scene(catalog_entry("foam_double"), PhysicsPreset{}, cam);
    int cell_exact = 0;
    const int n = 25;
    for (int seed = 0; seed < n; ++seed) {
        ClipRecord clip = generate_clip(scene, 1700 + seed);
        TrajectoryLabel tracked = track_clip(clip.bottom, ColorKey{scene.target.color, 40});
        bool frames_ok = true;
        for (size_t i = 0; i < tracked.size(); ++i) {
            frames_ok &= std::abs(tracked[i].x - clip.truth[i].x) <= 1;
            frames_ok &= std::abs(tracked[i].y - clip.truth[i].y) <= 1;
        }
        CHECK(frames_ok);
        if (rasterize(tracked, 480, 640).same(rasterize(clip.truth, 480, 640))) cell_exact += 1;
    }
    MESSAGE("cell-exact clips: ", cell_exact, "/", n);
    CHECK(cell_exact >= n - 1);
}
