#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "vot/rng.hpp"
#include "vot/tensor.hpp"
#include "vot/trajectory.hpp"

namespace vot {

enum class ObjectKind { Ball, Cube, Foam, Icosahedron };

std::string kind_name(ObjectKind k);
ObjectKind kind_from_name(const std::string& name);

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

struct ObjectSpec {
    ObjectKind kind = ObjectKind::Ball;
    Rgb color;
    double radius_px = 4.0;
    double linear_damping = 1.0;   // fraction of velocity lost per second
    double stop_threshold = 1.0;   // px/s; below this the object freezes
    double restitution = 0.5;
};

struct KindPhysics {
    double damping_per_s = 1.0;
    double restitution = 0.5;
    double stop_cm_s = 0.5;
};

// Per-kind coefficients. The chosen values are not measurements; they are
// picked so the qualitative dynamics ordering (ball rolls farthest, cube
// stops first) holds, and they travel with every dataset as a hash.
struct PhysicsPreset {
    int version = 1;
    double radius_cm = 1.2;
    double gripper_radius_cm = 1.6;
    double gripper_speed_cm_s = 4.5;
    KindPhysics ball{0.6, 0.85, 0.4};
    KindPhysics foam{5.0, 0.30, 0.8};
    KindPhysics cube{7.0, 0.15, 1.0};
    KindPhysics icosahedron{2.5, 0.50, 0.6};

    const KindPhysics& for_kind(ObjectKind k) const;
    nlohmann::json to_json() const;
    static PhysicsPreset from_json(const nlohmann::json& j);
    static PhysicsPreset load(const std::string& path);
    void save(const std::string& path) const;
    std::string hash() const;
};

struct CameraConfig {
    int top_h = 96, top_w = 96;
    int bottom_h = 48, bottom_w = 64;
    int fps = 5;
    int frames = 50;
};

// Full-scale camera matching the source data dimensions.
CameraConfig full_scale_camera();

struct SceneConfig {
    std::string id;
    ObjectSpec target;
    std::vector<ObjectSpec> background;
    bool static_background = false;
    int workspace_h = 48, workspace_w = 64;  // bottom-view pixels
    double px_per_cm = 3.2;                  // workspace_h / 15 cm
    double gripper_radius_px = 5.12;
    double gripper_speed = 14.4;             // px/s
    CameraConfig camera;

    // Gripper range: the 15x15 cm square centered horizontally.
    double range_row_min() const { return 0.0; }
    double range_row_max() const { return static_cast<double>(workspace_h); }
    double range_col_min() const { return (workspace_w - workspace_h) / 2.0; }
    double range_col_max() const { return (workspace_w + workspace_h) / 2.0; }
};

struct Body {
    double x = 0, y = 0;    // row, col in bottom pixels (continuous)
    double vx = 0, vy = 0;  // px/s
};

struct SimState {
    std::vector<Body> objects;  // objects[0] is the target
    double gx = 0, gy = 0;      // gripper center
    std::vector<std::array<double, 2>> waypoints;
    size_t wp_index = 0;
    int elapsed_steps = 0;
};

struct CatalogEntry {
    std::string name;
    ObjectKind target_kind = ObjectKind::Ball;
    bool green_target = false;
    int background_count = 0;  // 0 | 1 | 2 | 4
    bool static_background = false;
};

// The 18 sub-dataset configurations.
const std::vector<CatalogEntry>& subdataset_catalog();
const CatalogEntry& catalog_entry(const std::string& name);

Rgb target_color(ObjectKind kind, bool green);
const std::array<Rgb, 4>& background_palette();
Rgb workspace_color();
Rgb gripper_color();

SceneConfig make_scene(const CatalogEntry& entry, const PhysicsPreset& preset,
                       const CameraConfig& camera);

// One fine physics step (dt seconds): gripper waypoint advance, contact
// resolution, explicit integration, boundary reflection, damping.
void step(SimState& state, const SceneConfig& scene, double dt);

// 2-5 random waypoints in the gripper range, at least one within contact
// distance of the target start.
std::vector<std::array<double, 2>> sample_push_policy(Rng& rng, const SceneConfig& scene,
                                                      const std::array<double, 2>& target_pos);

// Random non-overlapping placement plus a push policy.
SimState init_episode(const SceneConfig& scene, Rng& rng);

using Frame = Tensor<std::uint8_t>;

Frame render_bottom(const SimState& state, const SceneConfig& scene);
Frame render_top(const SimState& state, const SceneConfig& scene);

struct ClipRecord {
    Tensor<std::uint8_t> top;     // [T, H_t, W_t, 3]
    Tensor<std::uint8_t> bottom;  // [T, H_b, W_b, 3]
    TrajectoryLabel truth;
    std::string scene_id;
    std::uint64_t seed = 0;
};

inline constexpr double kSimDt = 1.0 / 50.0;  // 10 fine steps per 5 fps frame

ClipRecord generate_clip(const SceneConfig& scene, std::uint64_t seed);

}  // namespace vot
