#include "vot/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vot/config.hpp"

namespace vot {

std::string kind_name(ObjectKind k) {
    switch (k) {
        case ObjectKind::Ball: return "ball";
        case ObjectKind::Cube: return "cube";
        case ObjectKind::Foam: return "foam";
        case ObjectKind::Icosahedron: return "icosahedron";
    }
    throw ConfigError("unknown object kind");
}

ObjectKind kind_from_name(const std::string& name) {
    if (name == "ball") return ObjectKind::Ball;
    if (name == "cube") return ObjectKind::Cube;
    if (name == "foam") return ObjectKind::Foam;
    if (name == "icosahedron") return ObjectKind::Icosahedron;
    throw ConfigError("unknown object kind '" + name + "'");
}

const KindPhysics& PhysicsPreset::for_kind(ObjectKind k) const {
    switch (k) {
        case ObjectKind::Ball: return ball;
        case ObjectKind::Cube: return cube;
        case ObjectKind::Foam: return foam;
        case ObjectKind::Icosahedron: return icosahedron;
    }
    throw ConfigError("unknown object kind");
}

namespace {

nlohmann::json kind_to_json(const KindPhysics& k) {
    return {{"damping_per_s", k.damping_per_s},
            {"restitution", k.restitution},
            {"stop_cm_s", k.stop_cm_s}};
}

KindPhysics kind_from_json(const nlohmann::json& j) {
    return {j.at("damping_per_s").get<double>(), j.at("restitution").get<double>(),
            j.at("stop_cm_s").get<double>()};
}

}  // namespace

nlohmann::json PhysicsPreset::to_json() const {
    nlohmann::json j;
    j["version"] = version;
    j["radius_cm"] = radius_cm;
    j["gripper"] = {{"radius_cm", gripper_radius_cm}, {"speed_cm_s", gripper_speed_cm_s}};
    j["kinds"] = {{"ball", kind_to_json(ball)},
                  {"foam", kind_to_json(foam)},
                  {"cube", kind_to_json(cube)},
                  {"icosahedron", kind_to_json(icosahedron)}};
    return j;
}

PhysicsPreset PhysicsPreset::from_json(const nlohmann::json& j) {
    PhysicsPreset p;
    p.version = j.at("version").get<int>();
    p.radius_cm = j.at("radius_cm").get<double>();
    p.gripper_radius_cm = j.at("gripper").at("radius_cm").get<double>();
    p.gripper_speed_cm_s = j.at("gripper").at("speed_cm_s").get<double>();
    p.ball = kind_from_json(j.at("kinds").at("ball"));
    p.foam = kind_from_json(j.at("kinds").at("foam"));
    p.cube = kind_from_json(j.at("kinds").at("cube"));
    p.icosahedron = kind_from_json(j.at("kinds").at("icosahedron"));
    return p;
}

PhysicsPreset PhysicsPreset::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open physics preset: " + path);
    nlohmann::json j;
    f >> j;
    return from_json(j);
}

void PhysicsPreset::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write physics preset: " + path);
    f << to_json().dump(2) << "\n";
}

std::string PhysicsPreset::hash() const { return fnv1a64_hex(to_json().dump()); }

CameraConfig full_scale_camera() {
    CameraConfig c;
    c.top_h = 1280;
    c.top_w = 720;
    c.bottom_h = 480;
    c.bottom_w = 640;
    return c;
}

// ---------------------------------------------------------------------------
// Catalog

Rgb target_color(ObjectKind kind, bool green) {
    if (green) return {60, 190, 80};
    switch (kind) {
        case ObjectKind::Ball: return {220, 50, 45};
        case ObjectKind::Foam: return {220, 50, 45};  // same color class as the red ball
        case ObjectKind::Cube: return {70, 105, 210};
        case ObjectKind::Icosahedron: return {45, 70, 150};  // darker shade of the cube family
    }
    throw ConfigError("unknown object kind");
}

const std::array<Rgb, 4>& background_palette() {
    static const std::array<Rgb, 4> palette = {
        Rgb{230, 200, 60},  // yellow
        Rgb{160, 70, 195},  // purple
        Rgb{60, 195, 200},  // cyan
        Rgb{240, 145, 55},  // orange
    };
    return palette;
}

Rgb workspace_color() { return {70, 72, 75}; }
Rgb gripper_color() { return {140, 140, 145}; }

const std::vector<CatalogEntry>& subdataset_catalog() {
    static const std::vector<CatalogEntry> catalog = [] {
        std::vector<CatalogEntry> c;
        const std::pair<std::string, int> backgrounds[] = {
            {"single", 0}, {"double", 1}, {"triple", 2}, {"quintuple", 4}};
        for (ObjectKind kind : {ObjectKind::Ball, ObjectKind::Cube, ObjectKind::Foam,
                                ObjectKind::Icosahedron})
            for (const auto& [bname, count] : backgrounds)
                c.push_back({kind_name(kind) + "_" + bname, kind, false, count, false});
        c.push_back({"icosahedron_quintuple_static", ObjectKind::Icosahedron, false, 4, true});
        c.push_back({"ball_green_single", ObjectKind::Ball, true, 0, false});
        return c;
    }();
    return catalog;
}

const CatalogEntry& catalog_entry(const std::string& name) {
    for (const CatalogEntry& e : subdataset_catalog())
        if (e.name == name) return e;
    throw ConfigError("unknown catalog entry '" + name + "'");
}

SceneConfig make_scene(const CatalogEntry& entry, const PhysicsPreset& preset,
                       const CameraConfig& camera) {
    SceneConfig s;
    s.id = entry.name;
    s.camera = camera;
    s.workspace_h = camera.bottom_h;
    s.workspace_w = camera.bottom_w;
    s.px_per_cm = camera.bottom_h / 15.0;
    s.gripper_radius_px = preset.gripper_radius_cm * s.px_per_cm;
    s.gripper_speed = preset.gripper_speed_cm_s * s.px_per_cm;
    s.static_background = entry.static_background;

    auto make_object = [&](ObjectKind kind, Rgb color) {
        const KindPhysics& k = preset.for_kind(kind);
        ObjectSpec o;
        o.kind = kind;
        o.color = color;
        o.radius_px = preset.radius_cm * s.px_per_cm;
        o.linear_damping = k.damping_per_s;
        o.stop_threshold = k.stop_cm_s * s.px_per_cm;
        o.restitution = k.restitution;
        return o;
    };

    s.target = make_object(entry.target_kind, target_color(entry.target_kind, entry.green_target));
    const ObjectKind bg_kind = entry.static_background ? ObjectKind::Cube : ObjectKind::Ball;
    for (int i = 0; i < entry.background_count; ++i)
        s.background.push_back(make_object(bg_kind, background_palette()[static_cast<size_t>(i)]));
    return s;
}

// ---------------------------------------------------------------------------
// Physics

namespace {

struct Vec2 {
    double x = 0, y = 0;
};

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

const ObjectSpec& spec_of(const SceneConfig& scene, size_t idx) {
    return idx == 0 ? scene.target : scene.background[idx - 1];
}

}  // namespace

void step(SimState& state, const SceneConfig& scene, double dt) {
    if (dt <= 0) throw ConfigError("step: dt must be positive");

    // 1. gripper advances along its segment at constant speed
    Vec2 gv{0, 0};
    if (state.wp_index < state.waypoints.size()) {
        const double ox = state.gx, oy = state.gy;
        double remaining = scene.gripper_speed * dt;
        const auto& wp = state.waypoints[state.wp_index];
        const double dx = wp[0] - state.gx, dy = wp[1] - state.gy;
        const double dist = std::sqrt((dx) * (dx) + (dy) * (dy));
        if (dist <= remaining) {
            state.gx = wp[0];
            state.gy = wp[1];
            state.wp_index += 1;
        } else {
            state.gx += dx / dist * remaining;
            state.gy += dy / dist * remaining;
        }
        gv = {(state.gx - ox) / dt, (state.gy - oy) / dt};
    }

    // 2. gripper-object contact: push out of penetration and transfer the
    //    gripper's normal velocity component
    for (size_t i = 0; i < state.objects.size(); ++i) {
        Body& o = state.objects[i];
        const ObjectSpec& os = spec_of(scene, i);
        const double rsum = os.radius_px + scene.gripper_radius_px;
        double nx = o.x - state.gx, ny = o.y - state.gy;
        double dist = std::sqrt((nx) * (nx) + (ny) * (ny));
        if (dist >= rsum) continue;
        if (dist < 1e-9) {
            nx = 1.0;
            ny = 0.0;
            dist = 1.0;
        } else {
            nx /= dist;
            ny /= dist;
        }
        o.x = state.gx + nx * rsum;
        o.y = state.gy + ny * rsum;
        const double vg_n = gv.x * nx + gv.y * ny;
        const double vo_n = o.vx * nx + o.vy * ny;
        if (vg_n > vo_n) {
            o.vx += (vg_n - vo_n) * nx;
            o.vy += (vg_n - vo_n) * ny;
        }
    }

    // 3. object-object collisions on bounding discs
    for (size_t i = 0; i < state.objects.size(); ++i)
        for (size_t j = i + 1; j < state.objects.size(); ++j) {
            Body& a = state.objects[i];
            Body& b = state.objects[j];
            const ObjectSpec& as = spec_of(scene, i);
            const ObjectSpec& bs = spec_of(scene, j);
            const double rsum = as.radius_px + bs.radius_px;
            double nx = a.x - b.x, ny = a.y - b.y;
            double dist = std::sqrt((nx) * (nx) + (ny) * (ny));
            if (dist >= rsum) continue;
            if (dist < 1e-9) {
                nx = 1.0;
                ny = 0.0;
            } else {
                nx /= dist;
                ny /= dist;
            }
            const double overlap = rsum - dist;
            const double e = std::min(as.restitution, bs.restitution);
            const bool both_static_bg = scene.static_background && i > 0 && j > 0;
            if (both_static_bg) {
                // static background objects are immovable for each other: the
                // faster one bounces off as if hitting a wall
                const double sa = std::sqrt((a.vx) * (a.vx) + (a.vy) * (a.vy)), sb = std::sqrt((b.vx) * (b.vx) + (b.vy) * (b.vy));
                Body& mover = sa >= sb ? a : b;
                const double sign = (&mover == &a) ? 1.0 : -1.0;
                mover.x += sign * nx * overlap;
                mover.y += sign * ny * overlap;
                const double vn = (mover.vx * nx + mover.vy * ny) * sign;
                if (vn < 0) {
                    mover.vx -= (1.0 + e) * vn * nx * sign;
                    mover.vy -= (1.0 + e) * vn * ny * sign;
                }
                continue;
            }
            a.x += nx * overlap * 0.5;
            a.y += ny * overlap * 0.5;
            b.x -= nx * overlap * 0.5;
            b.y -= ny * overlap * 0.5;
            const double u = (a.vx - b.vx) * nx + (a.vy - b.vy) * ny;
            if (u < 0) {
                const double imp = 0.5 * (1.0 + e) * u;
                a.vx -= imp * nx;
                a.vy -= imp * ny;
                b.vx += imp * nx;
                b.vy += imp * ny;
            }
        }

    // 4. explicit integration
    for (Body& o : state.objects) {
        o.x += o.vx * dt;
        o.y += o.vy * dt;
    }

    // 5. boundary reflection scaled by restitution, then clamp
    for (size_t i = 0; i < state.objects.size(); ++i) {
        Body& o = state.objects[i];
        const ObjectSpec& os = spec_of(scene, i);
        const double r = os.radius_px;
        const double e = os.restitution;
        if (o.x < r && o.vx < 0) o.vx = -e * o.vx;
        if (o.x > scene.workspace_h - r && o.vx > 0) o.vx = -e * o.vx;
        if (o.y < r && o.vy < 0) o.vy = -e * o.vy;
        if (o.y > scene.workspace_w - r && o.vy > 0) o.vy = -e * o.vy;
        o.x = clamp(o.x, r, scene.workspace_h - r);
        o.y = clamp(o.y, r, scene.workspace_w - r);
    }

    // 6. damping and stop snap
    for (size_t i = 0; i < state.objects.size(); ++i) {
        Body& o = state.objects[i];
        const ObjectSpec& os = spec_of(scene, i);
        const double factor = std::max(0.0, 1.0 - os.linear_damping * dt);
        o.vx *= factor;
        o.vy *= factor;
        if (std::sqrt((o.vx) * (o.vx) + (o.vy) * (o.vy)) < os.stop_threshold) {
            o.vx = 0;
            o.vy = 0;
        }
    }

    state.elapsed_steps += 1;
}

std::vector<std::array<double, 2>> sample_push_policy(Rng& rng, const SceneConfig& scene,
                                                      const std::array<double, 2>& target_pos) {
    const int n = rng.uniform_int(2, 5);
    std::vector<std::array<double, 2>> wps;
    const double margin = scene.gripper_radius_px;
    for (int i = 0; i < n; ++i)
        wps.push_back({rng.uniform(scene.range_row_min() + margin, scene.range_row_max() - margin),
                       rng.uniform(scene.range_col_min() + margin, scene.range_col_max() - margin)});
    // one waypoint passes within contact distance of the target start
    const int hit = rng.uniform_int(0, n - 1);
    const double contact = scene.target.radius_px + scene.gripper_radius_px;
    const double ang = rng.uniform(0.0, 6.283185307179586);
    const double rad = rng.uniform(0.0, 0.5 * contact);
    wps[static_cast<size_t>(hit)] = {
        clamp(target_pos[0] + rad * std::cos(ang), scene.range_row_min() + margin,
              scene.range_row_max() - margin),
        clamp(target_pos[1] + rad * std::sin(ang), scene.range_col_min() + margin,
              scene.range_col_max() - margin)};
    return wps;
}

SimState init_episode(const SceneConfig& scene, Rng& rng) {
    SimState st;
    const double tr = scene.target.radius_px;
    // target starts inside the central pushing region
    Body target;
    target.x = rng.uniform(scene.range_row_min() + 4 * tr, scene.range_row_max() - 4 * tr);
    target.y = rng.uniform(scene.range_col_min() + 4 * tr, scene.range_col_max() - 4 * tr);
    st.objects.push_back(target);

    // background objects: rejection-sampled non-overlapping placement
    for (const ObjectSpec& bg : scene.background) {
        for (int attempt = 0; attempt < 200; ++attempt) {
            Body o;
            o.x = rng.uniform(bg.radius_px + 1.0, scene.workspace_h - bg.radius_px - 1.0);
            o.y = rng.uniform(bg.radius_px + 1.0, scene.workspace_w - bg.radius_px - 1.0);
            bool ok = true;
            for (size_t k = 0; k < st.objects.size(); ++k) {
                const double rsum = bg.radius_px + spec_of(scene, k).radius_px + 2.0;
                if (std::sqrt((o.x - st.objects[k].x) * (o.x - st.objects[k].x) + (o.y - st.objects[k].y) * (o.y - st.objects[k].y)) < rsum) ok = false;
            }
            if (ok) {
                st.objects.push_back(o);
                break;
            }
            if (attempt == 199)
                throw ConfigError("init_episode: cannot place background objects without overlap");
        }
    }

    // gripper start keeps clear of every object
    const double contact = scene.target.radius_px + scene.gripper_radius_px;
    for (int attempt = 0; attempt < 200; ++attempt) {
        st.gx = rng.uniform(scene.range_row_min() + scene.gripper_radius_px,
                            scene.range_row_max() - scene.gripper_radius_px);
        st.gy = rng.uniform(scene.range_col_min() + scene.gripper_radius_px,
                            scene.range_col_max() - scene.gripper_radius_px);
        bool ok = true;
        for (size_t k = 0; k < st.objects.size(); ++k)
            if (std::sqrt((st.gx - st.objects[k].x) * (st.gx - st.objects[k].x) + (st.gy - st.objects[k].y) * (st.gy - st.objects[k].y)) < 1.5 * contact)
                ok = false;
        if (ok) break;
    }

    st.waypoints = sample_push_policy(rng, scene, {st.objects[0].x, st.objects[0].y});
    return st;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

void fill_frame(Frame& f, Rgb color) {
    const std::int64_t n = f.numel() / 3;
    for (std::int64_t i = 0; i < n; ++i) {
        f[i * 3 + 0] = color.r;
        f[i * 3 + 1] = color.g;
        f[i * 3 + 2] = color.b;
    }
}

void put_px(Frame& f, int r, int c, Rgb color) {
    const int H = f.size(0), W = f.size(1);
    if (r < 0 || r >= H || c < 0 || c >= W) return;
    std::uint8_t* p = f.data() + (static_cast<std::int64_t>(r) * W + c) * 3;
    p[0] = color.r;
    p[1] = color.g;
    p[2] = color.b;
}

// Pixel (r,c) is covered when its center (r+0.5, c+0.5) lies inside.
void fill_ellipse(Frame& f, double cx, double cy, double rx, double ry, Rgb color) {
    const int r0 = static_cast<int>(std::floor(cx - rx - 1));
    const int r1 = static_cast<int>(std::ceil(cx + rx + 1));
    const int c0 = static_cast<int>(std::floor(cy - ry - 1));
    const int c1 = static_cast<int>(std::ceil(cy + ry + 1));
    for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c) {
            const double dx = (r + 0.5 - cx) / rx;
            const double dy = (c + 0.5 - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) put_px(f, r, c, color);
        }
}

void fill_rect(Frame& f, double x0, double y0, double x1, double y1, Rgb color) {
    const int r0 = static_cast<int>(std::floor(x0));
    const int r1 = static_cast<int>(std::ceil(x1));
    const int c0 = static_cast<int>(std::floor(y0));
    const int c1 = static_cast<int>(std::ceil(y1));
    for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c)
            if (r + 0.5 >= x0 && r + 0.5 <= x1 && c + 0.5 >= y0 && c + 0.5 <= y1)
                put_px(f, r, c, color);
}

void draw_object(Frame& f, const ObjectSpec& spec, double x, double y, double sx, double sy) {
    if (spec.kind == ObjectKind::Cube) {
        fill_rect(f, (x - spec.radius_px) * sx, (y - spec.radius_px) * sy,
                  (x + spec.radius_px) * sx, (y + spec.radius_px) * sy, spec.color);
    } else {
        fill_ellipse(f, x * sx, y * sy, spec.radius_px * sx, spec.radius_px * sy, spec.color);
    }
}

}  // namespace

Frame render_bottom(const SimState& state, const SceneConfig& scene) {
    Frame f(Shape{scene.camera.bottom_h, scene.camera.bottom_w, 3});
    fill_frame(f, workspace_color());
    // gripper sits above the plate, so the bottom camera sees it under
    // every object: draw it first
    fill_ellipse(f, state.gx, state.gy, scene.gripper_radius_px, scene.gripper_radius_px,
                 gripper_color());
    for (size_t i = 0; i < scene.background.size(); ++i)
        draw_object(f, scene.background[i], state.objects[i + 1].x, state.objects[i + 1].y, 1.0,
                    1.0);
    // the target is always topmost in the bottom view
    draw_object(f, scene.target, state.objects[0].x, state.objects[0].y, 1.0, 1.0);
    return f;
}

Frame render_top(const SimState& state, const SceneConfig& scene) {
    Frame f(Shape{scene.camera.top_h, scene.camera.top_w, 3});
    const double sx = static_cast<double>(scene.camera.top_h) / scene.workspace_h;
    const double sy = static_cast<double>(scene.camera.top_w) / scene.workspace_w;
    fill_frame(f, workspace_color());
    for (size_t i = 0; i < scene.background.size(); ++i)
        draw_object(f, scene.background[i], state.objects[i + 1].x, state.objects[i + 1].y, sx, sy);
    draw_object(f, scene.target, state.objects[0].x, state.objects[0].y, sx, sy);
    // gantry bar from the workspace edge to the gripper, then the gripper
    // disc, above everything
    const double bar_half = 0.45 * scene.gripper_radius_px * sy;
    fill_rect(f, 0.0, state.gy * sy - bar_half, state.gx * sx, state.gy * sy + bar_half,
              gripper_color());
    fill_ellipse(f, state.gx * sx, state.gy * sy, scene.gripper_radius_px * sx,
                 scene.gripper_radius_px * sy, gripper_color());
    return f;
}

ClipRecord generate_clip(const SceneConfig& scene, std::uint64_t seed) {
    Rng rng(splitmix64(seed));
    SimState st = init_episode(scene, rng);

    const int frames = scene.camera.frames;
    const int steps_per_frame =
        static_cast<int>(std::lround(1.0 / (scene.camera.fps * kSimDt)));
    ClipRecord clip;
    clip.scene_id = scene.id;
    clip.seed = seed;
    clip.top = Tensor<std::uint8_t>(Shape{frames, scene.camera.top_h, scene.camera.top_w, 3});
    clip.bottom =
        Tensor<std::uint8_t>(Shape{frames, scene.camera.bottom_h, scene.camera.bottom_w, 3});

    const std::int64_t top_sz = static_cast<std::int64_t>(scene.camera.top_h) * scene.camera.top_w * 3;
    const std::int64_t bot_sz =
        static_cast<std::int64_t>(scene.camera.bottom_h) * scene.camera.bottom_w * 3;
    for (int i = 0; i < frames; ++i) {
        if (i > 0)
            for (int s = 0; s < steps_per_frame; ++s) step(st, scene, kSimDt);
        Frame top = render_top(st, scene);
        Frame bottom = render_bottom(st, scene);
        std::copy(top.data(), top.data() + top_sz, clip.top.data() + i * top_sz);
        std::copy(bottom.data(), bottom.data() + bot_sz, clip.bottom.data() + i * bot_sz);
        clip.truth.push_back({i, static_cast<int>(std::lround(st.objects[0].x)),
                              static_cast<int>(std::lround(st.objects[0].y))});
    }
    return clip;
}

}  // namespace vot
