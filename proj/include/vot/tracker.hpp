#pragma once

#include <optional>

#include "vot/sim.hpp"
#include "vot/trajectory.hpp"

namespace vot {

struct ColorKey {
    Rgb color;
    int tolerance = 40;  // max per-channel absolute deviation, in [0, 128)
};

// Centroid (row, col) of the largest 4-connected component of pixels within
// per-channel tolerance of the key; absent when no pixel matches. Positions
// use pixel-center convention, so a disc centered at (x, y) reads back
// (x, y).
std::optional<std::array<double, 2>> detect_centroid(const Frame& frame, const ColorKey& key);

// Per-frame detection over a clip. Missed detections carry the last known
// position forward; leading misses are back-filled from the first hit.
TrajectoryLabel track_clip(const Tensor<std::uint8_t>& video, const ColorKey& key);

// Marks cell (floor(x*12/H), floor(y*16/W)) for every visited point; the
// inclusive x == H / y == W edge falls into the last cell. Ground-truth
// grids hold {0, fill}.
Tensor<float> rasterize(const TrajectoryLabel& label, int h, int w, float fill = 255.0f);

}  // namespace vot
