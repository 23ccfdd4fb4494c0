#pragma once

#include <string>
#include <vector>

#include "vot/errors.hpp"
#include "vot/tensor.hpp"

namespace vot {

struct TrajPoint {
    int i = 0;  // frame index
    int x = 0;  // row, bottom-camera pixels
    int y = 0;  // col
    bool operator==(const TrajPoint&) const = default;
};

using TrajectoryLabel = std::vector<TrajPoint>;

// The label bounds are inclusive: 0 <= i <= T, 0 <= x <= H, 0 <= y <= W,
// frame indices strictly increasing.
inline void check_label(const TrajectoryLabel& label, int frames, int h, int w) {
    int prev = -1;
    for (const TrajPoint& p : label) {
        if (p.i < 0 || p.i > frames || p.x < 0 || p.x > h || p.y < 0 || p.y > w)
            throw FormatError("trajectory point (" + std::to_string(p.i) + "," +
                              std::to_string(p.x) + "," + std::to_string(p.y) +
                              ") outside bounds T=" + std::to_string(frames) +
                              " H=" + std::to_string(h) + " W=" + std::to_string(w));
        if (p.i <= prev) throw FormatError("trajectory frame indices must increase");
        prev = p.i;
    }
}

}  // namespace vot
