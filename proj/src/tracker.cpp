#include "vot/tracker.hpp"

#include <cmath>
#include <vector>

#include "vot/config.hpp"

namespace vot {

std::optional<std::array<double, 2>> detect_centroid(const Frame& frame, const ColorKey& key) {
    if (frame.dim() != 3 || frame.size(2) != 3)
        throw ShapeError("detect_centroid: expects [H,W,3] frame");
    if (key.tolerance < 0 || key.tolerance >= 128)
        throw ConfigError("detect_centroid: tolerance must be in [0,128)");
    const int H = frame.size(0), W = frame.size(1);
    const int tol = key.tolerance;
    std::vector<char> mask(static_cast<size_t>(H) * W, 0);
    const std::uint8_t* px = frame.data();
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
        const int dr = std::abs(int(px[i * 3 + 0]) - int(key.color.r));
        const int dg = std::abs(int(px[i * 3 + 1]) - int(key.color.g));
        const int db = std::abs(int(px[i * 3 + 2]) - int(key.color.b));
        mask[static_cast<size_t>(i)] = (dr <= tol && dg <= tol && db <= tol) ? 1 : 0;
    }

    // largest 4-connected component, BFS in row-major discovery order
    std::vector<std::int32_t> stack;
    std::int64_t best_count = 0;
    double best_sr = 0, best_sc = 0;
    for (std::int64_t start = 0; start < static_cast<std::int64_t>(H) * W; ++start) {
        if (mask[static_cast<size_t>(start)] != 1) continue;
        std::int64_t count = 0;
        double sr = 0, sc = 0;
        stack.clear();
        stack.push_back(static_cast<std::int32_t>(start));
        mask[static_cast<size_t>(start)] = 2;
        while (!stack.empty()) {
            const std::int32_t cur = stack.back();
            stack.pop_back();
            const int r = cur / W, c = cur % W;
            count += 1;
            sr += r;
            sc += c;
            const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (const auto& n : nbr) {
                if (n[0] < 0 || n[0] >= H || n[1] < 0 || n[1] >= W) continue;
                const std::int64_t ni = static_cast<std::int64_t>(n[0]) * W + n[1];
                if (mask[static_cast<size_t>(ni)] == 1) {
                    mask[static_cast<size_t>(ni)] = 2;
                    stack.push_back(static_cast<std::int32_t>(ni));
                }
            }
        }
        if (count > best_count) {
            best_count = count;
            best_sr = sr;
            best_sc = sc;
        }
    }
    if (best_count == 0) return std::nullopt;
    // pixel-center convention
    return std::array<double, 2>{best_sr / best_count + 0.5, best_sc / best_count + 0.5};
}

TrajectoryLabel track_clip(const Tensor<std::uint8_t>& video, const ColorKey& key) {
    if (video.dim() != 4 || video.size(3) != 3)
        throw ShapeError("track_clip: expects [T,H,W,3] video");
    const int T = video.size(0), H = video.size(1), W = video.size(2);
    const std::int64_t frame_sz = static_cast<std::int64_t>(H) * W * 3;
    std::vector<std::optional<std::array<double, 2>>> hits(static_cast<size_t>(T));
    bool any = false;
    for (int t = 0; t < T; ++t) {
        Tensor<std::uint8_t> frame(Shape{H, W, 3});
        std::copy(video.data() + t * frame_sz, video.data() + (t + 1) * frame_sz, frame.data());
        hits[static_cast<size_t>(t)] = detect_centroid(frame, key);
        any = any || hits[static_cast<size_t>(t)].has_value();
    }
    if (!any) throw TrackingError("track_clip: target color never detected in clip");

    // back-fill leading misses from the first detection
    std::array<double, 2> last{};
    for (int t = 0; t < T; ++t)
        if (hits[static_cast<size_t>(t)]) {
            last = *hits[static_cast<size_t>(t)];
            break;
        }
    TrajectoryLabel label;
    for (int t = 0; t < T; ++t) {
        if (hits[static_cast<size_t>(t)]) last = *hits[static_cast<size_t>(t)];
        label.push_back({t, static_cast<int>(std::lround(last[0])),
                         static_cast<int>(std::lround(last[1]))});
    }
    return label;
}

Tensor<float> rasterize(const TrajectoryLabel& label, int h, int w, float fill) {
    if (h % kGridRows != 0 || w % kGridCols != 0)
        throw ConfigError("rasterize: resolution " + std::to_string(h) + "x" + std::to_string(w) +
                          " not divisible by the " + std::to_string(kGridRows) + "x" +
                          std::to_string(kGridCols) + " grid");
    Tensor<float> grid(Shape{kGridRows, kGridCols});
    for (const TrajPoint& p : label) {
        if (p.x < 0 || p.x > h || p.y < 0 || p.y > w)
            throw FormatError("rasterize: point (" + std::to_string(p.x) + "," +
                              std::to_string(p.y) + ") outside " + std::to_string(h) + "x" +
                              std::to_string(w));
        const int row = std::min(p.x * kGridRows / h, kGridRows - 1);
        const int col = std::min(p.y * kGridCols / w, kGridCols - 1);
        grid[static_cast<std::int64_t>(row) * kGridCols + col] = fill;
    }
    return grid;
}

}  // namespace vot
