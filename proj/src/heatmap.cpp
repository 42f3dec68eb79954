#include "gmark/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>
#include <utility>

namespace gmark {

long long IndicatorMask::ones(int i) const {
    const std::uint8_t* p = bits.data() + static_cast<size_t>(i) * grid * grid;
    long long n = 0;
    for (long long j = 0; j < static_cast<long long>(grid) * grid; ++j) n += p[j];
    return n;
}

HeatmapStack encode(const LandmarkSet& landmarks, const CodecConfig& config) {
    const int g = config.grid_size;
    const int r = config.radius;
    if (g < 2) throw ValueError("encode: grid_size must be >= 2");
    if (r < 1) throw ValueError("encode: radius must be >= 1");
    if (landmarks.points.empty()) throw ValueError("encode: empty landmark set");
    if (g < 2 * r) {
        // advisory only, and training encodes thousands of stacks: once per config
        static std::set<std::pair<int, int>> warned;
        if (warned.insert({g, r}).second)
            std::cerr << "warning: grid_size " << g << " < 2*radius " << 2 * r
                      << "; cones will dominate the grid\n";
    }
    HeatmapStack out;
    out.count = landmarks.count();
    out.grid = g;
    out.values.assign(static_cast<size_t>(out.count) * g * g, 0.0f);
    for (int i = 0; i < out.count; ++i) {
        const Landmark& a = landmarks.points[static_cast<size_t>(i)];
        if (a.x < 0 || a.x >= g || a.y < 0 || a.y >= g)
            throw ValueError("encode: landmark " + std::to_string(i) + " at (" +
                             std::to_string(a.x) + "," + std::to_string(a.y) +
                             ") outside grid of size " + std::to_string(g));
        // only the disk can be nonzero; clip the bounding box to the grid
        const int y0 = std::max(0, a.y - r), y1 = std::min(g - 1, a.y + r);
        const int x0 = std::max(0, a.x - r), x1 = std::min(g - 1, a.x + r);
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dx = x - a.x, dy = y - a.y;
                const double d = std::sqrt(dx * dx + dy * dy);
                const double v = 1.0 - d / r;
                if (v > 0.0) out.at(i, y, x) = static_cast<float>(v);
            }
        }
    }
    return out;
}

IndicatorMask indicator(const HeatmapStack& gt) {
    IndicatorMask m;
    m.count = gt.count;
    m.grid = gt.grid;
    m.bits.resize(gt.values.size());
    for (size_t i = 0; i < gt.values.size(); ++i) m.bits[i] = gt.values[i] > 0.0f ? 1 : 0;
    return m;
}

LandmarkSet decode(const HeatmapStack& pred) {
    if (pred.count < 1 || pred.grid < 1) throw ValueError("decode: empty heatmap stack");
    LandmarkSet out;
    out.grid_size = pred.grid;
    out.points.reserve(static_cast<size_t>(pred.count));
    const long long per_map = static_cast<long long>(pred.grid) * pred.grid;
    for (int i = 0; i < pred.count; ++i) {
        const float* map = pred.map(i);
        long long best = 0;
        for (long long j = 1; j < per_map; ++j)
            if (map[j] > map[best]) best = j;
        out.points.push_back({static_cast<int>(best % pred.grid),
                              static_cast<int>(best / pred.grid)});
    }
    return out;
}

int rescale_coord(int coord, int from_size, int to_size) {
    if (from_size < 2 || to_size < 2) throw ValueError("rescale: sizes must be >= 2");
    const double scaled = static_cast<double>(coord) * (to_size - 1) / (from_size - 1);
    long long r = std::llround(scaled);  // rounds half away from zero
    if (r < 0) r = 0;
    if (r > to_size - 1) r = to_size - 1;
    return static_cast<int>(r);
}

LandmarkSet rescale(const LandmarkSet& landmarks, int from_size, int to_size) {
    if (from_size < 2 || to_size < 2) throw ValueError("rescale: sizes must be >= 2");
    LandmarkSet out;
    out.grid_size = to_size;
    out.points.reserve(landmarks.points.size());
    for (const Landmark& p : landmarks.points)
        out.points.push_back({rescale_coord(p.x, from_size, to_size),
                              rescale_coord(p.y, from_size, to_size)});
    return out;
}

std::vector<Peak> detect_double_attention(const float* map, int grid, float threshold,
                                          double min_separation) {
    if (threshold <= 0.0f || threshold >= 1.0f)
        throw ValueError("detect_double_attention: threshold must be in (0,1)");
    if (min_separation < 1.0) throw ValueError("detect_double_attention: min_separation must be >= 1");
    std::vector<Peak> candidates;
    for (int y = 0; y < grid; ++y) {
        for (int x = 0; x < grid; ++x) {
            const float v = map[static_cast<size_t>(y) * grid + x];
            if (v < threshold) continue;
            bool is_peak = true;
            for (int dy = -1; dy <= 1 && is_peak; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const int ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= grid || nx < 0 || nx >= grid) continue;
                    if (map[static_cast<size_t>(ny) * grid + nx] > v) {
                        is_peak = false;
                        break;
                    }
                }
            }
            if (is_peak) candidates.push_back({x, y, v});
        }
    }
    // strongest first; row-major position as deterministic tie-break
    std::stable_sort(candidates.begin(), candidates.end(), [grid](const Peak& a, const Peak& b) {
        if (a.value != b.value) return a.value > b.value;
        return static_cast<long long>(a.y) * grid + a.x < static_cast<long long>(b.y) * grid + b.x;
    });
    std::vector<Peak> kept;
    const double min_sep_sq = min_separation * min_separation;
    for (const Peak& p : candidates) {
        bool ok = true;
        for (const Peak& q : kept) {
            const double dx = p.x - q.x, dy = p.y - q.y;
            if (dx * dx + dy * dy < min_sep_sq) {
                ok = false;
                break;
            }
        }
        if (ok) kept.push_back(p);
    }
    return kept;
}

std::vector<Peak> detect_double_attention(const HeatmapStack& stack, int index, float threshold,
                                          double min_separation) {
    if (index < 0 || index >= stack.count)
        throw ValueError("detect_double_attention: map index out of range");
    return detect_double_attention(stack.map(index), stack.grid, threshold, min_separation);
}

}  // namespace gmark
