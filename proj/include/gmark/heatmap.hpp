#pragma once

#include <cstdint>
#include <vector>

#include "gmark/tensor.hpp"

namespace gmark {

// Pixel coordinates: x = column from left, y = row from top.
struct Landmark {
    int x = 0;
    int y = 0;
    bool operator==(const Landmark&) const = default;
};

// Ordered landmarks in a declared square grid; index is landmark identity.
struct LandmarkSet {
    std::vector<Landmark> points;
    int grid_size = 0;

    int count() const { return static_cast<int>(points.size()); }
    bool operator==(const LandmarkSet&) const = default;
};

// n heatmaps of size grid x grid, entries in [0,1], row-major per map.
struct HeatmapStack {
    int count = 0;
    int grid = 0;
    std::vector<float> values;

    float at(int i, int y, int x) const {
        return values[(static_cast<size_t>(i) * grid + y) * grid + x];
    }
    float& at(int i, int y, int x) {
        return values[(static_cast<size_t>(i) * grid + y) * grid + x];
    }
    const float* map(int i) const { return values.data() + static_cast<size_t>(i) * grid * grid; }
};

// Binary support mask per landmark: 1 exactly where the ground-truth map > 0.
struct IndicatorMask {
    int count = 0;
    int grid = 0;
    std::vector<std::uint8_t> bits;

    std::uint8_t at(int i, int y, int x) const {
        return bits[(static_cast<size_t>(i) * grid + y) * grid + x];
    }
    long long ones(int i) const;
};

struct CodecConfig {
    int radius = 10;
    int grid_size = 128;
};

// Linear-falloff cone around each landmark: value 1 at the landmark,
// max(0, 1 - d/r) elsewhere (Euclidean d), clipped at grid borders.
HeatmapStack encode(const LandmarkSet& landmarks, const CodecConfig& config);

IndicatorMask indicator(const HeatmapStack& gt);

// Argmax per map; ties broken by first occurrence in row-major order.
LandmarkSet decode(const HeatmapStack& pred);

// Endpoint-preserving coordinate rescale with round-half-away-from-zero.
LandmarkSet rescale(const LandmarkSet& landmarks, int from_size, int to_size);
int rescale_coord(int coord, int from_size, int to_size);

struct Peak {
    int x = 0;
    int y = 0;
    float value = 0.0f;
};

// Local maxima (8-neighborhood, >= all neighbors, >= threshold), greedily
// thinned strongest-first so survivors are pairwise >= min_separation apart.
// More than one surviving peak signals double attention.
std::vector<Peak> detect_double_attention(const float* map, int grid, float threshold,
                                          double min_separation);
std::vector<Peak> detect_double_attention(const HeatmapStack& stack, int index, float threshold,
                                          double min_separation);

// Tensor bridges for the differentiable pipeline.
template <class S>
Tensor<S> to_tensor(const HeatmapStack& stack) {
    std::vector<S> data(stack.values.size());
    for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<S>(stack.values[i]);
    return Tensor<S>::from_data({stack.count, stack.grid, stack.grid}, std::move(data));
}

inline HeatmapStack stack_from_values(int count, int grid, std::vector<float> values) {
    HeatmapStack s;
    s.count = count;
    s.grid = grid;
    s.values = std::move(values);
    if (s.values.size() != static_cast<size_t>(count) * grid * grid)
        throw ShapeError("heatmap stack: value count does not match n*G*G");
    return s;
}

}  // namespace gmark
