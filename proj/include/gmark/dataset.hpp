#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gmark/heatmap.hpp"
#include "gmark/image_io.hpp"
#include "gmark/tensor.hpp"

namespace gmark {

struct Sample {
    std::string id;
    Tensor<float> image;     // [3,S,S] in [0,1]
    LandmarkSet landmarks;   // grid_size == S
};

struct Dataset {
    std::vector<std::string> landmark_names;
    std::vector<Sample> samples;

    int size() const { return static_cast<int>(samples.size()); }
};

// Manifest layout:
//   {"landmark_names": [...],
//    "entries": [{"id": "...", "image": "relative/path.png",
//                 "landmarks": [[x, y], ...]}, ...]}
// Images are resized to target_size, landmark coordinates rescaled to match.
Dataset load_manifest(const std::string& path, int target_size);

struct SynthConfig {
    int count = 200;
    int image_size = 128;
    std::uint64_t seed = 0;
};

// Randomly rotated/scaled/translated filled rectangles on contrasting
// backgrounds (gray-level contrast >= 0.3, every corner >= size/8 from the
// border). Landmarks are the corners in the rectangle's own frame: top-left,
// top-right, bottom-right, bottom-left — always clockwise on screen.
Dataset generate_quads(const SynthConfig& config);

// writes dir/images/*.png plus dir/manifest.json
void save_dataset(const Dataset& dataset, const std::string& dir);

// generate_quads + save_dataset in one go
Dataset synth_generate(const SynthConfig& config, const std::string& dir);

// One panel per heatmap, tiled rows x cols (needs rows*cols >= stack count).
// Each heatmap is upscaled to the image size, colormapped black->red->yellow
// and blended over the image at alpha 0.6.
Image compose_overlay(const Image& base, const HeatmapStack& stack, int rows, int cols);
void render_overlay(const Image& base, const HeatmapStack& stack, int rows, int cols,
                    const std::string& path);

}  // namespace gmark
