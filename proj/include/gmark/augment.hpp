#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "gmark/heatmap.hpp"
#include "gmark/tensor.hpp"

namespace gmark {

// 2x3 affine map p -> M*p + t in pixel coordinates.
struct Affine2 {
    double m00 = 1.0, m01 = 0.0, m10 = 0.0, m11 = 1.0;
    double tx = 0.0, ty = 0.0;

    std::pair<double, double> apply(double x, double y) const {
        return {m00 * x + m01 * y + tx, m10 * x + m11 * y + ty};
    }
    Affine2 inverse() const;
    Affine2 then(const Affine2& next) const;  // next after this
    static Affine2 identity() { return {}; }
};

struct AffineParams {
    double rotation_deg = 0.0;
    double shear_x = 0.0;  // tangent units
    double shear_y = 0.0;
    double center_x = 0.0;
    double center_y = 0.0;
};

struct AugmentConfig {
    double rotation_lo = -15.0;
    double rotation_hi = 15.0;
    double shear_lo = -0.15;
    double shear_hi = 0.15;
    std::uint64_t seed = 0;
};

// Uniform draws from the configured ranges; center is the image center.
// Draw order is fixed (rotation, shear_x, shear_y) for reproducibility.
AffineParams sample_params(const AugmentConfig& config, int image_size, std::mt19937_64& rng);

// Rotation about the center, then shear about the center.
Affine2 forward_transform(const AffineParams& params);

// Inverse-mapping warp with bilinear sampling; out-of-bounds reads are 0.
Tensor<float> warp_image(const Tensor<float>& image, const Affine2& transform);
Tensor<float> warp_image(const Tensor<float>& image, const AffineParams& params);

// Forward-maps each landmark and rounds to integers. Points landing outside
// the grid are clamped to the border and flagged visibility=false.
std::pair<LandmarkSet, std::vector<bool>> warp_landmarks(const LandmarkSet& landmarks,
                                                         const Affine2& transform);
std::pair<LandmarkSet, std::vector<bool>> warp_landmarks(const LandmarkSet& landmarks,
                                                         const AffineParams& params);

}  // namespace gmark
