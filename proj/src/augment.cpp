#include "gmark/augment.hpp"

#include <cmath>

namespace gmark {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Affine2 Affine2::inverse() const {
    const double det = m00 * m11 - m01 * m10;
    if (std::fabs(det) < 1e-12) throw ValueError("affine transform is not invertible");
    Affine2 inv;
    inv.m00 = m11 / det;
    inv.m01 = -m01 / det;
    inv.m10 = -m10 / det;
    inv.m11 = m00 / det;
    inv.tx = -(inv.m00 * tx + inv.m01 * ty);
    inv.ty = -(inv.m10 * tx + inv.m11 * ty);
    return inv;
}

Affine2 Affine2::then(const Affine2& next) const {
    Affine2 out;
    out.m00 = next.m00 * m00 + next.m01 * m10;
    out.m01 = next.m00 * m01 + next.m01 * m11;
    out.m10 = next.m10 * m00 + next.m11 * m10;
    out.m11 = next.m10 * m01 + next.m11 * m11;
    out.tx = next.m00 * tx + next.m01 * ty + next.tx;
    out.ty = next.m10 * tx + next.m11 * ty + next.ty;
    return out;
}

AffineParams sample_params(const AugmentConfig& config, int image_size, std::mt19937_64& rng) {
    if (config.rotation_lo > config.rotation_hi || config.shear_lo > config.shear_hi)
        throw ValueError("sample_params: lo > hi in augmentation range");
    auto draw = [&rng](double lo, double hi) {
        if (lo == hi) return lo;
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    AffineParams p;
    p.rotation_deg = draw(config.rotation_lo, config.rotation_hi);
    p.shear_x = draw(config.shear_lo, config.shear_hi);
    p.shear_y = draw(config.shear_lo, config.shear_hi);
    p.center_x = (image_size - 1) / 2.0;
    p.center_y = (image_size - 1) / 2.0;
    return p;
}

Affine2 forward_transform(const AffineParams& params) {
    const double th = params.rotation_deg * kPi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    // combined linear part: shear * rotation
    Affine2 t;
    t.m00 = c + params.shear_x * s;
    t.m01 = -s + params.shear_x * c;
    t.m10 = params.shear_y * c + s;
    t.m11 = -params.shear_y * s + c;
    // fixed point at the center: p' = M*(p - c) + c
    t.tx = params.center_x - (t.m00 * params.center_x + t.m01 * params.center_y);
    t.ty = params.center_y - (t.m10 * params.center_x + t.m11 * params.center_y);
    return t;
}

Tensor<float> warp_image(const Tensor<float>& image, const Affine2& transform) {
    const Shape& shp = image.shape();
    if (shp.size() != 3) throw ShapeError("warp_image expects [C,H,W], got " + shape_str(shp));
    const int c = shp[0], h = shp[1], w = shp[2];
    if (h < 2 || w < 2) throw ValueError("warp_image: image must be at least 2x2");
    const Affine2 inv = transform.inverse();
    Tensor<float> out = Tensor<float>::zeros(shp);
    const auto& src = image.data();
    auto& dst = out.data();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto [sx, sy] = inv.apply(x, y);
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            if (x0 < -1 || x0 >= w || y0 < -1 || y0 >= h) continue;  // fully outside
            const double w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy);
            const double w10 = (1 - fx) * fy, w11 = fx * fy;
            for (int cc = 0; cc < c; ++cc) {
                const float* plane = src.data() + static_cast<size_t>(cc) * h * w;
                auto tap = [&](int yy, int xx) -> double {
                    if (xx < 0 || xx >= w || yy < 0 || yy >= h) return 0.0;
                    return plane[static_cast<size_t>(yy) * w + xx];
                };
                const double v = w00 * tap(y0, x0) + w01 * tap(y0, x0 + 1) +
                                 w10 * tap(y0 + 1, x0) + w11 * tap(y0 + 1, x0 + 1);
                dst[(static_cast<size_t>(cc) * h + y) * w + x] = static_cast<float>(v);
            }
        }
    }
    return out;
}

Tensor<float> warp_image(const Tensor<float>& image, const AffineParams& params) {
    return warp_image(image, forward_transform(params));
}

std::pair<LandmarkSet, std::vector<bool>> warp_landmarks(const LandmarkSet& landmarks,
                                                         const Affine2& transform) {
    LandmarkSet out;
    out.grid_size = landmarks.grid_size;
    std::vector<bool> visible;
    visible.reserve(landmarks.points.size());
    const int g = landmarks.grid_size;
    for (const Landmark& p : landmarks.points) {
        const auto [wx, wy] = transform.apply(p.x, p.y);
        int xi = static_cast<int>(std::llround(wx));
        int yi = static_cast<int>(std::llround(wy));
        const bool in = xi >= 0 && xi <= g - 1 && yi >= 0 && yi <= g - 1;
        if (!in) {
            xi = std::min(std::max(xi, 0), g - 1);
            yi = std::min(std::max(yi, 0), g - 1);
        }
        out.points.push_back({xi, yi});
        visible.push_back(in);
    }
    return {std::move(out), std::move(visible)};
}

std::pair<LandmarkSet, std::vector<bool>> warp_landmarks(const LandmarkSet& landmarks,
                                                         const AffineParams& params) {
    return warp_landmarks(landmarks, forward_transform(params));
}

}  // namespace gmark
