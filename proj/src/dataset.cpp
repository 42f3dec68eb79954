#include "gmark/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include <json.hpp>

#include "gmark/errors.hpp"
#include "gmark/fsio.hpp"
#include "gmark/rng.hpp"

namespace gmark {
namespace {

const char* kQuadNames[4] = {"top_left", "top_right", "bottom_right", "bottom_left"};

// even-odd crossing test against pixel center (x, y)
bool inside_polygon(const std::vector<Landmark>& poly, double x, double y) {
    bool in = false;
    const size_t n = poly.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        const double xi = poly[i].x, yi = poly[i].y;
        const double xj = poly[j].x, yj = poly[j].y;
        if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
    }
    return in;
}

unsigned char clamp_byte(int v) {
    return static_cast<unsigned char>(std::clamp(v, 0, 255));
}

}  // namespace

Dataset load_manifest(const std::string& path, int target_size) {
    if (target_size < 2) throw ValueError("load_manifest: target size must be >= 2");
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::BadData, path + ": invalid JSON: " + e.what());
    }
    Dataset ds;
    try {
        ds.landmark_names = root.at("landmark_names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::BadData, path + ": bad landmark_names: " + e.what());
    }
    if (ds.landmark_names.empty())
        throw IoError(IoError::Kind::BadData, path + ": landmark_names is empty");
    if (!root.contains("entries") || !root["entries"].is_array())
        throw IoError(IoError::Kind::BadData, path + ": missing entries array");

    const auto base_dir = std::filesystem::path(path).parent_path();
    int index = 0;
    for (const auto& entry : root["entries"]) {
        const std::string where = path + ": entry " + std::to_string(index);
        std::string id, image_rel;
        std::vector<std::vector<double>> coords;
        try {
            id = entry.at("id").get<std::string>();
            image_rel = entry.at("image").get<std::string>();
            coords = entry.at("landmarks").get<std::vector<std::vector<double>>>();
        } catch (const nlohmann::json::exception& e) {
            throw IoError(IoError::Kind::BadData, where + ": " + e.what());
        }
        if (coords.size() != ds.landmark_names.size())
            throw IoError(IoError::Kind::BadData,
                          where + " ('" + id + "'): expected " +
                              std::to_string(ds.landmark_names.size()) + " landmarks, got " +
                              std::to_string(coords.size()));
        Image img;
        try {
            img = read_image((base_dir / image_rel).string());
        } catch (const IoError& e) {
            throw IoError(e.kind(), where + " ('" + id + "'): " + e.what());
        }
        Sample sample;
        sample.id = id;
        sample.landmarks.grid_size = target_size;
        for (size_t k = 0; k < coords.size(); ++k) {
            if (coords[k].size() != 2)
                throw IoError(IoError::Kind::BadData,
                              where + " ('" + id + "'): landmark " + std::to_string(k) +
                                  " is not an [x, y] pair");
            const long x = std::llround(coords[k][0]);
            const long y = std::llround(coords[k][1]);
            if (x < 0 || x >= img.width || y < 0 || y >= img.height)
                throw IoError(IoError::Kind::BadData,
                              where + " ('" + id + "'): landmark " + std::to_string(k) + " (" +
                                  std::to_string(x) + "," + std::to_string(y) +
                                  ") outside image " + std::to_string(img.width) + "x" +
                                  std::to_string(img.height));
            sample.landmarks.points.push_back(
                {rescale_coord(static_cast<int>(x), img.width, target_size),
                 rescale_coord(static_cast<int>(y), img.height, target_size)});
        }
        if (img.width != target_size || img.height != target_size)
            img = resize_bilinear(img, target_size, target_size);
        sample.image = image_to_tensor(img);
        ds.samples.push_back(std::move(sample));
        ++index;
    }
    return ds;
}

Dataset generate_quads(const SynthConfig& config) {
    if (config.count < 1) throw ValueError("generate_quads: count must be >= 1");
    const int s = config.image_size;
    if (s < 32) throw ValueError("generate_quads: image size must be >= 32");
    // +1.5 absorbs corner rounding so the size/8 margin always survives
    const double margin = s / 8.0 + 1.5;
    Dataset ds;
    ds.landmark_names.assign(kQuadNames, kQuadNames + 4);
    for (int i = 0; i < config.count; ++i) {
        auto rng = make_rng(derive_seed(config.seed, 0x5158, static_cast<std::uint64_t>(i)));
        auto unit = [&] { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); };
        // tilt bounded away from both 0 and 45 degrees: a full-circle rotation
        // would make corner identity unrecoverable (a w x h rectangle at theta
        // and an h x w one at theta+90 are the same image with permuted
        // corners), while exactly 0 would contradict "axis-unaligned"
        const double kPi = 3.14159265358979323846;
        const double tilt = (5.0 + 25.0 * unit()) * kPi / 180.0;
        const double theta = unit() < 0.5 ? tilt : -tilt;
        const double half_w = (0.125 + 0.095 * unit()) * s;
        const double half_h = (0.125 + 0.095 * unit()) * s;
        const double c = std::cos(theta), sn = std::sin(theta);
        // rectangle-frame corners: TL, TR, BR, BL (clockwise on screen)
        const double fx[4] = {-half_w, half_w, half_w, -half_w};
        const double fy[4] = {-half_h, -half_h, half_h, half_h};
        double dx[4], dy[4], max_dx = 0.0, max_dy = 0.0;
        for (int k = 0; k < 4; ++k) {
            dx[k] = c * fx[k] - sn * fy[k];
            dy[k] = sn * fx[k] + c * fy[k];
            max_dx = std::max(max_dx, std::abs(dx[k]));
            max_dy = std::max(max_dy, std::abs(dy[k]));
        }
        const double x_lo = margin + max_dx, x_hi = (s - 1) - margin - max_dx;
        const double y_lo = margin + max_dy, y_hi = (s - 1) - margin - max_dy;
        const double cx = x_lo + (x_hi - x_lo) * unit();
        const double cy = y_lo + (y_hi - y_lo) * unit();

        Sample sample;
        sample.id = "quad_" + std::to_string(i);
        sample.landmarks.grid_size = s;
        for (int k = 0; k < 4; ++k)
            sample.landmarks.points.push_back({static_cast<int>(std::llround(cx + dx[k])),
                                               static_cast<int>(std::llround(cy + dy[k]))});

        auto pick = [&](int lo, int hi) {
            return std::uniform_int_distribution<int>(lo, hi)(rng);
        };
        const int background = pick(0, 255);
        // gray-level contrast of at least 0.3 between rectangle and background
        const int fill = background <= 178 ? pick(background + 77, 255)
                                           : pick(0, background - 77);
        std::normal_distribution<double> noise(0.0, 6.0);
        Image img = Image::blank(s, s);
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                const int base =
                    inside_polygon(sample.landmarks.points, x, y) ? fill : background;
                unsigned char* px = img.at(x, y);
                for (int ch = 0; ch < 3; ++ch)
                    px[ch] = clamp_byte(base + static_cast<int>(std::lround(noise(rng))));
            }
        sample.image = image_to_tensor(img);
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

void save_dataset(const Dataset& dataset, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    if (ec)
        throw IoError(IoError::Kind::WriteFailed, "cannot create " + dir + ": " + ec.message());
    nlohmann::json root;
    root["landmark_names"] = dataset.landmark_names;
    auto& entries = root["entries"] = nlohmann::json::array();
    for (const auto& sample : dataset.samples) {
        const std::string rel = "images/" + sample.id + ".png";
        write_image(tensor_to_image(sample.image), (fs::path(dir) / rel).string());
        auto coords = nlohmann::json::array();
        for (const auto& p : sample.landmarks.points) coords.push_back({p.x, p.y});
        entries.push_back({{"id", sample.id}, {"image", rel}, {"landmarks", coords}});
    }
    write_file_atomic((fs::path(dir) / "manifest.json").string(), root.dump(2) + "\n");
}

Dataset synth_generate(const SynthConfig& config, const std::string& dir) {
    Dataset ds = generate_quads(config);
    save_dataset(ds, dir);
    return ds;
}

Image compose_overlay(const Image& base, const HeatmapStack& stack, int rows, int cols) {
    if (stack.count < 1 || stack.grid < 1) throw ValueError("overlay: empty stack");
    if (rows < 1 || cols < 1 || rows * cols < stack.count)
        throw ValueError("overlay: grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " cannot hold " + std::to_string(stack.count) + " heatmaps");
    const int s = base.width;
    if (base.height != s) throw ValueError("overlay: base image must be square");
    constexpr double kAlpha = 0.6;
    Image out = Image::blank(cols * s, rows * s);
    for (int i = 0; i < stack.count; ++i) {
        const int ox = (i % cols) * s;
        const int oy = (i / cols) * s;
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                // nearest heatmap cell for this panel pixel
                const int hy = std::min(y * stack.grid / s, stack.grid - 1);
                const int hx = std::min(x * stack.grid / s, stack.grid - 1);
                const double v = std::clamp<double>(stack.at(i, hy, hx), 0.0, 1.0);
                // 0 -> black, 0.5 -> red, 1 -> yellow
                const double cr = std::min(1.0, 2.0 * v) * 255.0;
                const double cg = std::max(0.0, 2.0 * v - 1.0) * 255.0;
                const unsigned char* src = base.at(x, y);
                unsigned char* dst = out.at(ox + x, oy + y);
                dst[0] = clamp_byte(
                    static_cast<int>(std::lround(src[0] * (1.0 - kAlpha) + cr * kAlpha)));
                dst[1] = clamp_byte(
                    static_cast<int>(std::lround(src[1] * (1.0 - kAlpha) + cg * kAlpha)));
                dst[2] = clamp_byte(static_cast<int>(std::lround(src[2] * (1.0 - kAlpha))));
            }
    }
    return out;
}

void render_overlay(const Image& base, const HeatmapStack& stack, int rows, int cols,
                    const std::string& path) {
    write_image(compose_overlay(base, stack, rows, cols), path);
}

}  // namespace gmark
