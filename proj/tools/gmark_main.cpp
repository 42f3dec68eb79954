#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gmark/dataset.hpp"
#include "gmark/errors.hpp"
#include "gmark/fsio.hpp"
#include "gmark/image_io.hpp"
#include "gmark/model.hpp"
#include "gmark/trainer.hpp"

namespace fs = std::filesystem;
using namespace gmark;

namespace {

HeatmapStack load_stack_json(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::BadData, path + ": invalid stack JSON: " + e.what());
    }
    try {
        return stack_from_values(j.at("count").get<int>(), j.at("grid").get<int>(),
                                 j.at("values").get<std::vector<float>>());
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::BadData, path + ": bad stack fields: " + e.what());
    }
}

HeatmapStack forward_stack(UNet<float>& model, const Tensor<float>& image) {
    const int s = model.config().input_size;
    std::vector<float> data(image.data());
    auto batch = Tensor<float>::from_data({1, 3, s, s}, std::move(data));
    auto pred = model.forward(batch, false);
    return stack_from_values(model.config().num_landmarks, model.output_grid(),
                             std::vector<float>(pred.data().begin(), pred.data().end()));
}

void run_synth(const std::string& out_dir, int count, int size, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.count = count;
    cfg.image_size = size;
    cfg.seed = seed;
    auto ds = synth_generate(cfg, out_dir);
    std::cout << "synth: wrote " << ds.size() << " samples of size " << size << "x" << size
              << " to " << out_dir << "\n";
}

struct TrainFlags {
    std::string data, out;
    int epochs = 400;
    int batch = 8;
    float lr = 0.005f;
    double split = 0.8;
    std::uint64_t seed = 0;
    int size = 64;
    int landmarks = 4;
    std::vector<int> channels{16, 32, 64};
    int radius = 10;
    bool fixed_seconds = false;
};

void run_train(const TrainFlags& f) {
    Dataset ds = load_manifest(f.data, f.size);
    if (static_cast<int>(ds.landmark_names.size()) != f.landmarks)
        throw ValueError("manifest has " + std::to_string(ds.landmark_names.size()) +
                         " landmark names, --landmarks is " + std::to_string(f.landmarks));
    ModelConfig mc;
    mc.input_size = f.size;
    mc.num_landmarks = f.landmarks;
    mc.encoder_channels = f.channels;
    mc.seed = f.seed;
    UNet<float> model(mc);

    TrainConfig tc;
    tc.batch_size = f.batch;
    tc.learning_rate = f.lr;
    tc.epochs = f.epochs;
    tc.split_ratio = f.split;
    tc.seed = f.seed;
    tc.codec.radius = f.radius;
    tc.log_wall_clock = !f.fixed_seconds;

    const fs::path model_path(f.out);
    const fs::path csv_path = model_path.parent_path() / "losses.csv";
    const std::string csv_tmp = csv_path.string() + ".tmp";
    TrainResult result;
    {
        std::ofstream log(csv_tmp, std::ios::trunc);
        if (!log) throw IoError(IoError::Kind::WriteFailed, "cannot open " + csv_tmp);
        result = train(model, ds, tc, &log);
    }
    std::error_code ec;
    fs::rename(csv_tmp, csv_path, ec);
    if (ec)
        throw IoError(IoError::Kind::WriteFailed,
                      "rename " + csv_tmp + " failed: " + ec.message());

    save_model(model, f.out);
    if (result.best_epoch > 0) {
        restore_state(model, result.best_state);
        save_model(model, f.out + ".best");
    }
    if (result.history.empty()) {
        std::cout << "train: 0 epochs, wrote untrained model to " << f.out << "\n";
    } else {
        const auto& last = result.history.back();
        std::cout << "train: final train_loss=" << last.train_loss
                  << " val_loss=" << last.val_loss << " best_val=" << result.best_val_loss
                  << " (epoch " << result.best_epoch << "), model " << f.out << "\n";
    }
}

void run_infer(const std::string& model_path, const std::string& image_path,
               const std::string& out_json, const std::string& overlay_path,
               const std::string& inject_path) {
    UNet<float> model = load_model(model_path);
    const int s = model.config().input_size;
    const int n = model.config().num_landmarks;
    const int grid = model.output_grid();

    Image original = read_image(image_path);
    Image resized = (original.width == s && original.height == s)
                        ? original
                        : resize_bilinear(original, s, s);

    HeatmapStack stack = inject_path.empty() ? forward_stack(model, image_to_tensor(resized))
                                             : load_stack_json(inject_path);
    if (stack.count != n || stack.grid != grid)
        throw ValueError("injected stack is " + std::to_string(stack.count) + "x" +
                         std::to_string(stack.grid) + ", model expects " + std::to_string(n) +
                         "x" + std::to_string(grid));

    const LandmarkSet grid_lms = decode(stack);
    nlohmann::json out;
    out["grid_size"] = grid;
    out["image_size"] = {original.width, original.height};
    auto& jg = out["landmarks"] = nlohmann::json::array();
    auto& jp = out["peak_values"] = nlohmann::json::array();
    auto& ji = out["landmarks_image"] = nlohmann::json::array();
    for (int i = 0; i < n; ++i) {
        const auto& p = grid_lms.points[static_cast<size_t>(i)];
        jg.push_back({p.x, p.y});
        jp.push_back(stack.at(i, p.y, p.x));
        ji.push_back({rescale_coord(p.x, grid, original.width),
                      rescale_coord(p.y, grid, original.height)});
    }
    write_file_atomic(out_json, out.dump(2) + "\n");
    if (!overlay_path.empty()) {
        const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
        const int rows = (n + cols - 1) / cols;
        render_overlay(resized, stack, rows, cols, overlay_path);
    }
    std::cout << "infer: wrote " << out_json << "\n";
}

void run_eval(const std::string& model_path, const std::string& data_path,
              const std::string& out_csv, int radius, bool perfect) {
    UNet<float> model = load_model(model_path);
    Dataset ds = load_manifest(data_path, model.config().input_size);
    CodecConfig codec;
    codec.radius = radius;
    EvalMetrics m = evaluate(model, ds, codec, perfect);

    std::string csv = "id,loss,mean_pixel_error,worst_pixel_error\n";
    char buf[256];
    double worst_sum = 0.0;
    for (const auto& row : m.rows) {
        std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g\n", row.id.c_str(), row.loss,
                      row.pixel_error, row.worst_error);
        csv += buf;
        worst_sum += row.worst_error;
    }
    std::snprintf(buf, sizeof buf, "mean,%.9g,%.9g,%.9g\n", m.mean_loss, m.mean_pixel_error,
                  worst_sum / static_cast<double>(m.rows.size()));
    csv += buf;
    write_file_atomic(out_csv, csv);
    std::cout << "eval: " << ds.size() << " samples, mean loss " << m.mean_loss
              << ", mean pixel error " << m.mean_pixel_error << ", within 2px " << m.within_2px
              << ", double-attention rate " << m.double_attention_rate << "\n";
}

void run_diagnose(const std::string& model_path, const std::string& data_path, float threshold,
                  double separation, const std::string& inject_path) {
    UNet<float> model = load_model(model_path);
    Dataset ds = load_manifest(data_path, model.config().input_size);
    const int n = model.config().num_landmarks;
    const int grid = model.output_grid();

    HeatmapStack injected;
    if (!inject_path.empty()) {
        injected = load_stack_json(inject_path);
        if (injected.count != n || injected.grid != grid)
            throw ValueError("injected stack does not match model layout");
    }

    long long flagged = 0, total = 0;
    for (const auto& sample : ds.samples) {
        const HeatmapStack stack = inject_path.empty()
                                       ? forward_stack(model, sample.image)
                                       : injected;
        for (int i = 0; i < n; ++i) {
            const auto peaks = detect_double_attention(stack, i, threshold, separation);
            ++total;
            if (peaks.size() < 2) continue;
            ++flagged;
            std::cout << sample.id << " landmark " << i << ": " << peaks.size() << " peaks at";
            for (const auto& pk : peaks) std::cout << " (" << pk.x << "," << pk.y << ")";
            std::cout << "\n";
        }
    }
    std::cout << "double-attention rate: "
              << (total ? static_cast<double>(flagged) / static_cast<double>(total) : 0.0) << " ("
              << flagged << " of " << total << " maps)\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"garment-style landmark detection: synthetic data, training, inference"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic quadrilateral dataset");
    std::string synth_out;
    int synth_count = 200, synth_size = 128;
    std::uint64_t synth_seed = 0;
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--count", synth_count, "number of samples")->check(CLI::Range(1, 1000000));
    synth->add_option("--size", synth_size, "image size in pixels")->check(CLI::Range(32, 4096));
    synth->add_option("--seed", synth_seed, "master seed");
    synth->callback([&] { run_synth(synth_out, synth_count, synth_size, synth_seed); });

    auto* tr = app.add_subcommand("train", "train a model on a manifest dataset");
    TrainFlags tf;
    tr->add_option("--data", tf.data, "manifest.json path")->required();
    tr->add_option("--out", tf.out, "output model path")->required();
    tr->add_option("--epochs", tf.epochs, "training epochs")->check(CLI::Range(0, 1000000));
    tr->add_option("--batch", tf.batch, "batch size")->check(CLI::Range(1, 100000));
    tr->add_option("--lr", tf.lr, "learning rate")->check(CLI::PositiveNumber);
    tr->add_option("--split", tf.split, "train fraction, in (0,1)");
    tr->add_option("--seed", tf.seed, "master seed");
    tr->add_option("--size", tf.size, "model input size")->check(CLI::Range(8, 4096));
    tr->add_option("--landmarks", tf.landmarks, "landmark count")->check(CLI::Range(1, 1024));
    tr->add_option("--channels", tf.channels, "encoder channels per stage")->delimiter(',');
    tr->add_option("--radius", tf.radius, "cone radius on the heatmap grid")
        ->check(CLI::Range(1, 1024));
    tr->add_flag("--fixed-seconds", tf.fixed_seconds,
                 "write 0.000 in the CSV seconds column for byte-reproducible logs");
    tr->callback([&] {
        if (!(tf.split > 0.0 && tf.split < 1.0))
            throw CLI::ValidationError("--split", "must be strictly between 0 and 1");
        run_train(tf);
    });

    auto* inf = app.add_subcommand("infer", "detect landmarks on one image");
    std::string inf_model, inf_image, inf_json, inf_overlay, inf_inject;
    inf->add_option("--model", inf_model, "model file")->required();
    inf->add_option("--image", inf_image, "input image (PNG or PPM)")->required();
    inf->add_option("--out-json", inf_json, "output JSON path")->required();
    inf->add_option("--overlay", inf_overlay, "optional overlay image path");
    inf->add_option("--inject-stack", inf_inject, "test hook: use this heatmap stack JSON")
        ->group("");
    inf->callback([&] { run_infer(inf_model, inf_image, inf_json, inf_overlay, inf_inject); });

    auto* ev = app.add_subcommand("eval", "score a model against a manifest dataset");
    std::string ev_model, ev_data, ev_out;
    int ev_radius = 10;
    bool ev_perfect = false;
    ev->add_option("--model", ev_model, "model file")->required();
    ev->add_option("--data", ev_data, "manifest.json path")->required();
    ev->add_option("--out", ev_out, "output metrics CSV")->required();
    ev->add_option("--radius", ev_radius, "cone radius on the heatmap grid")
        ->check(CLI::Range(1, 1024));
    ev->add_flag("--perfect", ev_perfect, "test hook: score ground truth against itself")
        ->group("");
    ev->callback([&] { run_eval(ev_model, ev_data, ev_out, ev_radius, ev_perfect); });

    auto* di = app.add_subcommand("diagnose", "report double-attention heatmaps");
    std::string di_model, di_data, di_inject;
    float di_threshold = 0.5f;
    double di_separation = 10.0;
    di->add_option("--model", di_model, "model file")->required();
    di->add_option("--data", di_data, "manifest.json path")->required();
    di->add_option("--threshold", di_threshold, "peak threshold, in (0,1)");
    di->add_option("--separation", di_separation, "minimum peak separation in px");
    di->add_option("--inject-stack", di_inject, "test hook: use this heatmap stack JSON")
        ->group("");
    di->callback([&] {
        if (!(di_threshold > 0.0f && di_threshold < 1.0f))
            throw CLI::ValidationError("--threshold", "must be strictly between 0 and 1");
        if (!(di_separation >= 1.0))
            throw CLI::ValidationError("--separation", "must be at least 1");
        run_diagnose(di_model, di_data, di_threshold, di_separation, di_inject);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {  // --help and friends
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
