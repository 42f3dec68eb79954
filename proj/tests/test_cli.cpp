#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmark/heatmap.hpp"
#include "gmark/image_io.hpp"

using namespace gmark;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("gmark_cli_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

struct CmdResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

CmdResult run_cli(const std::string& args, const fs::path& scratch) {
    const fs::path out = scratch / "cmd_stdout.txt";
    const fs::path err = scratch / "cmd_stderr.txt";
    const std::string cmd = std::string(GMARK_CLI_PATH) + " " + args + " >" + out.string() +
                            " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    CmdResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

// shared tiny setup: 6-sample synthetic set at 32 px, model grid 8, radius 3
const std::string kSynthArgs = "synth --count 6 --size 32 --seed 5 --out ";
const std::string kTrainShape = " --size 32 --channels 8,16 --radius 3 --seed 5";

std::string make_dataset(const TempDir& tmp) {
    const fs::path dir = tmp.path / "data";
    auto r = run_cli(kSynthArgs + dir.string(), tmp.path);
    REQUIRE(r.code == 0);
    return (dir / "manifest.json").string();
}

std::string make_model(const TempDir& tmp, const std::string& manifest, int epochs = 0) {
    const fs::path model = tmp.path / "model.gmk";
    auto r = run_cli("train --data " + manifest + " --out " + model.string() + " --epochs " +
                         std::to_string(epochs) + kTrainShape,
                     tmp.path);
    REQUIRE(r.code == 0);
    return model.string();
}

nlohmann::json stack_to_json(const HeatmapStack& s) {
    nlohmann::json j;
    j["count"] = s.count;
    j["grid"] = s.grid;
    j["values"] = s.values;
    return j;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

}  // namespace

TEST_CASE("cli usage errors exit 2") {
    TempDir tmp;
    CHECK(run_cli("", tmp.path).code == 2);                       // subcommand required
    CHECK(run_cli("frobnicate", tmp.path).code == 2);             // unknown subcommand
    CHECK(run_cli("synth", tmp.path).code == 2);                  // --out missing
    CHECK(run_cli("synth --out x --count 0", tmp.path).code == 2);
    CHECK(run_cli("synth --out x --size 8", tmp.path).code == 2);
    CHECK(run_cli("train --data x", tmp.path).code == 2);         // --out missing
    CHECK(run_cli("train --data x --out y --lr -1", tmp.path).code == 2);
    CHECK(run_cli("train --data x --out y --split 1.0", tmp.path).code == 2);
    CHECK(run_cli("diagnose --model x --data y --threshold 1.5", tmp.path).code == 2);
    CHECK(run_cli("diagnose --model x --data y --separation 0.2", tmp.path).code == 2);
    CHECK(run_cli("infer --model x --out-json y", tmp.path).code == 2);  // --image missing
    CHECK(run_cli("--help", tmp.path).code == 0);
    CHECK(run_cli("train --help", tmp.path).code == 0);
}

TEST_CASE("cli runtime errors exit 1 and name the problem") {
    TempDir tmp;
    const fs::path absent = tmp.path / "no_such_model.gmk";
    auto img = Image::blank(32, 32, 90);
    write_image(img, (tmp.path / "img.png").string());

    auto r = run_cli("infer --model " + absent.string() + " --image " +
                         (tmp.path / "img.png").string() + " --out-json " +
                         (tmp.path / "out.json").string(),
                     tmp.path);
    CHECK(r.code == 1);
    CHECK(r.err.rfind("error:", 0) == 0);
    CHECK(r.err.find("no_such_model.gmk") != std::string::npos);

    // malformed manifest
    write_text(tmp.path / "bad.json", "{broken");
    const std::string model = make_model(tmp, make_dataset(tmp));
    auto r2 = run_cli("eval --model " + model + " --data " + (tmp.path / "bad.json").string() +
                          " --out " + (tmp.path / "m.csv").string() + " --radius 3",
                      tmp.path);
    CHECK(r2.code == 1);

    // unwritable output location
    auto r3 = run_cli("eval --model " + model + " --data " +
                          (tmp.path / "data" / "manifest.json").string() +
                          " --out /nonexistent_dir_for_sure/m.csv --radius 3",
                      tmp.path);
    CHECK(r3.code == 1);
    CHECK(r3.err.rfind("error:", 0) == 0);
}

TEST_CASE("synth is reproducible byte for byte") {
    TempDir tmp;
    const fs::path a = tmp.path / "a";
    const fs::path b = tmp.path / "b";
    REQUIRE(run_cli(kSynthArgs + a.string(), tmp.path).code == 0);
    REQUIRE(run_cli(kSynthArgs + b.string(), tmp.path).code == 0);
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    CHECK(!slurp(a / "manifest.json").empty());

    // every image file identical
    int files = 0;
    for (const auto& entry : fs::directory_iterator(a / "images")) {
        const auto name = entry.path().filename();
        CHECK(slurp(entry.path()) == slurp(b / "images" / name));
        ++files;
    }
    CHECK(files == 6);

    // a different seed changes the pixels
    const fs::path c = tmp.path / "c";
    REQUIRE(run_cli("synth --count 6 --size 32 --seed 6 --out " + c.string(), tmp.path).code == 0);
    CHECK(slurp(a / "manifest.json") != slurp(c / "manifest.json"));
}

TEST_CASE("train writes a csv row per epoch") {
    TempDir tmp;
    const std::string manifest = make_dataset(tmp);
    const fs::path model = tmp.path / "model.gmk";
    auto r = run_cli("train --data " + manifest + " --out " + model.string() + " --epochs 1" +
                         kTrainShape,
                     tmp.path);
    REQUIRE(r.code == 0);
    CHECK(fs::exists(model));
    CHECK(fs::exists(tmp.path / "model.gmk.best"));

    const std::string csv = slurp(tmp.path / "losses.csv");
    std::istringstream in(csv);
    std::string header, row, extra;
    REQUIRE(std::getline(in, header));
    CHECK(header == "epoch,train_loss,val_loss,seconds");
    REQUIRE(std::getline(in, row));
    CHECK(row.rfind("1,", 0) == 0);
    CHECK(!std::getline(in, extra));

    // epochs 0: header only, no .best model
    TempDir tmp2;
    const std::string manifest2 = make_dataset(tmp2);
    const fs::path model2 = tmp2.path / "model.gmk";
    REQUIRE(run_cli("train --data " + manifest2 + " --out " + model2.string() + " --epochs 0" +
                        kTrainShape,
                    tmp2.path)
                .code == 0);
    CHECK(slurp(tmp2.path / "losses.csv") == "epoch,train_loss,val_loss,seconds\n");
    CHECK(fs::exists(model2));
    CHECK(!fs::exists(tmp2.path / "model.gmk.best"));
}

TEST_CASE("identical train invocations produce identical artifacts") {
    TempDir tmp;
    const std::string manifest = make_dataset(tmp);
    const auto train_into = [&](const fs::path& dir) {
        fs::create_directories(dir);
        auto r = run_cli("train --data " + manifest + " --out " + (dir / "model.gmk").string() +
                             " --epochs 2 --fixed-seconds" + kTrainShape,
                         tmp.path);
        REQUIRE(r.code == 0);
    };
    train_into(tmp.path / "run1");
    train_into(tmp.path / "run2");

    CHECK(slurp(tmp.path / "run1" / "losses.csv") == slurp(tmp.path / "run2" / "losses.csv"));
    CHECK(slurp(tmp.path / "run1" / "losses.csv").find(",0.000\n") != std::string::npos);
    CHECK(slurp(tmp.path / "run1" / "model.gmk") == slurp(tmp.path / "run2" / "model.gmk"));
    CHECK(slurp(tmp.path / "run1" / "model.gmk.best") ==
          slurp(tmp.path / "run2" / "model.gmk.best"));
}

TEST_CASE("infer reports injected peaks faithfully") {
    TempDir tmp;
    const std::string manifest = make_dataset(tmp);
    const std::string model = make_model(tmp, manifest);
    auto img = Image::blank(32, 32, 70);
    const std::string img_path = (tmp.path / "img.png").string();
    write_image(img, img_path);

    // ground-truth cones on the model's 8x8 output grid
    LandmarkSet gt{{{1, 2}, {6, 1}, {5, 6}, {2, 5}}, 8};
    auto stack = encode(gt, {2, 8});
    write_text(tmp.path / "stack.json", stack_to_json(stack).dump());

    const std::string json_path = (tmp.path / "out.json").string();
    auto r = run_cli("infer --model " + model + " --image " + img_path + " --out-json " +
                         json_path + " --inject-stack " + (tmp.path / "stack.json").string() +
                         " --overlay " + (tmp.path / "overlay.png").string(),
                     tmp.path);
    REQUIRE(r.code == 0);

    auto j = nlohmann::json::parse(slurp(json_path));
    CHECK(j.at("grid_size").get<int>() == 8);
    CHECK(j.at("image_size").get<std::vector<int>>() == std::vector<int>{32, 32});
    REQUIRE(j.at("landmarks").size() == 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(j["landmarks"][i][0].get<int>() == gt.points[static_cast<size_t>(i)].x);
        CHECK(j["landmarks"][i][1].get<int>() == gt.points[static_cast<size_t>(i)].y);
        CHECK(j["peak_values"][i].get<float>() == 1.0f);
        // image coordinates are the grid ones rescaled 8 -> 32
        CHECK(j["landmarks_image"][i][0].get<int>() ==
              rescale_coord(gt.points[static_cast<size_t>(i)].x, 8, 32));
        CHECK(j["landmarks_image"][i][1].get<int>() ==
              rescale_coord(gt.points[static_cast<size_t>(i)].y, 8, 32));
    }
    auto overlay = read_image((tmp.path / "overlay.png").string());
    CHECK(overlay.width == 64);   // 4 maps tile 2x2 at 32 px
    CHECK(overlay.height == 64);

    // model-driven inference is deterministic across runs
    const std::string json2 = (tmp.path / "out2.json").string();
    const std::string json3 = (tmp.path / "out3.json").string();
    REQUIRE(run_cli("infer --model " + model + " --image " + img_path + " --out-json " + json2,
                    tmp.path)
                .code == 0);
    REQUIRE(run_cli("infer --model " + model + " --image " + img_path + " --out-json " + json3,
                    tmp.path)
                .code == 0);
    const std::string bytes = slurp(json2);
    CHECK(bytes == slurp(json3));
    auto jm = nlohmann::json::parse(bytes);
    for (const auto& v : jm.at("peak_values")) {
        CHECK(v.get<float>() > 0.0f);
        CHECK(v.get<float>() < 1.0f);
    }

    // stack that disagrees with the model layout is a runtime error
    auto bad = encode(LandmarkSet{{{1, 1}}, 8}, {2, 8});
    write_text(tmp.path / "bad_stack.json", stack_to_json(bad).dump());
    CHECK(run_cli("infer --model " + model + " --image " + img_path + " --out-json " +
                      (tmp.path / "out4.json").string() + " --inject-stack " +
                      (tmp.path / "bad_stack.json").string(),
                  tmp.path)
              .code == 1);
}

TEST_CASE("eval perfect mode scores zero error") {
    TempDir tmp;
    const std::string manifest = make_dataset(tmp);
    const std::string model = make_model(tmp, manifest);
    const fs::path csv_path = tmp.path / "metrics.csv";
    auto r = run_cli("eval --model " + model + " --data " + manifest + " --out " +
                         csv_path.string() + " --radius 3 --perfect",
                     tmp.path);
    REQUIRE(r.code == 0);

    std::istringstream in(slurp(csv_path));
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "id,loss,mean_pixel_error,worst_pixel_error");
    int rows = 0;
    bool saw_mean = false;
    double loss_sum = 0.0;
    std::string mean_line;
    while (std::getline(in, line)) {
        if (line.rfind("mean,", 0) == 0) {
            saw_mean = true;
            mean_line = line;
            continue;
        }
        ++rows;
        // id,loss,mean_pixel_error,worst_pixel_error with all numbers zero
        const auto first = line.find(',');
        std::istringstream fields(line.substr(first + 1));
        std::string cell;
        int k = 0;
        while (std::getline(fields, cell, ',')) {
            CHECK(std::stod(cell) == 0.0);
            if (k == 0) loss_sum += std::stod(cell);
            ++k;
        }
        CHECK(k == 3);
    }
    CHECK(rows == 6);
    REQUIRE(saw_mean);
    CHECK(mean_line == "mean,0,0,0");
    CHECK(loss_sum == 0.0);

    // two identical eval runs agree byte for byte
    const fs::path csv2 = tmp.path / "metrics2.csv";
    REQUIRE(run_cli("eval --model " + model + " --data " + manifest + " --out " + csv2.string() +
                        " --radius 3",
                    tmp.path)
                .code == 0);
    const fs::path csv3 = tmp.path / "metrics3.csv";
    REQUIRE(run_cli("eval --model " + model + " --data " + manifest + " --out " + csv3.string() +
                        " --radius 3",
                    tmp.path)
                .code == 0);
    CHECK(slurp(csv2) == slurp(csv3));
}

TEST_CASE("diagnose counts double attention peaks") {
    TempDir tmp;
    const std::string manifest = make_dataset(tmp);
    const std::string model = make_model(tmp, manifest);

    // clean ground-truth cones: no map has two qualifying peaks
    LandmarkSet gt{{{1, 2}, {6, 1}, {5, 6}, {2, 5}}, 8};
    write_text(tmp.path / "clean.json", stack_to_json(encode(gt, {2, 8})).dump());
    auto clean = run_cli("diagnose --model " + model + " --data " + manifest +
                             " --separation 3 --inject-stack " +
                             (tmp.path / "clean.json").string(),
                         tmp.path);
    REQUIRE(clean.code == 0);
    CHECK(clean.out.find("double-attention rate: 0 (0 of 24 maps)") != std::string::npos);

    // map 0 gets a second cone far from the first: exactly 2 peaks
    auto two = encode(gt, {2, 8});
    auto extra = encode(LandmarkSet{{{6, 6}}, 8}, {2, 8});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            two.at(0, y, x) = std::min(1.0f, two.at(0, y, x) + extra.at(0, y, x));
    write_text(tmp.path / "double.json", stack_to_json(two).dump());
    auto doubled = run_cli("diagnose --model " + model + " --data " + manifest +
                               " --separation 3 --inject-stack " +
                               (tmp.path / "double.json").string(),
                           tmp.path);
    REQUIRE(doubled.code == 0);
    CHECK(doubled.out.find("landmark 0: 2 peaks at") != std::string::npos);
    CHECK(doubled.out.find("(6 of 24 maps)") != std::string::npos);  // map 0 of all 6 samples
}
