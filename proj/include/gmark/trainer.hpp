#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "gmark/augment.hpp"
#include "gmark/dataset.hpp"
#include "gmark/heatmap.hpp"
#include "gmark/model.hpp"

namespace gmark {

struct TrainConfig {
    int batch_size = 8;
    float learning_rate = 0.005f;
    int epochs = 400;
    double split_ratio = 0.8;
    std::uint64_t seed = 0;
    AugmentConfig augment;
    CodecConfig codec;
    // when false the CSV seconds column is zeroed so logs are byte-reproducible;
    // in-memory history always carries real wall-clock seconds
    bool log_wall_clock = true;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;  // 1-based; 0 when no epochs ran
    double best_val_loss = 0.0;
    // parameter + buffer data snapshots, registry order
    std::vector<std::vector<float>> best_state;
};

// Deterministic shuffled split: first ceil(ratio*N) indices train, rest val
// (val kept non-empty). Needs at least 2 samples.
std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double ratio,
                                                            std::uint64_t seed);

// Full training loop: shuffle, augment on the fly, encode ground truth at the
// model's output grid, Adam per batch, un-augmented validation pass per epoch.
// A 1-sample dataset trains and validates on that same sample.
// loss_log, when given, receives "epoch,train_loss,val_loss,seconds" CSV rows
// flushed every epoch.
TrainResult train(UNet<float>& model, const Dataset& dataset, const TrainConfig& config,
                  std::ostream* loss_log = nullptr);

std::vector<std::vector<float>> snapshot_state(const UNet<float>& model);
void restore_state(UNet<float>& model, const std::vector<std::vector<float>>& state);

struct EvalMetrics {
    double mean_loss = 0.0;
    double mean_pixel_error = 0.0;     // Euclidean, on the output grid
    double within_2px = 0.0;           // fraction of landmarks
    double double_attention_rate = 0.0;  // fraction of maps with >= 2 peaks at 0.5
    struct Row {
        std::string id;
        double loss = 0.0;
        double pixel_error = 0.0;
        double worst_error = 0.0;
        int double_attention_maps = 0;
    };
    std::vector<Row> rows;
};

// use_ground_truth_as_pred short-circuits the model and scores the encoded
// ground truth against itself (oracle path for tests)
EvalMetrics evaluate(UNet<float>& model, const Dataset& dataset, const CodecConfig& codec,
                     bool use_ground_truth_as_pred = false);

}  // namespace gmark
