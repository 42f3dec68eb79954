#include "gmark/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "gmark/adam.hpp"
#include "gmark/errors.hpp"
#include "gmark/loss.hpp"
#include "gmark/ops.hpp"
#include "gmark/rng.hpp"

namespace gmark {
namespace {

// seed-stream tags so shuffle / augment / split draws never collide
constexpr std::uint64_t kSplitTag = 1;
constexpr std::uint64_t kShuffleTag = 2;
constexpr std::uint64_t kAugmentTag = 3;

struct Prepared {
    Tensor<float> image;  // [3,S,S]
    Tensor<float> gt;     // [n,G,G]
    IndicatorMask ind;
};

Prepared prepare(const Sample& sample, const CodecConfig& grid_codec, int image_size) {
    Prepared p;
    p.image = sample.image;
    const auto grid_lms = rescale(sample.landmarks, image_size, grid_codec.grid_size);
    const auto stack = encode(grid_lms, grid_codec);
    p.gt = to_tensor<float>(stack);
    p.ind = indicator(stack);
    return p;
}

Tensor<float> batch_input(const std::vector<Prepared>& batch, int image_size) {
    const int b = static_cast<int>(batch.size());
    const size_t per = static_cast<size_t>(3) * image_size * image_size;
    std::vector<float> data(per * b);
    for (int i = 0; i < b; ++i)
        std::copy(batch[static_cast<size_t>(i)].image.data().begin(),
                  batch[static_cast<size_t>(i)].image.data().end(),
                  data.begin() + static_cast<long>(per) * i);
    return Tensor<float>::from_data({b, 3, image_size, image_size}, std::move(data));
}

Tensor<float> batch_loss(const Tensor<float>& pred, const std::vector<Prepared>& batch) {
    Tensor<float> total;
    for (size_t i = 0; i < batch.size(); ++i) {
        auto term = weighted_loss_graph(select0(pred, static_cast<int>(i)), batch[i].gt,
                                        batch[i].ind);
        total = total.defined() ? add(total, term) : term;
    }
    return scalar_mul(total, 1.0f / static_cast<float>(batch.size()));
}

void check_dataset(const UNet<float>& model, const Dataset& dataset) {
    if (dataset.samples.empty()) throw ValueError("dataset is empty");
    const int s = model.config().input_size;
    const int n = model.config().num_landmarks;
    for (const auto& sample : dataset.samples) {
        const Shape want{3, s, s};
        if (!same_shape(sample.image.shape(), want))
            throw ShapeError("sample '" + sample.id + "': image shape " +
                             shape_str(sample.image.shape()) + ", model expects " +
                             shape_str(want));
        if (sample.landmarks.count() != n || sample.landmarks.grid_size != s)
            throw ShapeError("sample '" + sample.id + "': " +
                             std::to_string(sample.landmarks.count()) + " landmarks on grid " +
                             std::to_string(sample.landmarks.grid_size) + ", model expects " +
                             std::to_string(n) + " on " + std::to_string(s));
    }
}

std::string csv_row(const EpochRecord& r, bool log_wall_clock) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.3f\n", r.epoch, r.train_loss, r.val_loss,
                  log_wall_clock ? r.seconds : 0.0);
    return buf;
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw ValueError("train config: batch_size must be >= 1");
    if (epochs < 0) throw ValueError("train config: epochs must be >= 0");
    if (!(learning_rate > 0.0f) || !std::isfinite(learning_rate))
        throw ValueError("train config: learning_rate must be positive and finite");
    if (!(split_ratio > 0.0 && split_ratio < 1.0))
        throw ValueError("train config: split_ratio must be in (0,1)");
    if (codec.radius < 1) throw ValueError("train config: codec radius must be >= 1");
}

std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double ratio,
                                                            std::uint64_t seed) {
    if (n < 2) throw ValueError("split: need at least 2 samples, got " + std::to_string(n));
    if (!(ratio > 0.0 && ratio < 1.0)) throw ValueError("split: ratio must be in (0,1)");
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    auto rng = make_rng(derive_seed(seed, kSplitTag));
    std::shuffle(idx.begin(), idx.end(), rng);
    // epsilon guards ceil against 0.8*10 style round-up artifacts
    int train_n = static_cast<int>(std::ceil(ratio * n - 1e-9));
    train_n = std::clamp(train_n, 1, n - 1);
    return {std::vector<int>(idx.begin(), idx.begin() + train_n),
            std::vector<int>(idx.begin() + train_n, idx.end())};
}

std::vector<std::vector<float>> snapshot_state(const UNet<float>& model) {
    std::vector<std::vector<float>> state;
    for (const auto& [name, t] : model.parameters()) state.push_back(t.data());
    for (const auto& [name, t] : model.buffers()) state.push_back(t.data());
    return state;
}

void restore_state(UNet<float>& model, const std::vector<std::vector<float>>& state) {
    std::vector<Tensor<float>> tensors;
    for (const auto& [name, t] : model.parameters()) tensors.push_back(t);
    for (const auto& [name, t] : model.buffers()) tensors.push_back(t);
    if (state.size() != tensors.size())
        throw ValueError("restore_state: snapshot does not match model layout");
    for (size_t i = 0; i < tensors.size(); ++i) {
        if (state[i].size() != tensors[i].data().size())
            throw ValueError("restore_state: tensor " + std::to_string(i) + " size mismatch");
        tensors[i].data() = state[i];
    }
}

TrainResult train(UNet<float>& model, const Dataset& dataset, const TrainConfig& config,
                  std::ostream* loss_log) {
    config.validate();
    check_dataset(model, dataset);
    const int s = model.config().input_size;
    const int grid = model.output_grid();
    const CodecConfig grid_codec{config.codec.radius, grid};
    const int n_samples = dataset.size();

    std::vector<int> train_idx, val_idx;
    if (n_samples == 1) {
        train_idx = val_idx = {0};  // overfit-one smoke runs: validate on the same sample
    } else {
        std::tie(train_idx, val_idx) = split_indices(n_samples, config.split_ratio, config.seed);
    }

    // validation never augments, so its encodings are loop invariants
    std::vector<Prepared> val_prepared;
    for (int i : val_idx)
        val_prepared.push_back(prepare(dataset.samples[static_cast<size_t>(i)], grid_codec, s));

    auto params = model.parameter_tensors();
    AdamState<float> adam;
    adam.init(params);

    TrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    if (loss_log) {
        *loss_log << "epoch,train_loss,val_loss,seconds";
        *loss_log << "\n";
        loss_log->flush();
    }

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        auto order = train_idx;
        auto shuffle_rng = make_rng(derive_seed(config.seed, kShuffleTag,
                                                static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double train_sum = 0.0;
        int batch_index = 0;
        for (size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
            const size_t stop = std::min(order.size(), start + config.batch_size);
            std::vector<Prepared> batch;
            for (size_t k = start; k < stop; ++k) {
                const int si = order[k];
                const auto& sample = dataset.samples[static_cast<size_t>(si)];
                auto rng = make_rng(derive_seed(
                    config.seed, kAugmentTag,
                    (static_cast<std::uint64_t>(epoch) << 32) | static_cast<std::uint32_t>(si)));
                const auto aug = sample_params(config.augment, s, rng);
                Sample warped;
                warped.id = sample.id;
                warped.image = warp_image(sample.image, aug);
                warped.landmarks = warp_landmarks(sample.landmarks, aug).first;
                batch.push_back(prepare(warped, grid_codec, s));
            }
            auto pred = model.forward(batch_input(batch, s), true);
            auto loss = batch_loss(pred, batch);
            const double value = loss.value();
            if (!std::isfinite(value))
                throw TrainError("non-finite training loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batch_index));
            model.zero_grad();
            backward(loss);
            adam_step(params, adam, config.learning_rate);
            train_sum += value * static_cast<double>(stop - start);
        }

        double val_sum = 0.0;
        for (size_t start = 0; start < val_prepared.size(); start += config.batch_size) {
            const size_t stop = std::min(val_prepared.size(), start + config.batch_size);
            std::vector<Prepared> batch(val_prepared.begin() + static_cast<long>(start),
                                        val_prepared.begin() + static_cast<long>(stop));
            auto pred = model.forward(batch_input(batch, s), false);
            const double value = batch_loss(pred, batch).value();
            if (!std::isfinite(value))
                throw TrainError("non-finite validation loss at epoch " + std::to_string(epoch));
            val_sum += value * static_cast<double>(stop - start);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = train_sum / static_cast<double>(order.size());
        rec.val_loss = val_sum / static_cast<double>(val_prepared.size());
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(rec);
        if (loss_log) {
            *loss_log << csv_row(rec, config.log_wall_clock);
            loss_log->flush();
        }
        if (rec.val_loss < result.best_val_loss) {
            result.best_val_loss = rec.val_loss;
            result.best_epoch = epoch;
            result.best_state = snapshot_state(model);
        }
    }
    if (result.best_epoch == 0) result.best_val_loss = 0.0;
    return result;
}

EvalMetrics evaluate(UNet<float>& model, const Dataset& dataset, const CodecConfig& codec,
                     bool use_ground_truth_as_pred) {
    check_dataset(model, dataset);
    const int s = model.config().input_size;
    const int grid = model.output_grid();
    const CodecConfig grid_codec{codec.radius, grid};
    const double min_sep = static_cast<double>(grid_codec.radius);

    EvalMetrics m;
    long long landmark_total = 0, within = 0, map_total = 0, da_maps = 0;
    double err_sum = 0.0;
    for (const auto& sample : dataset.samples) {
        const auto grid_lms = rescale(sample.landmarks, s, grid);
        const auto gt_stack = encode(grid_lms, grid_codec);
        const auto ind = indicator(gt_stack);

        HeatmapStack pred_stack;
        if (use_ground_truth_as_pred) {
            pred_stack = gt_stack;
        } else {
            std::vector<Prepared> one(1);
            one[0].image = sample.image;
            auto pred = model.forward(batch_input(one, s), false);
            pred_stack = stack_from_values(
                gt_stack.count, grid,
                std::vector<float>(pred.data().begin(), pred.data().end()));
        }

        EvalMetrics::Row row;
        row.id = sample.id;
        row.loss = weighted_loss(pred_stack, gt_stack, ind).value;
        const auto decoded = decode(pred_stack);
        double sample_err = 0.0;
        for (int i = 0; i < decoded.count(); ++i) {
            const double dx = decoded.points[static_cast<size_t>(i)].x -
                              grid_lms.points[static_cast<size_t>(i)].x;
            const double dy = decoded.points[static_cast<size_t>(i)].y -
                              grid_lms.points[static_cast<size_t>(i)].y;
            const double err = std::hypot(dx, dy);
            sample_err += err;
            err_sum += err;
            row.worst_error = std::max(row.worst_error, err);
            if (err <= 2.0) ++within;
            ++landmark_total;
            if (detect_double_attention(pred_stack, i, 0.5f, min_sep).size() >= 2)
                ++row.double_attention_maps;
            ++map_total;
        }
        row.pixel_error = sample_err / decoded.count();
        da_maps += row.double_attention_maps;
        m.mean_loss += row.loss;
        m.rows.push_back(std::move(row));
    }
    const double n = static_cast<double>(dataset.size());
    m.mean_loss /= n;
    m.mean_pixel_error = err_sum / static_cast<double>(landmark_total);
    m.within_2px = static_cast<double>(within) / static_cast<double>(landmark_total);
    m.double_attention_rate = static_cast<double>(da_maps) / static_cast<double>(map_total);
    return m;
}

}  // namespace gmark
