#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gmark/ops.hpp"
#include "gmark/tensor.hpp"

namespace gmark {

struct ModelConfig {
    int input_size = 64;
    int num_landmarks = 4;
    std::vector<int> encoder_channels{16, 32, 64};
    int blocks_per_stage = 2;
    std::uint64_t seed = 0;

    int stages() const { return static_cast<int>(encoder_channels.size()); }

    void validate() const {
        if (num_landmarks < 1) throw ValueError("model config: num_landmarks must be >= 1");
        if (blocks_per_stage < 1) throw ValueError("model config: blocks_per_stage must be >= 1");
        if (encoder_channels.size() < 2)
            throw ValueError("model config: need at least 2 encoder stages to reach the S/4 grid");
        for (int c : encoder_channels)
            if (c < 1) throw ValueError("model config: encoder channels must be >= 1");
        const int down = 1 << stages();  // stem halves once, each later stage halves again
        if (input_size < down || input_size % down != 0 || input_size % 4 != 0)
            throw ValueError("model config: input_size " + std::to_string(input_size) +
                             " must be divisible by 4 and by 2^stages=" + std::to_string(down));
    }

    bool operator==(const ModelConfig&) const = default;
};

// Residual U-Net: stem conv (stride 2) + residual encoder stages, decoder of
// upsample+skip-concat+conv steps down to the S/4 grid, 1x1 sigmoid head.
template <class S>
class UNet {
public:
    explicit UNet(ModelConfig config) : config_(std::move(config)) {
        config_.validate();
        std::mt19937_64 rng(config_.seed);
        build(rng);
    }

    const ModelConfig& config() const { return config_; }
    int output_grid() const { return config_.input_size / 4; }

    // Trainable parameters / normalization running buffers, in a stable
    // order with unique hierarchical names.
    const std::vector<std::pair<std::string, Tensor<S>>>& parameters() const { return params_; }
    const std::vector<std::pair<std::string, Tensor<S>>>& buffers() const { return buffers_; }

    std::vector<Tensor<S>> parameter_tensors() {
        std::vector<Tensor<S>> out;
        out.reserve(params_.size());
        for (auto& [name, t] : params_) out.push_back(t);
        return out;
    }

    Tensor<S> named_tensor(const std::string& name) const {
        for (const auto& [n, t] : params_)
            if (n == name) return t;
        for (const auto& [n, t] : buffers_)
            if (n == name) return t;
        throw ValueError("model has no tensor named '" + name + "'");
    }

    void zero_grad() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    // batch [B,3,S,S] in [0,1] -> heatmaps [B,n,S/4,S/4] in (0,1).
    Tensor<S> forward(const Tensor<S>& batch, bool training = false) {
        const Shape& shp = batch.shape();
        const int s = config_.input_size;
        if (shp.size() != 4 || shp[1] != 3 || shp[2] != s || shp[3] != s)
            throw ShapeError("forward: expected [B,3," + std::to_string(s) + "," +
                             std::to_string(s) + "], got " + shape_str(shp));
        auto x = relu(norm_fwd(conv2d(batch, stem_.weight, Tensor<S>(), 2, 1), stem_norm_,
                               training));
        std::vector<Tensor<S>> stage_out;
        size_t bi = 0;
        for (int st = 0; st < config_.stages(); ++st) {
            for (int b = 0; b < config_.blocks_per_stage; ++b) x = block_fwd(blocks_[bi++], x, training);
            stage_out.push_back(x);
        }
        for (size_t d = 0; d < decoder_.size(); ++d) {
            auto up = upsample2x(x);
            auto cat = concat_channels(up, stage_out[static_cast<size_t>(config_.stages()) - 2 - d]);
            x = relu(norm_fwd(conv2d(cat, decoder_[d].weight, Tensor<S>(), 1, 1),
                              decoder_norms_[d], training));
        }
        return sigmoid(conv2d(x, head_weight_, head_bias_, 1, 0));
    }

private:
    struct Conv {
        Tensor<S> weight;  // [F,C,k,k]
        int stride = 1;
        int pad = 1;
    };
    struct Norm {
        Tensor<S> gamma, beta, running_mean, running_var;
    };
    struct Block {
        Conv conv1, conv2;
        Norm norm1, norm2;
        bool has_projection = false;
        Conv proj;
        Norm proj_norm;
    };

    ModelConfig config_;
    Conv stem_;
    Norm stem_norm_;
    std::vector<Block> blocks_;
    std::vector<Conv> decoder_;
    std::vector<Norm> decoder_norms_;
    Tensor<S> head_weight_, head_bias_;
    std::vector<std::pair<std::string, Tensor<S>>> params_;
    std::vector<std::pair<std::string, Tensor<S>>> buffers_;

    Tensor<S> he_normal(int out_ch, int in_ch, int k, std::mt19937_64& rng, double stddev = 0.0) {
        const long long fan_in = static_cast<long long>(in_ch) * k * k;
        if (stddev <= 0.0) stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        std::normal_distribution<double> dist(0.0, stddev);
        std::vector<S> data(static_cast<size_t>(out_ch) * in_ch * k * k);
        for (auto& v : data) v = static_cast<S>(dist(rng));
        return Tensor<S>::from_data({out_ch, in_ch, k, k}, std::move(data), true);
    }

    Conv make_conv(const std::string& name, int out_ch, int in_ch, int k, int stride, int pad,
                   std::mt19937_64& rng, double stddev = 0.0) {
        Conv c;
        c.weight = he_normal(out_ch, in_ch, k, rng, stddev);
        c.stride = stride;
        c.pad = pad;
        params_.emplace_back(name + ".weight", c.weight);
        return c;
    }

    Norm make_norm(const std::string& name, int ch) {
        Norm n;
        n.gamma = Tensor<S>::filled({ch}, S(1), true);
        n.beta = Tensor<S>::zeros({ch}, true);
        n.running_mean = Tensor<S>::zeros({ch});
        n.running_var = Tensor<S>::filled({ch}, S(1));
        params_.emplace_back(name + ".gamma", n.gamma);
        params_.emplace_back(name + ".beta", n.beta);
        buffers_.emplace_back(name + ".running_mean", n.running_mean);
        buffers_.emplace_back(name + ".running_var", n.running_var);
        return n;
    }

    void build(std::mt19937_64& rng) {
        const auto& ch = config_.encoder_channels;
        const int stages = config_.stages();
        stem_ = make_conv("stem.conv", ch[0], 3, 3, 2, 1, rng);
        stem_norm_ = make_norm("stem.norm", ch[0]);
        for (int st = 0; st < stages; ++st) {
            const int in_ch = st == 0 ? ch[0] : ch[static_cast<size_t>(st) - 1];
            const int out_ch = ch[static_cast<size_t>(st)];
            for (int b = 0; b < config_.blocks_per_stage; ++b) {
                const std::string base =
                    "enc" + std::to_string(st) + ".block" + std::to_string(b);
                const int bin = b == 0 ? in_ch : out_ch;
                const int stride = (st > 0 && b == 0) ? 2 : 1;
                Block blk;
                blk.conv1 = make_conv(base + ".conv1", out_ch, bin, 3, stride, 1, rng);
                blk.norm1 = make_norm(base + ".norm1", out_ch);
                blk.conv2 = make_conv(base + ".conv2", out_ch, out_ch, 3, 1, 1, rng);
                blk.norm2 = make_norm(base + ".norm2", out_ch);
                if (stride != 1 || bin != out_ch) {
                    blk.has_projection = true;
                    blk.proj = make_conv(base + ".proj", out_ch, bin, 1, stride, 0, rng);
                    blk.proj_norm = make_norm(base + ".proj_norm", out_ch);
                }
                blocks_.push_back(std::move(blk));
            }
        }
        for (int d = 0; d < stages - 2; ++d) {
            const int up_ch = ch[static_cast<size_t>(stages) - 1 - d];
            const int skip_ch = ch[static_cast<size_t>(stages) - 2 - d];
            const std::string base = "dec" + std::to_string(d);
            decoder_.push_back(make_conv(base + ".conv", skip_ch, up_ch + skip_ch, 3, 1, 1, rng));
            decoder_norms_.push_back(make_norm(base + ".norm", skip_ch));
        }
        // small head init keeps fresh models near 0.5 after the sigmoid
        head_weight_ = he_normal(config_.num_landmarks, ch[1], 1, rng, 0.01);
        head_bias_ = Tensor<S>::zeros({config_.num_landmarks}, true);
        params_.emplace_back("head.weight", head_weight_);
        params_.emplace_back("head.bias", head_bias_);
    }

    Tensor<S> norm_fwd(const Tensor<S>& x, Norm& n, bool training) {
        return batch_norm(x, n.gamma, n.beta, n.running_mean, n.running_var, training);
    }

    Tensor<S> block_fwd(Block& blk, const Tensor<S>& x, bool training) {
        auto branch = relu(norm_fwd(
            conv2d(x, blk.conv1.weight, Tensor<S>(), blk.conv1.stride, blk.conv1.pad), blk.norm1,
            training));
        branch = norm_fwd(conv2d(branch, blk.conv2.weight, Tensor<S>(), 1, 1), blk.norm2,
                          training);
        auto skip = blk.has_projection
                        ? norm_fwd(conv2d(x, blk.proj.weight, Tensor<S>(), blk.proj.stride, 0),
                                   blk.proj_norm, training)
                        : x;
        return add(skip, branch);
    }
};

using UNetF = UNet<float>;

// Binary model file: "GMRK" magic, version byte, length-prefixed JSON header
// (config + tensor manifest), raw little-endian float32 blobs.
void save_model(const UNet<float>& model, const std::string& path);
UNet<float> load_model(const std::string& path);

}  // namespace gmark
