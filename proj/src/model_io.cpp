#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmark/fsio.hpp"
#include "gmark/model.hpp"

namespace gmark {
namespace {

constexpr char kMagic[4] = {'G', 'M', 'R', 'K'};
constexpr unsigned char kVersion = 1;

using TensorList = std::vector<std::pair<std::string, Tensor<float>>>;

TensorList all_tensors(const UNet<float>& model) {
    TensorList out = model.parameters();
    const auto& bufs = model.buffers();
    out.insert(out.end(), bufs.begin(), bufs.end());
    return out;
}

}  // namespace

void save_model(const UNet<float>& model, const std::string& path) {
    const auto& cfg = model.config();
    nlohmann::json header;
    header["config"] = {{"input_size", cfg.input_size},
                        {"num_landmarks", cfg.num_landmarks},
                        {"encoder_channels", cfg.encoder_channels},
                        {"blocks_per_stage", cfg.blocks_per_stage},
                        {"seed", cfg.seed}};
    auto tensors = all_tensors(model);
    auto& manifest = header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : tensors)
        manifest.push_back({{"name", name}, {"shape", t.shape()}});
    const std::string header_text = header.dump();

    std::string blob;
    blob.reserve(64 + header_text.size());
    blob.append(kMagic, sizeof kMagic);
    blob.push_back(static_cast<char>(kVersion));
    std::uint64_t hlen = header_text.size();
    char lenbuf[8];
    std::memcpy(lenbuf, &hlen, 8);
    blob.append(lenbuf, 8);
    blob += header_text;
    for (const auto& [name, t] : tensors)
        blob.append(reinterpret_cast<const char*>(t.data().data()),
                    t.data().size() * sizeof(float));
    write_file_atomic(path, blob.data(), blob.size());
}

UNet<float> load_model(const std::string& path) {
    const auto bytes = read_file(path);
    size_t off = 0;
    auto need = [&](size_t n, const char* what) {
        if (bytes.size() - off < n)
            throw IoError(IoError::Kind::Truncated,
                          path + ": truncated while reading " + what);
    };
    need(sizeof kMagic, "magic");
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw IoError(IoError::Kind::BadMagic, path + ": not a model file (bad magic)");
    off += sizeof kMagic;
    need(1, "version");
    const unsigned char version = bytes[off++];
    if (version != kVersion)
        throw IoError(IoError::Kind::BadVersion,
                      path + ": unsupported model version " + std::to_string(version));
    need(8, "header length");
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + off, 8);
    off += 8;
    need(hlen, "header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + static_cast<long>(off),
                                       bytes.begin() + static_cast<long>(off + hlen));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::BadHeader, path + ": header is not valid JSON: " + e.what());
    }
    off += hlen;

    ModelConfig cfg;
    try {
        const auto& jc = header.at("config");
        cfg.input_size = jc.at("input_size").get<int>();
        cfg.num_landmarks = jc.at("num_landmarks").get<int>();
        cfg.encoder_channels = jc.at("encoder_channels").get<std::vector<int>>();
        cfg.blocks_per_stage = jc.at("blocks_per_stage").get<int>();
        cfg.seed = jc.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::BadHeader, path + ": bad config block: " + e.what());
    }

    UNet<float> model(cfg);
    auto tensors = all_tensors(model);
    const auto& manifest = header.at("tensors");
    if (!manifest.is_array() || manifest.size() != tensors.size())
        throw IoError(IoError::Kind::BadHeader,
                      path + ": tensor manifest does not match model layout");
    for (size_t i = 0; i < tensors.size(); ++i) {
        auto& [name, t] = tensors[i];
        const auto& entry = manifest[i];
        if (entry.at("name").get<std::string>() != name ||
            entry.at("shape").get<Shape>() != t.shape())
            throw IoError(IoError::Kind::BadHeader,
                          path + ": manifest entry " + std::to_string(i) +
                              " does not match tensor '" + name + "'");
        const size_t nbytes = t.data().size() * sizeof(float);
        need(nbytes, ("tensor '" + name + "'").c_str());
        std::memcpy(t.data().data(), bytes.data() + off, nbytes);
        off += nbytes;
    }
    if (off != bytes.size())
        throw IoError(IoError::Kind::BadData,
                      path + ": " + std::to_string(bytes.size() - off) + " trailing bytes");
    return model;
}

}  // namespace gmark
