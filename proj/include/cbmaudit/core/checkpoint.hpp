#pragma once

// Checkpoint file: magic, format version, a JSON header describing both
// networks, then raw little-endian float32 parameter and buffer blocks in
// header order.

#include "cbmaudit/common/error.hpp"
#include "cbmaudit/core/model.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace cbmaudit::core {

inline constexpr char checkpoint_magic[8] = {'C', 'B', 'M', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

inline nlohmann::json spec_to_json(const LayerSpec& spec)
{
    nlohmann::json j;
    j["type"] = layer_name(spec);
    if (auto* c = std::get_if<Conv2d>(&spec)) {
        j["in"] = c->in, j["out"] = c->out, j["kernel"] = c->kernel, j["stride"] = c->stride, j["pad"] = c->pad;
        j["bias"] = c->bias;
    } else if (auto* b = std::get_if<BatchNorm2d>(&spec)) {
        j["channels"] = b->channels, j["momentum"] = b->momentum, j["eps"] = b->eps;
    } else if (auto* p = std::get_if<MaxPool2d>(&spec)) {
        j["kernel"] = p->kernel, j["stride"] = p->stride;
    } else if (auto* f = std::get_if<Linear>(&spec)) {
        j["in"] = f->in, j["out"] = f->out, j["bias"] = f->bias;
    }
    return j;
}

inline LayerSpec spec_from_json(const nlohmann::json& j)
{
    const std::string t = j.at("type").get<std::string>();
    if (t == "Conv2d")
        return Conv2d{j.at("in"), j.at("out"), j.at("kernel"), j.at("stride"), j.at("pad"), j.at("bias")};
    if (t == "BatchNorm2d") return BatchNorm2d{j.at("channels"), j.at("momentum"), j.at("eps")};
    if (t == "ReLU") return ReLU{};
    if (t == "MaxPool2d") return MaxPool2d{j.at("kernel"), j.at("stride")};
    if (t == "Flatten") return Flatten{};
    if (t == "Linear") return Linear{j.at("in"), j.at("out"), j.at("bias")};
    if (t == "Sigmoid") return Sigmoid{};
    fail(ErrorKind::corrupt, "unknown layer type in checkpoint: " + t);
}

template <typename T>
nlohmann::json network_header(const Network<T>& net)
{
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net.layers()) {
        auto j = spec_to_json(l.spec);
        nlohmann::json blocks = nlohmann::json::array();
        for (const auto& p : l.params) blocks.push_back(p.shape());
        for (const auto& b : l.buffers) blocks.push_back(b.shape());
        j["blocks"] = blocks;
        layers.push_back(j);
    }
    return {{"role", role_name(net.role())}, {"layers", layers}};
}

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

template <typename T>
void put_block(std::string& out, const Tensor<T>& t)
{
    for (auto v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class Reader {
public:
    Reader(const std::string& data, std::string path)
        : data_(data)
        , path_(std::move(path))
    {
    }
    const char* take(std::size_t n)
    {
        if (data_.size() - pos_ < n) fail(ErrorKind::corrupt, "checkpoint truncated: " + path_);
        const char* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint64_t uint(int bytes)
    {
        const auto* p = reinterpret_cast<const unsigned char*>(take(static_cast<std::size_t>(bytes)));
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        return v;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    const std::string& data_;
    std::string path_;
    std::size_t pos_ = 0;
};

template <typename T>
Network<T> read_network(const nlohmann::json& header, Reader& in)
{
    std::vector<LayerSpec> specs;
    for (const auto& l : header.at("layers")) specs.push_back(spec_from_json(l));
    Network<T> net(specs, role_from_name(header.at("role").get<std::string>()));
    const auto& layers = header.at("layers");
    for (std::size_t i = 0; i < net.size(); ++i) {
        auto& layer = net.layers()[i];
        const auto& blocks = layers[i].at("blocks");
        require(blocks.size() == layer.params.size() + layer.buffers.size(), ErrorKind::corrupt,
                "checkpoint block count mismatch at layer " + std::to_string(i));
        std::size_t b = 0;
        auto fill = [&](Tensor<T>& t) {
            require(blocks[b++].get<Shape>() == t.shape(), ErrorKind::corrupt,
                    "checkpoint block shape mismatch at layer " + std::to_string(i));
            for (auto& v : t.values()) v = static_cast<T>(std::bit_cast<float>(static_cast<std::uint32_t>(in.uint(4))));
        };
        for (auto& p : layer.params) fill(p);
        for (auto& p : layer.buffers) fill(p);
    }
    return net;
}

} // namespace detail

template <typename T>
struct LoadedCheckpoint {
    ConceptModel<T> model;
    nlohmann::json metadata;
};

/// Writes the model and free-form metadata (e.g. the training config).
template <typename T>
void save_checkpoint(const ConceptModel<T>& model, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object())
{
    const nlohmann::json header = {{"encoder", detail::network_header(model.encoder)},
                                   {"predictor", detail::network_header(model.predictor)},
                                   {"input_shape", model.input_shape},
                                   {"metadata", metadata}};
    const std::string text = header.dump();
    std::string out(checkpoint_magic, sizeof checkpoint_magic);
    detail::put_u32(out, checkpoint_version);
    detail::put_u64(out, text.size());
    out += text;
    for (const auto* net : {&model.encoder, &model.predictor})
        for (const auto& l : net->layers()) {
            for (const auto& p : l.params) detail::put_block(out, p);
            for (const auto& b : l.buffers) detail::put_block(out, b);
        }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        require(static_cast<bool>(f), ErrorKind::io, "cannot write checkpoint " + path.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        require(static_cast<bool>(f), ErrorKind::io, "failed writing checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::io, "cannot open checkpoint " + path.string());
    const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    detail::Reader in(data, path.string());
    require(std::memcmp(in.take(sizeof checkpoint_magic), checkpoint_magic, sizeof checkpoint_magic) == 0,
            ErrorKind::corrupt, "not a checkpoint file: " + path.string());
    const auto version = in.uint(4);
    require(version == checkpoint_version, ErrorKind::corrupt,
            "unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
    const auto len = in.uint(8);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(std::string(in.take(len), len));
        LoadedCheckpoint<T> out;
        out.model.encoder = detail::read_network<T>(header.at("encoder"), in);
        out.model.predictor = detail::read_network<T>(header.at("predictor"), in);
        out.model.input_shape = header.at("input_shape").get<Shape>();
        out.metadata = header.value("metadata", nlohmann::json::object());
        require(in.done(), ErrorKind::corrupt, "trailing bytes in checkpoint " + path.string());
        out.model.validate();
        return out;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::corrupt, "malformed checkpoint header in " + path.string() + ": " + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::corrupt) throw;
        fail(ErrorKind::corrupt, "inconsistent checkpoint " + path.string() + ": " + e.what());
    }
}

} // namespace cbmaudit::core
