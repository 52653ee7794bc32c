#pragma once

#include "cbmaudit/common/error.hpp"
#include "cbmaudit/core/network.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace cbmaudit::attribution {

/// Signed relevance for one input, channel-resolved (C x H x W).
struct AttributionMap {
    std::size_t channels = 0, height = 0, width = 0;
    std::vector<double> values;
    int target = 0;
    std::string method;

    std::size_t pixels() const { return height * width; }

    /// Channel-summed relevance, H x W.
    std::vector<double> summed() const
    {
        std::vector<double> out(pixels(), 0.0);
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t p = 0; p < out.size(); ++p) out[p] += values[c * pixels() + p];
        return out;
    }

    double total() const
    {
        double s = 0;
        for (double v : values) s += v;
        return s;
    }

    bool all_finite() const
    {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

/// Splits a batch tensor (N, C, H, W) into one map per sample.
template <typename T>
std::vector<AttributionMap> split_maps(const core::Tensor<T>& r, int target, const std::string& method)
{
    std::vector<AttributionMap> out;
    for (std::size_t n = 0; n < r.dim(0); ++n) {
        AttributionMap m{r.dim(1), r.dim(2), r.dim(3), {}, target, method};
        auto s = r.sample(n);
        m.values.assign(s.begin(), s.end());
        require(m.all_finite(), ErrorKind::divergence, "non-finite relevance from " + method);
        out.push_back(std::move(m));
    }
    return out;
}

/// Index of the layer that produces the pre-sigmoid score: the layer before a
/// trailing sigmoid, else the last layer.
template <typename T>
std::size_t score_layer_of(const core::Network<T>& net)
{
    require(net.size() > 0, ErrorKind::invalid_argument, "empty network");
    if (std::holds_alternative<core::Sigmoid>(net.spec(net.size() - 1))) {
        require(net.size() >= 2, ErrorKind::invalid_argument, "network is only a sigmoid");
        return net.size() - 2;
    }
    return net.size() - 1;
}

/// Raw channel-summed map as little-endian float32 rows plus a JSON sidecar.
inline void write_raw_map(const AttributionMap& map, const std::filesystem::path& base, std::uint64_t seed)
{
    const auto s = map.summed();
    std::string bytes;
    bytes.reserve(s.size() * 4);
    for (double v : s) {
        const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((u >> (8 * i)) & 0xffu));
    }
    if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());
    std::ofstream out(base.string() + ".f32", std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + base.string() + ".f32");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    const nlohmann::json side = {{"shape", {map.height, map.width}},
                                 {"method", map.method},
                                 {"target", map.target},
                                 {"seed", seed},
                                 {"dtype", "float32-le"}};
    std::ofstream js(base.string() + ".json", std::ios::binary);
    require(static_cast<bool>(js), ErrorKind::io, "cannot write " + base.string() + ".json");
    js << side.dump(1) << '\n';
}

inline std::vector<float> read_raw_map(const std::filesystem::path& f32)
{
    std::ifstream in(f32, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::io, "cannot read " + f32.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    require(bytes.size() % 4 == 0, ErrorKind::corrupt, "raw map size is not a multiple of 4: " + f32.string());
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
        out[i] = std::bit_cast<float>(u);
    }
    return out;
}

} // namespace cbmaudit::attribution
